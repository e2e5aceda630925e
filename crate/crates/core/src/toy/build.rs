//! Building, certifying, saving and loading the toy backend.
//!
//! The certificate is measured on samples drawn from streams of the build
//! seed that tests never reuse, and every bound carries [`CERT_MARGIN`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::directions::{toy_directions, GROW_RADIUS};
use super::embedder::ToyEmbedder;
use super::encoder::{EncoderFitConfig, ToyEncoder};
use super::generator::{sample_styles, CropScene, ToyGenerator, BACKEND_ID, LATENT_DIM, LAYERS, RESOLUTION};
use super::perceptual::RandomConvPerceptual;
use super::scene::{make_synthetic_video, render_frame, FacePalette, ToySceneParams, TrajectorySpec};
use super::segmenter::ToySegmenter;
use crate::alignment::FrameSequence;
use crate::editing::{load_direction, save_direction, EditDirection};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{read_json, read_weight_blob, write_frames_dir, write_json, write_landmarks, write_weight_blob};
use crate::metrics::pair_similarity;
use crate::model::{Backend, BackendManifest, Encoder, Generator, GeneratorWeights, IdentityEmbedder, LatentCode, PerceptualDistance, Segmenter};
use crate::pipeline::stages::{run_clip, StageSettings};
use crate::pipeline::PipelineConfig;
use crate::seed::derive_seed;
use crate::stitching::blend_weights;

pub const DEFAULT_TOY_SEED: u64 = 7;
/// Factor between measured worst cases and certified bounds.
pub const CERT_MARGIN: f64 = 1.5;
pub const MONOTONE_STRENGTHS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
/// Identity pairs with true cosine below this count as different people.
pub const DIFFERENT_IDENTITY_COSINE: f64 = 0.8;
/// Frame size of certification and demo clips.
pub const CLIP_FRAME_SIZE: usize = 96;

const RECON_SAMPLES: usize = 500;
const LIPSCHITZ_PAIRS: usize = 1000;
const NOISE_LEVELS: [f64; 4] = [0.005, 0.01, 0.02, 0.04];
const IDENTITY_PAIRS: usize = 100;
const MONOTONE_SCENES: usize = 50;
const AREA_SAMPLES: usize = 100;
const PERCEPTUAL_PAIRS: usize = 100;
const RENDER_PAIRS: usize = 100;
const SMOOTHNESS_CLIPS: usize = 3;
const CLIP_FRAMES: usize = 8;
const ROUNDTRIP_FRAMES: usize = 6;

const STREAM_ENCODER: u64 = 1;
const STREAM_RECON: u64 = 2;
const STREAM_LIPSCHITZ: u64 = 3;
const STREAM_IDENTITY: u64 = 4;
const STREAM_MONOTONE: u64 = 5;
const STREAM_AREA: u64 = 6;
const STREAM_PERCEPTUAL: u64 = 7;
const STREAM_RENDER: u64 = 8;
const STREAM_SMOOTH: u64 = 9;
const STREAM_ROUNDTRIP: u64 = 10;

/// Measured properties of one toy build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCertificate {
    pub seed: u64,
    pub theta0_hash: String,
    pub encoder_hash: String,
    /// Content hash of `G(0; θ₀)`, the canonical scene.
    pub canonical_image_hash: String,

    /// Worst `‖E(G(w;θ₀)) − w‖∞` over the certification samples.
    pub recon_code_error: f64,
    pub recon_code_bound: f64,
    /// `‖E(x+n) − E(x)‖₂ ≤ K·ε` for noise `n` uniform in `[−ε, ε]`.
    pub lipschitz_k: f64,
    /// Adjacent encoder-pivot distance per unit of adjacent ground-truth
    /// code distance on smooth clips.
    pub pivot_smoothness_k: f64,

    pub identity_same_min: f64,
    pub identity_different_max: f64,
    pub identity_separation_threshold: f64,

    pub monotone_direction: String,
    pub monotone_fraction: f64,
    pub monotone_verified: bool,

    pub segmenter_max_area_error: f64,
    pub perceptual_violation_rate: f64,
    /// `√MSE` between synthetic frames per unit of scene-parameter change.
    pub render_lipschitz: f64,
    /// Worst per-pixel deviation inside the face mask after a zero-strength
    /// run of the full pipeline.
    pub recon_pixel_error: f64,
    pub recon_pixel_bound: f64,
}

impl ToyCertificate {
    /// The pass conditions of a build.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Certification(m));
        let bounds = [
            self.recon_code_bound,
            self.lipschitz_k,
            self.pivot_smoothness_k,
            self.render_lipschitz,
            self.recon_pixel_bound,
        ];
        if bounds.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return fail("certified bounds must be finite and positive".into());
        }
        if !self.monotone_verified || self.monotone_fraction < 0.9 {
            return fail(format!(
                "direction `{}` is monotone on only {:.0}% of scenes",
                self.monotone_direction,
                100.0 * self.monotone_fraction
            ));
        }
        if self.identity_same_min <= self.identity_different_max {
            return fail(format!(
                "identity embeddings overlap: same ≥ {:.4}, different ≤ {:.4}",
                self.identity_same_min, self.identity_different_max
            ));
        }
        if self.segmenter_max_area_error > 0.02 {
            return fail(format!(
                "segmenter area error {:.4} exceeds 2%",
                self.segmenter_max_area_error
            ));
        }
        if self.perceptual_violation_rate >= 0.01 {
            return fail(format!(
                "perceptual distance not monotone under blending on {:.1}% of pairs",
                100.0 * self.perceptual_violation_rate
            ));
        }
        Ok(())
    }

    pub fn to_map(&self) -> serde_json::Map<String, serde_json::Value> {
        match serde_json::to_value(self).expect("certificate serializes") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("certificate is a struct"),
        }
    }

    pub fn from_map(m: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        serde_json::from_value(serde_json::Value::Object(m.clone()))
            .map_err(|e| Error::Certification(format!("manifest certificate is malformed: {e}")))
    }
}

/// Every toy component together with its certificate.
#[derive(Clone, Debug)]
pub struct ToyModels {
    pub generator: Arc<ToyGenerator>,
    pub theta0: GeneratorWeights,
    pub encoder: Arc<ToyEncoder>,
    pub segmenter: ToySegmenter,
    pub embedder: ToyEmbedder,
    pub perceptual: RandomConvPerceptual,
    pub directions: Vec<EditDirection>,
    pub certificate: ToyCertificate,
}

impl ToyModels {
    pub fn manifest(&self) -> BackendManifest {
        BackendManifest {
            backend_id: BACKEND_ID.into(),
            latent_layers: LAYERS,
            latent_dim: LATENT_DIM,
            resolution: RESOLUTION,
            certified_bounds: self.certificate.to_map(),
        }
    }

    pub fn backend(&self) -> Backend {
        backend_of(self, self.manifest())
    }

    pub fn direction(&self, name: &str) -> Option<&EditDirection> {
        self.directions.iter().find(|d| d.name == name)
    }
}

fn backend_of(m: &ToyModels, manifest: BackendManifest) -> Backend {
    Backend {
        manifest,
        generator: m.generator.clone(),
        encoder: m.encoder.clone(),
        segmenter: Arc::new(m.segmenter),
        embedder: Arc::new(m.embedder.clone()),
        perceptual: Arc::new(m.perceptual.clone()),
        theta0: m.theta0.clone(),
    }
}

fn round_direction(d: EditDirection) -> Result<EditDirection> {
    let (l, dim) = d.delta.shape();
    let data = d.delta.data().iter().map(|&v| v as f32 as f64).collect();
    EditDirection::new(d.name, LatentCode::from_vec(l, dim, data)?, d.default_strength, d.layer_mask)
}

/// Build and certify. Fails with a certification error when a bound is not met.
pub fn build_toy_models(seed: u64) -> Result<ToyModels> {
    let (generator, theta0) = ToyGenerator::new(seed);
    let encoder = ToyEncoder::fit(&generator, &theta0, derive_seed(seed, STREAM_ENCODER), &EncoderFitConfig::default())?;
    let directions = toy_directions(&generator)?
        .into_iter()
        .map(round_direction)
        .collect::<Result<Vec<_>>>()?;
    let mut models = ToyModels {
        generator: Arc::new(generator),
        theta0,
        encoder: Arc::new(encoder),
        segmenter: ToySegmenter::default(),
        embedder: ToyEmbedder::default(),
        perceptual: RandomConvPerceptual::default(),
        directions,
        certificate: placeholder_certificate(seed),
    };
    models.certificate = certify(&models, seed)?;
    models.certificate.check()?;
    Ok(models)
}

fn placeholder_certificate(seed: u64) -> ToyCertificate {
    ToyCertificate {
        seed,
        theta0_hash: String::new(),
        encoder_hash: String::new(),
        canonical_image_hash: String::new(),
        recon_code_error: 0.0,
        recon_code_bound: 0.0,
        lipschitz_k: 0.0,
        pivot_smoothness_k: 0.0,
        identity_same_min: 0.0,
        identity_different_max: 0.0,
        identity_separation_threshold: 0.0,
        monotone_direction: String::new(),
        monotone_fraction: 0.0,
        monotone_verified: false,
        segmenter_max_area_error: 0.0,
        perceptual_violation_rate: 0.0,
        render_lipschitz: 0.0,
        recon_pixel_error: 0.0,
        recon_pixel_bound: 0.0,
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

fn certify(m: &ToyModels, seed: u64) -> Result<ToyCertificate> {
    let mut c = placeholder_certificate(seed);
    c.theta0_hash = m.theta0.params.content_hash();
    c.encoder_hash = m.encoder.params().content_hash();
    c.canonical_image_hash = m.generator.generate(&m.generator.mean_code(), &m.theta0)?.content_hash();

    c.recon_code_error = recon_code_error(m, &mut rng_for(seed, STREAM_RECON), RECON_SAMPLES)?;
    c.recon_code_bound = CERT_MARGIN * c.recon_code_error;
    c.lipschitz_k = CERT_MARGIN * encoder_lipschitz(m, &mut rng_for(seed, STREAM_LIPSCHITZ))?;
    c.pivot_smoothness_k = CERT_MARGIN * pivot_smoothness(m, seed)?;

    let (same, diff) = identity_separation(m, &mut rng_for(seed, STREAM_IDENTITY))?;
    c.identity_same_min = same;
    c.identity_different_max = diff;
    c.identity_separation_threshold = 0.5 * (same + diff);

    let grow = m
        .direction(GROW_RADIUS)
        .ok_or_else(|| Error::Certification("grow-radius direction missing".into()))?;
    c.monotone_direction = GROW_RADIUS.into();
    c.monotone_fraction = monotone_fraction(m, grow, &mut rng_for(seed, STREAM_MONOTONE), MONOTONE_SCENES)?;
    c.monotone_verified = c.monotone_fraction >= 0.9;

    c.segmenter_max_area_error = segmenter_area_error(m, &mut rng_for(seed, STREAM_AREA), AREA_SAMPLES)?;
    c.perceptual_violation_rate = perceptual_violations(m, &mut rng_for(seed, STREAM_PERCEPTUAL))?;
    c.render_lipschitz = CERT_MARGIN * render_lipschitz(&mut rng_for(seed, STREAM_RENDER))?;

    // the remaining measurement runs the pipeline, which needs a backend
    let mut partial = c.clone();
    partial.recon_pixel_bound = 1.0;
    let backend = backend_of(m, BackendManifest {
        certified_bounds: partial.to_map(),
        ..m.manifest()
    });
    c.recon_pixel_error = roundtrip_pixel_error(&backend, m, derive_seed(seed, STREAM_ROUNDTRIP))?;
    c.recon_pixel_bound = CERT_MARGIN * c.recon_pixel_error;
    Ok(c)
}

/// Worst `‖E(G(w;θ₀)) − w‖∞` over `n` in-distribution codes.
pub fn recon_code_error(m: &ToyModels, rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let w = m.generator.map_styles(&sample_styles(rng));
        let x = m.generator.generate(&w, &m.theta0)?;
        worst = worst.max(m.encoder.encode(&x)?.max_abs_diff(&w));
    }
    Ok(worst)
}

/// `x + n` with `n` uniform in `[−ε, ε]`, clamped to `[0, 1]`.
pub fn add_uniform_noise(x: &Image, eps: f64, rng: &mut impl Rng) -> Image {
    let data = x.data().iter().map(|v| (v + rng.random_range(-eps..=eps)).clamp(0.0, 1.0)).collect();
    Image::from_vec(x.height(), x.width(), x.channels(), data).expect("same shape")
}

fn encoder_lipschitz(m: &ToyModels, rng: &mut impl Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let per_image = NOISE_LEVELS.len();
    for _ in 0..LIPSCHITZ_PAIRS / per_image {
        let w = m.generator.map_styles(&sample_styles(rng));
        let x = m.generator.generate(&w, &m.theta0)?;
        let base = m.encoder.encode(&x)?;
        for eps in NOISE_LEVELS {
            let code = m.encoder.encode(&add_uniform_noise(&x, eps, rng))?;
            worst = worst.max(code.distance(&base) / eps);
        }
    }
    Ok(worst)
}

/// Ground-truth codes of the crops a clip produces under the pipeline's
/// own (smoothed) alignment.
pub fn ground_truth_codes(
    g: &ToyGenerator,
    scenes: &[ToySceneParams],
    transforms: &[crate::alignment::AlignTransform],
) -> Result<Vec<LatentCode>> {
    scenes
        .iter()
        .zip(transforms)
        .map(|(s, t)| Ok(g.map_styles(&CropScene::from_frame_scene(s, t)?.to_styles())))
        .collect()
}

fn max_adjacent(codes: &[LatentCode]) -> f64 {
    codes.windows(2).map(|p| p[0].distance(&p[1])).fold(0.0, f64::max)
}

fn pivot_smoothness(m: &ToyModels, seed: u64) -> Result<f64> {
    let settings = StageSettings::default();
    let mut worst: f64 = 0.0;
    for k in 0..SMOOTHNESS_CLIPS {
        let spec = TrajectorySpec::random(derive_seed(derive_seed(seed, STREAM_SMOOTH), k as u64), CLIP_FRAME_SIZE);
        let v = make_synthetic_video(&spec, CLIP_FRAMES, &FacePalette::default())?;
        let frames = FrameSequence::new(v.frames, 0)?;
        let aligned = crate::pipeline::stages::align(&frames, &v.landmarks, &settings.align)?;
        let pivots: Vec<LatentCode> = aligned
            .crops
            .frames
            .iter()
            .map(|c| m.encoder.encode(c))
            .collect::<Result<_>>()?;
        let gt = ground_truth_codes(&m.generator, &v.scenes, &aligned.transforms)?;
        let gt_step = max_adjacent(&gt);
        if gt_step > 1e-9 {
            worst = worst.max(max_adjacent(&pivots) / gt_step);
        }
    }
    Ok(worst)
}

/// Styles of a random scene, and another with the same identity.
fn same_identity_pair(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let a = sample_styles(rng);
    let mut b = sample_styles(rng);
    b[7..11].copy_from_slice(&a[7..11]);
    (a, b)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn identity_separation(m: &ToyModels, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let g = m.generator.as_ref();
    let render = |s: &[f64]| g.generate(&g.map_styles(s), &m.theta0);
    let (mut same, mut diff) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..IDENTITY_PAIRS {
        let (a, b) = same_identity_pair(rng);
        let ea = m.embedder.embed(&render(&a)?)?;
        same = same.min(pair_similarity(&ea, &m.embedder.embed(&render(&b)?)?));
        let c = loop {
            let c = sample_styles(rng);
            if cosine(&a[7..11], &c[7..11]) < DIFFERENT_IDENTITY_COSINE {
                break c;
            }
        };
        diff = diff.max(pair_similarity(&ea, &m.embedder.embed(&render(&c)?)?));
    }
    Ok((same, diff))
}

/// Fraction of scenes whose segmented area strictly increases along
/// [`MONOTONE_STRENGTHS`].
pub fn monotone_fraction(m: &ToyModels, d: &EditDirection, rng: &mut impl Rng, scenes: usize) -> Result<f64> {
    let mut ok = 0usize;
    for _ in 0..scenes {
        let w = m.generator.map_styles(&sample_styles(rng));
        let areas = MONOTONE_STRENGTHS
            .iter()
            .map(|&k| Ok(m.segmenter.segment(&m.generator.generate(&d.apply(&w, k)?, &m.theta0)?).count()))
            .collect::<Result<Vec<_>>>()?;
        if areas.windows(2).all(|p| p[1] > p[0]) {
            ok += 1;
        }
    }
    Ok(ok as f64 / scenes.max(1) as f64)
}

fn segmenter_area_error(m: &ToyModels, rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = sample_styles(rng);
        let img = m.generator.generate(&m.generator.map_styles(&s), &m.theta0)?;
        let p = CropScene::from_styles(&s).placement;
        let area = std::f64::consts::PI * p.radii[0] * p.radii[1];
        worst = worst.max((m.segmenter.segment(&img).count() as f64 - area).abs() / area);
    }
    Ok(worst)
}

fn perceptual_violations(m: &ToyModels, rng: &mut impl Rng) -> Result<f64> {
    let g = m.generator.as_ref();
    let mut bad = 0usize;
    for _ in 0..PERCEPTUAL_PAIRS {
        let a = g.generate(&g.map_styles(&sample_styles(rng)), &m.theta0)?;
        let b = g.generate(&g.map_styles(&sample_styles(rng)), &m.theta0)?;
        let d = [0.0, 0.25, 0.5, 1.0]
            .iter()
            .map(|&t| m.perceptual.distance(&a, &a.lerp(&b, t)?))
            .collect::<Result<Vec<_>>>()?;
        if d.windows(2).any(|p| p[1] < p[0]) {
            bad += 1;
        }
    }
    Ok(bad as f64 / PERCEPTUAL_PAIRS as f64)
}

/// `‖p − q‖₂` over the continuous scene coordinates.
pub fn scene_distance(p: &ToySceneParams, q: &ToySceneParams) -> f64 {
    p.to_vector()
        .iter()
        .zip(q.to_vector())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn render_lipschitz(rng: &mut impl Rng) -> Result<f64> {
    let pal = FacePalette::default();
    let n = CLIP_FRAME_SIZE;
    let mut worst: f64 = 0.0;
    for _ in 0..RENDER_PAIRS {
        let p = ToySceneParams::random(rng, n);
        let mut far = ToySceneParams::random(rng, n);
        far.background_seed = p.background_seed;
        let q = p.lerp(&far, rng.random_range(0.01..0.1));
        let dist = scene_distance(&p, &q);
        if dist < 1e-9 {
            continue;
        }
        let mse = render_frame(&p, n, n, &pal).mse(&render_frame(&q, n, n, &pal))?;
        worst = worst.max(mse.sqrt() / dist);
    }
    Ok(worst)
}

/// Frame pixels fully covered by the warped face mask of each frame.
pub fn interior_weights(run: &crate::pipeline::stages::ClipRun, hw: (usize, usize)) -> Result<Vec<Image>> {
    run.edited
        .masks
        .iter()
        .zip(&run.aligned.transforms)
        .map(|(m, t)| blend_weights(&m.m, t, hw, 0.0))
        .collect()
}

/// Worst `|out − x|` over frame pixels fully inside the warped face mask.
pub fn max_deviation_inside(run: &crate::pipeline::stages::ClipRun, original: &FrameSequence) -> Result<f64> {
    let first = &original.frames[0];
    let weights = interior_weights(run, (first.height(), first.width()))?;
    let c = first.channels();
    let mut worst: f64 = 0.0;
    for ((out, x), w) in run.frames.frames.iter().zip(&original.frames).zip(&weights) {
        for (p, &a) in w.data().iter().enumerate() {
            if a < 1.0 {
                continue;
            }
            for ch in 0..c {
                worst = worst.max((out.data()[p * c + ch] - x.data()[p * c + ch]).abs());
            }
        }
    }
    Ok(worst)
}

fn roundtrip_pixel_error(backend: &Backend, m: &ToyModels, clip_seed: u64) -> Result<f64> {
    let spec = TrajectorySpec::random(clip_seed, CLIP_FRAME_SIZE);
    let v = make_synthetic_video(&spec, ROUNDTRIP_FRAMES, &FacePalette::default())?;
    let frames = FrameSequence::new(v.frames.iter().map(crate::pipeline::stages::quantize8).collect(), 0)?;
    let settings = StageSettings {
        strength: Some(0.0),
        ..StageSettings::default()
    };
    let d = m
        .direction(GROW_RADIUS)
        .ok_or_else(|| Error::Certification("grow-radius direction missing".into()))?;
    let run = run_clip(backend, &frames, &v.landmarks, d, &settings)?;
    max_deviation_inside(&run, &frames)
}

pub const CLIP_FRAMES_DIR: &str = "frames";
pub const CLIP_LANDMARKS: &str = "landmarks.json";
pub const CLIP_CONFIG: &str = "cfg.json";

/// Write a random smooth clip to `out` (frames, landmarks, scene parameters)
/// with a run config pointing at the backend saved in `backend_dir`.
/// Returns the config path.
pub fn write_toy_clip(out: &Path, backend_dir: &Path, seed: u64, frames: usize, direction: &str) -> Result<PathBuf> {
    let spec = TrajectorySpec::random(seed, CLIP_FRAME_SIZE);
    let v = make_synthetic_video(&spec, frames, &FacePalette::default())?;
    write_frames_dir(&out.join(CLIP_FRAMES_DIR), &FrameSequence::new(v.frames, 0)?)?;
    write_landmarks(&out.join(CLIP_LANDMARKS), &v.landmarks)?;
    write_json(&out.join("scenes.json"), &v.scenes)?;
    let backend = std::path::absolute(backend_dir).map_err(|e| Error::io(backend_dir, e))?;
    let cfg = PipelineConfig {
        frames_dir: CLIP_FRAMES_DIR.into(),
        landmarks: CLIP_LANDMARKS.into(),
        direction: backend.join(DIRECTIONS).join(direction),
        backend,
        workdir: "work".into(),
        align: Default::default(),
        pti: Default::default(),
        stitch: Default::default(),
        inversion: Default::default(),
        strength: None,
        ablation: Default::default(),
        seed,
    };
    let path = out.join(CLIP_CONFIG);
    write_json(&path, &cfg)?;
    Ok(path)
}

const THETA0_STEM: &str = "theta0";
const ENCODER_STEM: &str = "encoder";
const MANIFEST: &str = "manifest.json";
const DIRECTIONS: &str = "directions";

pub fn save_toy_models(m: &ToyModels, dir: &Path) -> Result<()> {
    write_json(&dir.join(MANIFEST), &m.manifest())?;
    write_weight_blob(&dir.join(THETA0_STEM), &m.theta0.params)?;
    write_weight_blob(&dir.join(ENCODER_STEM), m.encoder.params())?;
    for d in &m.directions {
        save_direction(&dir.join(DIRECTIONS).join(&d.name), d)?;
    }
    Ok(())
}

/// Load a saved build, checking the weights against the certificate.
pub fn load_toy_models(dir: &Path) -> Result<ToyModels> {
    let manifest: BackendManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.backend_id != BACKEND_ID {
        return Err(Error::Contract(format!(
            "{} holds backend `{}`, not `{BACKEND_ID}`",
            dir.display(),
            manifest.backend_id
        )));
    }
    if (manifest.latent_layers, manifest.latent_dim, manifest.resolution) != (LAYERS, LATENT_DIM, RESOLUTION) {
        return Err(Error::Contract("toy manifest dimensions do not match this build".into()));
    }
    let cert = ToyCertificate::from_map(&manifest.certified_bounds)?;
    cert.check()?;
    let (generator, theta0) = ToyGenerator::new(cert.seed);
    let stored = read_weight_blob(&dir.join(THETA0_STEM))?;
    if stored.content_hash() != cert.theta0_hash || theta0.params.content_hash() != cert.theta0_hash {
        return Err(Error::Certification(
            "generator weights do not match the certificate".into(),
        ));
    }
    if generator.generate(&generator.mean_code(), &theta0)?.content_hash() != cert.canonical_image_hash {
        return Err(Error::Certification("canonical scene does not match the certificate".into()));
    }
    let encoder = ToyEncoder::from_params(read_weight_blob(&dir.join(ENCODER_STEM))?)?;
    if encoder.params().content_hash() != cert.encoder_hash {
        return Err(Error::Certification("encoder weights do not match the certificate".into()));
    }
    let directions = toy_directions(&generator)?
        .iter()
        .map(|d| load_direction(&dir.join(DIRECTIONS).join(&d.name)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyModels {
        generator: Arc::new(generator),
        theta0,
        encoder: Arc::new(encoder),
        segmenter: ToySegmenter::default(),
        embedder: ToyEmbedder::default(),
        perceptual: RandomConvPerceptual::default(),
        directions,
        certificate: cert,
    })
}
