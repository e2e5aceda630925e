#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stitchpipe::alignment::FrameSequence;
use stitchpipe::model::{Generator, GeneratorWeights, LatentCode};
use stitchpipe::pipeline::stages::{align, edit, invert, quantize8, tune, Aligned, Edited};
use stitchpipe::pipeline::StageSettings;
use stitchpipe::pti::PivotSet;
use stitchpipe::toy::build::CLIP_FRAME_SIZE;
use stitchpipe::toy::directions::GROW_RADIUS;
use stitchpipe::toy::generator::sample_styles;
use stitchpipe::toy::scene::{make_synthetic_video, FacePalette, SyntheticVideo, TrajectorySpec};
use stitchpipe::toy::{build_toy_models, ToyModels, DEFAULT_TOY_SEED};

/// The default toy build, shared by every test in one binary.
pub fn toy() -> &'static ToyModels {
    static M: OnceLock<ToyModels> = OnceLock::new();
    M.get_or_init(|| build_toy_models(DEFAULT_TOY_SEED).expect("toy build certifies"))
}

/// Test-side streams, disjoint from the ones the certification run draws.
pub fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xACCE_0000 + stream)
}

/// A smooth clip stored on the 8-bit grid, as if read back from PNG.
pub fn clip(seed: u64, frames: usize, size: usize) -> (SyntheticVideo, FrameSequence) {
    let v = make_synthetic_video(&TrajectorySpec::random(seed, size), frames, &FacePalette::default()).unwrap();
    let seq = FrameSequence::new(v.frames.iter().map(quantize8).collect(), 0).unwrap();
    (v, seq)
}


/// Crops rendered at `θ₀` from true codes, with pivots displaced from the
/// truth by a random vector of L2 norm `offset` each.
pub fn perturbed_instance(stream: u64, n: usize, offset: f64) -> (Vec<LatentCode>, PivotSet, FrameSequence) {
    let m = toy();
    let g = m.generator.as_ref();
    let mut r = rng(stream);
    let truth: Vec<LatentCode> = (0..n).map(|_| g.map_styles(&sample_styles(&mut r))).collect();
    let crops = FrameSequence::new(truth.iter().map(|w| g.generate(w, &m.theta0).unwrap()).collect(), 0).unwrap();
    let pivots = truth
        .iter()
        .map(|w| {
            let d = LatentCode::from_vec(w.layers(), w.dim(), (0..w.data().len()).map(|_| r.random_range(-1.0..1.0)).collect())
                .unwrap();
            w.add_scaled(&d, offset / d.norm()).unwrap()
        })
        .collect();
    let hashes = crops.frames.iter().map(|c| c.content_hash()).collect();
    (truth, PivotSet::new(pivots, hashes).unwrap(), crops)
}

/// Mean per-frame MSE between `G(pivot; θ)` and its crop.
pub fn mean_recon_mse(theta: &GeneratorWeights, pivots: &PivotSet, crops: &FrameSequence) -> f64 {
    let g = toy().generator.as_ref();
    let s: f64 = pivots
        .pivots
        .iter()
        .zip(&crops.frames)
        .map(|(w, c)| g.generate(w, theta).unwrap().mse(c).unwrap())
        .sum();
    s / crops.len() as f64
}

/// A clip carried through alignment, inversion, tuning and editing.
pub struct EditedClip {
    pub video: SyntheticVideo,
    pub frames: FrameSequence,
    pub aligned: Aligned,
    pub pivots: PivotSet,
    pub theta_p: GeneratorWeights,
    pub edited: Edited,
}

/// Seeds of the fixed clip suite stitching is measured on.
pub const SUITE_SEEDS: [u64; 3] = [500, 501, 502];

pub fn edited_clip(seed: u64, frames: usize, settings: &StageSettings) -> EditedClip {
    let m = toy();
    let backend = m.backend();
    let (video, seq) = clip(seed, frames, CLIP_FRAME_SIZE);
    let aligned = align(&seq, &video.landmarks, &settings.align).unwrap();
    let pivots = invert(&backend, &aligned.crops, settings).unwrap();
    let (theta_p, _) = tune(&backend, &pivots, &aligned.crops, settings).unwrap();
    let d = m.direction(GROW_RADIUS).unwrap();
    let edited = edit(&backend, &theta_p, &pivots, d, settings).unwrap();
    EditedClip {
        video,
        frames: seq,
        aligned,
        pivots,
        theta_p,
        edited,
    }
}
