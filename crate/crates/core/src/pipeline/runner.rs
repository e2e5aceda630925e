//! On-disk stage runner. Every stage owns `workdir/<stage>/`; the manifest
//! at `workdir/manifest.json` records, per stage, the hash of everything it
//! read and the hash of everything it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stages::{self, Edited, StageSettings};
use super::{PipelineConfig, Stage};
use crate::alignment::{AlignTransform, FrameSequence};
use crate::editing::{apply_direction, direction_meta_path, direction_stem, load_direction};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{
    frame_file_name, list_frames, read_bytes, read_frames_dir, read_images, read_json, read_landmarks, read_latents,
    read_mask_png, read_transforms, read_weight_blob, write_csv, write_frames_dir, write_images, write_json,
    write_landmarks, write_latents, write_mask_png, write_transforms, write_weight_blob,
};
use crate::metrics::MetricReport;
use crate::model::{Backend, GeneratorWeights, LatentCode};
use crate::pti::PivotSet;
use crate::stitching::MaskSet;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: Stage,
    pub input_hash: String,
    /// Relative to the work directory, sorted.
    pub outputs: Vec<PathBuf>,
    pub output_hash: String,
    /// Generator weights the outputs were computed with.
    pub version_tag: String,
}

/// Config snapshot, seeds and weight tags of a complete run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: PipelineConfig,
    pub run_seed: u64,
    pub pti_seed: u64,
    pub inversion_seed: u64,
    pub backend_tag: String,
    pub theta0_tag: String,
    pub theta_p_tag: String,
    pub stages: Vec<Stage>,
    pub final_frames: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<Stage, StageArtifact>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl RunManifest {
    pub fn load(workdir: &Path) -> Result<Self> {
        let p = workdir.join(MANIFEST_FILE);
        if p.is_file() {
            read_json(&p)
        } else {
            Ok(RunManifest::default())
        }
    }

    fn save(&self, workdir: &Path) -> Result<()> {
        write_json(&workdir.join(MANIFEST_FILE), self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub artifact: StageArtifact,
    /// True when the stored outputs were reused.
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub frames: FrameSequence,
    pub report: MetricReport,
    pub outcomes: Vec<StageOutcome>,
    pub manifest: RunManifest,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    settings: StageSettings,
    backend: &'a Backend,
    backend_tag: String,
    work: &'a Path,
}

fn hex_digest(h: Sha256) -> String {
    hex::encode(h.finalize())
}

/// Hash of the backend: its manifest and the initial weights' tag.
pub fn backend_tag(backend: &Backend) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&backend.manifest).expect("manifest serializes"));
    h.update(backend.theta0.version_tag.as_bytes());
    hex_digest(h)
}

fn hash_files(h: &mut Sha256, root: &Path, files: &[PathBuf]) -> Result<()> {
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        let bytes = read_bytes(&root.join(f))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(())
}

fn frames_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for (n, p) in list_frames(dir)? {
        h.update((n as u64).to_le_bytes());
        h.update(read_bytes(&p)?);
    }
    Ok(hex_digest(h))
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("settings serialize")
}

impl Ctx<'_> {
    fn dir(&self, s: Stage) -> PathBuf {
        self.work.join(s.name())
    }

    /// What a stage reads besides its upstream stages' outputs.
    fn own_inputs(&self, stage: Stage, h: &mut Sha256) -> Result<()> {
        let s = &self.settings;
        match stage {
            Stage::Align => {
                h.update(frames_hash(&self.cfg.frames_dir)?);
                h.update(read_bytes(&self.cfg.landmarks)?);
                h.update(json_bytes(&s.align));
            }
            Stage::Invert => {
                h.update([s.ablation.no_encoder as u8]);
                if s.ablation.no_encoder {
                    h.update(json_bytes(&s.inversion_config()));
                }
            }
            Stage::Tune => h.update(json_bytes(&s.pti_config())),
            Stage::Edit => {
                let stem = direction_stem(&self.cfg.direction);
                h.update(read_bytes(&stem.with_extension("bin"))?);
                h.update(read_bytes(&stem.with_extension("json"))?);
                h.update(read_bytes(&direction_meta_path(&stem))?);
                h.update(json_bytes(&s.strength));
                h.update(json_bytes(&s.stitch.dilation_radius));
                h.update([s.ablation.no_pti as u8]);
            }
            Stage::Stitch => h.update(json_bytes(&s.stitch)),
            Stage::Compose => {
                h.update(frames_hash(&self.cfg.frames_dir)?);
                h.update(json_bytes(&s.stitch.feather_sigma));
                h.update([s.ablation.no_stitch as u8]);
            }
            Stage::Metrics => h.update(frames_hash(&self.cfg.frames_dir)?),
        }
        Ok(())
    }

    /// Input hash from the upstream stages' recorded outputs. Missing
    /// upstream stages are a dependency error naming `requester`.
    fn input_hash(&self, stage: Stage, manifest: &RunManifest, requester: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name());
        h.update(&self.backend_tag);
        for dep in stage.dependencies(&self.settings.ablation) {
            let a = manifest.stages.get(&dep).ok_or_else(|| Error::Dependency {
                stage: requester.name().into(),
                missing: dep.name().into(),
            })?;
            h.update(dep.name());
            h.update(&a.output_hash);
        }
        self.own_inputs(stage, &mut h)?;
        Ok(hex_digest(h))
    }

    fn outputs_hash(&self, outputs: &[PathBuf]) -> Result<String> {
        let mut h = Sha256::new();
        hash_files(&mut h, self.work, outputs)?;
        Ok(hex_digest(h))
    }

    fn outputs_intact(&self, a: &StageArtifact) -> bool {
        a.outputs.iter().all(|p| self.work.join(p).is_file())
            && self.outputs_hash(&a.outputs).is_ok_and(|h| h == a.output_hash)
    }

    /// Every upstream stage has run, its outputs are untouched and its
    /// inputs are unchanged since.
    fn check_upstream(&self, stage: Stage, manifest: &RunManifest) -> Result<()> {
        for dep in stage.dependencies(&self.settings.ablation) {
            let a = manifest.stages.get(&dep).ok_or_else(|| Error::Dependency {
                stage: stage.name().into(),
                missing: dep.name().into(),
            })?;
            self.check_upstream(dep, manifest)?;
            if !self.outputs_intact(a) {
                return Err(Error::StaleCache {
                    stage: dep.name().into(),
                    reason: "its outputs were modified or removed; re-run it".into(),
                });
            }
            if self.input_hash(dep, manifest, stage)? != a.input_hash {
                return Err(Error::StaleCache {
                    stage: dep.name().into(),
                    reason: "its inputs or settings changed since it ran; re-run it".into(),
                });
            }
        }
        Ok(())
    }

    fn crop_size(&self) -> usize {
        self.settings.align.crop_size
    }

    fn crops(&self) -> Result<FrameSequence> {
        FrameSequence::new(read_images(&self.dir(Stage::Align).join("crops"))?, 0)
    }

    fn transforms(&self) -> Result<Vec<AlignTransform>> {
        read_transforms(&self.dir(Stage::Align).join("transforms.json"), self.crop_size())
    }

    fn pivots(&self) -> Result<PivotSet> {
        let d = self.dir(Stage::Invert);
        PivotSet::new(read_latents(&d.join("pivots"))?, read_json(&d.join("crop_hashes.json"))?)
    }

    fn theta_p(&self) -> Result<GeneratorWeights> {
        if self.settings.ablation.no_pti {
            return Ok(self.backend.theta0.clone());
        }
        let d = self.dir(Stage::Tune);
        let w = self.backend.theta0.derive("pti", read_weight_blob(&d.join("theta_p"))?)?;
        let info: TuneInfo = read_json(&d.join("tune.json"))?;
        if info.version_tag != w.version_tag {
            return Err(Error::StaleCache {
                stage: Stage::Tune.name().into(),
                reason: "tuned weights do not match their recorded tag".into(),
            });
        }
        Ok(w)
    }

    fn edited(&self) -> Result<Edited> {
        let d = self.dir(Stage::Edit);
        let codes = read_latents(&d.join("edited_pivots"))?;
        let crops = FrameSequence::new(read_images(&d.join("edits"))?, 0)?;
        let hashes = crops.frames.iter().map(Image::content_hash).collect();
        let masks = (0..crops.len())
            .map(|i| {
                let name = frame_file_name(i);
                MaskSet::new(
                    read_mask_png(&d.join("m").join(&name))?,
                    read_mask_png(&d.join("m_d").join(&name))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Edited {
            pivots: PivotSet::new(codes, hashes)?,
            crops,
            masks,
        })
    }

    fn execute(&self, stage: Stage) -> Result<String> {
        let dir = self.dir(stage);
        let b = self.backend;
        let s = &self.settings;
        match stage {
            Stage::Align => {
                let frames = read_frames_dir(&self.cfg.frames_dir)?;
                let track = read_landmarks(&self.cfg.landmarks)?;
                let a = stages::align(&frames, &track, &s.align)?;
                write_transforms(&dir.join("transforms.json"), &a.transforms)?;
                write_landmarks(&dir.join("smoothed_landmarks.json"), &a.smoothed)?;
                write_images(&dir.join("crops"), "crops", &a.crops.frames)?;
                Ok(b.theta0.version_tag.clone())
            }
            Stage::Invert => {
                let crops = self.crops()?;
                let p = stages::invert(b, &crops, s)?;
                write_latents(&dir.join("pivots"), "pivots", &p.pivots)?;
                write_json(&dir.join("crop_hashes.json"), &p.source_crop_hashes)?;
                Ok(b.theta0.version_tag.clone())
            }
            Stage::Tune => {
                let crops = self.crops()?;
                let pivots = self.pivots()?;
                let fresh: Vec<String> = crops.frames.iter().map(Image::content_hash).collect();
                if fresh != pivots.source_crop_hashes {
                    return Err(Error::StaleCache {
                        stage: Stage::Invert.name().into(),
                        reason: "pivots were computed from different crops".into(),
                    });
                }
                let (w, r) = stages::tune(b, &pivots, &crops, s)?;
                let r = r.expect("tuning is enabled");
                write_weight_blob(&dir.join("theta_p"), &w.params)?;
                write_csv(
                    &dir.join("pti_trace.csv"),
                    &["step", "recon_lpips", "recon_l2", "locality", "total"],
                    r.trace.iter().map(|t| {
                        vec![
                            t.step.to_string(),
                            t.loss.recon_lpips.to_string(),
                            t.loss.recon_l2.to_string(),
                            t.loss.locality.to_string(),
                            t.loss.total.to_string(),
                        ]
                    }),
                )?;
                write_json(
                    &dir.join("tune.json"),
                    &TuneInfo {
                        version_tag: w.version_tag.clone(),
                        seed: s.pti_config().seed,
                        initial_objective: r.initial_objective,
                        final_objective: r.final_objective,
                    },
                )?;
                Ok(w.version_tag)
            }
            Stage::Edit => {
                let pivots = self.pivots()?;
                let theta_p = self.theta_p()?;
                let d = load_direction(&self.cfg.direction)?;
                let strength = s.strength_for(&d);
                let edited = apply_direction(&pivots, &d, strength)?;
                // stored codes are f32, so edit with exactly what later stages read
                let rounded = edited
                    .pivots
                    .iter()
                    .map(|w| {
                        let data = w.data().iter().map(|&v| v as f32 as f64).collect();
                        LatentCode::from_vec(w.layers(), w.dim(), data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let e = stages::render_edited(b, &theta_p, PivotSet::new(rounded, edited.source_crop_hashes)?, &s.stitch)?;
                write_latents(&dir.join("edited_pivots"), "edited_pivots", &e.pivots.pivots)?;
                write_images(&dir.join("edits"), "edits", &e.crops.frames)?;
                for (i, m) in e.masks.iter().enumerate() {
                    write_mask_png(&dir.join("m").join(frame_file_name(i)), &m.m)?;
                    write_mask_png(&dir.join("m_d").join(frame_file_name(i)), &m.m_d)?;
                }
                write_json(
                    &dir.join("edit.json"),
                    &EditInfo {
                        direction: d.name,
                        strength,
                    },
                )?;
                Ok(theta_p.version_tag)
            }
            Stage::Stitch => {
                let theta_p = self.theta_p()?;
                let st = stages::stitch(b, &theta_p, &self.edited()?, &self.crops()?, &s.stitch)?;
                write_images(&dir.join("s"), "s", &st.s)?;
                write_csv(
                    &dir.join("stitch_trace.csv"),
                    &["frame", "step", "l_b", "l_m"],
                    st.traces.iter().enumerate().flat_map(|(i, tr)| {
                        tr.iter()
                            .map(move |r| vec![i.to_string(), r.step.to_string(), r.l_b.to_string(), r.l_m.to_string()])
                    }),
                )?;
                Ok(theta_p.version_tag)
            }
            Stage::Compose => {
                let frames = read_frames_dir(&self.cfg.frames_dir)?;
                let stitched = if s.ablation.no_stitch {
                    None
                } else {
                    Some(read_images(&self.dir(Stage::Stitch).join("s"))?)
                };
                let out = stages::compose(&frames, &self.transforms()?, &self.edited()?, stitched.as_deref(), &s.stitch)?;
                write_frames_dir(&dir.join("frames"), &out)?;
                Ok(self.theta_p()?.version_tag)
            }
            Stage::Metrics => {
                let edited = read_frames_dir(&self.dir(Stage::Compose).join("frames"))?;
                let original = read_frames_dir(&self.cfg.frames_dir)?;
                let r = stages::metrics(b, &edited, &original)?;
                write_json(&dir.join("metrics.json"), &r)?;
                crate::io::write_bytes(&dir.join("pairs.csv"), r.pairs_csv().as_bytes())?;
                Ok(self.theta_p()?.version_tag)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TuneInfo {
    version_tag: String,
    seed: u64,
    initial_objective: f64,
    final_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EditInfo {
    direction: String,
    strength: f64,
}

fn list_outputs(work: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(work: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(work, &p, out)?;
            } else {
                out.push(p.strip_prefix(work).expect("under workdir").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(work, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn ctx<'a>(cfg: &'a PipelineConfig, backend: &'a Backend) -> Result<Ctx<'a>> {
    cfg.validate()?;
    Ok(Ctx {
        cfg,
        settings: cfg.settings(),
        backend,
        backend_tag: backend_tag(backend),
        work: &cfg.workdir,
    })
}

fn run_stage_in(c: &Ctx<'_>, stage: Stage, manifest: &mut RunManifest) -> Result<StageOutcome> {
    if !stage.enabled(&c.settings.ablation) {
        return Err(Error::Config(format!("stage `{stage}` is disabled by the ablation settings")));
    }
    c.check_upstream(stage, manifest)?;
    let input_hash = c.input_hash(stage, manifest, stage)?;
    if let Some(a) = manifest.stages.get(&stage) {
        if a.input_hash == input_hash && c.outputs_intact(a) {
            return Ok(StageOutcome {
                artifact: a.clone(),
                cached: true,
            });
        }
    }
    let dir = c.dir(stage);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let version_tag = c.execute(stage)?;
    let outputs = list_outputs(c.work, &dir)?;
    let artifact = StageArtifact {
        stage,
        input_hash,
        output_hash: c.outputs_hash(&outputs)?,
        outputs,
        version_tag,
    };
    manifest.stages.insert(stage, artifact.clone());
    manifest.provenance = None;
    manifest.save(c.work)?;
    Ok(StageOutcome {
        artifact,
        cached: false,
    })
}

/// Run one stage, reusing its stored outputs when nothing it reads changed.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, backend: &Backend) -> Result<StageOutcome> {
    let c = ctx(cfg, backend)?;
    let mut manifest = RunManifest::load(c.work)?;
    run_stage_in(&c, stage, &mut manifest)
}

/// Every enabled stage in order, then the provenance record.
pub fn run_all(cfg: &PipelineConfig, backend: &Backend) -> Result<RunOutput> {
    let c = ctx(cfg, backend)?;
    let mut manifest = RunManifest::load(c.work)?;
    let mut outcomes = Vec::new();
    for stage in Stage::ALL.into_iter().filter(|s| s.enabled(&c.settings.ablation)) {
        outcomes.push(run_stage_in(&c, stage, &mut manifest)?);
    }
    let final_frames = PathBuf::from(Stage::Compose.name()).join("frames");
    let metrics = PathBuf::from(Stage::Metrics.name()).join("metrics.json");
    let s = &c.settings;
    manifest.provenance = Some(Provenance {
        config: cfg.clone(),
        run_seed: s.seed,
        pti_seed: s.pti_config().seed,
        inversion_seed: s.inversion_config().seed,
        backend_tag: c.backend_tag.clone(),
        theta0_tag: backend.theta0.version_tag.clone(),
        theta_p_tag: c.theta_p()?.version_tag,
        stages: outcomes.iter().map(|o| o.artifact.stage).collect(),
        final_frames: final_frames.clone(),
        metrics: metrics.clone(),
    });
    manifest.save(c.work)?;
    Ok(RunOutput {
        frames: read_frames_dir(&c.work.join(final_frames))?,
        report: read_json(&c.work.join(metrics))?,
        outcomes,
        manifest,
    })
}
