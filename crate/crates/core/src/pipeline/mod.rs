//! Orchestration: configuration, the on-disk stage runner with its
//! content-hash cache, and backend loading.
//!
//! Stages run in the order of [`Stage::ALL`]. Each reads its inputs from the
//! work directory, never from memory, so any stage can be re-run alone.

pub mod invert;
mod runner;
pub mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use invert::{invert_by_optimization, OptimInversionConfig};
pub use runner::{run_all, run_stage, Provenance, RunManifest, RunOutput, StageArtifact, StageOutcome, MANIFEST_FILE};
pub use stages::{Ablation, StageSettings};

use crate::alignment::AlignConfig;
use crate::error::{Error, Result};
use crate::model::{Backend, BackendManifest};
use crate::pti::PtiConfig;
use crate::stitching::StitchConfig;

/// Overrides the configured work directory when set.
pub const WORKDIR_ENV: &str = "STITCHPIPE_WORKDIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Align,
    Invert,
    Tune,
    Edit,
    Stitch,
    Compose,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Align,
        Stage::Invert,
        Stage::Tune,
        Stage::Edit,
        Stage::Stitch,
        Stage::Compose,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Align => "align",
            Stage::Invert => "invert",
            Stage::Tune => "tune",
            Stage::Edit => "edit",
            Stage::Stitch => "stitch",
            Stage::Compose => "compose",
            Stage::Metrics => "metrics",
        }
    }

    /// Whether the ablation settings leave this stage in the run.
    pub fn enabled(self, a: &Ablation) -> bool {
        match self {
            Stage::Tune => !a.no_pti,
            Stage::Stitch => !a.no_stitch,
            _ => true,
        }
    }

    /// Upstream stages whose outputs this one reads.
    pub fn dependencies(self, a: &Ablation) -> Vec<Stage> {
        let mut d = match self {
            Stage::Align => vec![],
            Stage::Invert => vec![Stage::Align],
            Stage::Tune => vec![Stage::Align, Stage::Invert],
            Stage::Edit => vec![Stage::Invert, Stage::Tune],
            Stage::Stitch => vec![Stage::Align, Stage::Tune, Stage::Edit],
            Stage::Compose => vec![Stage::Align, Stage::Edit, Stage::Stitch],
            Stage::Metrics => vec![Stage::Compose],
        };
        d.retain(|s| s.enabled(a));
        d
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// A run as described by its JSON config file. Relative paths are resolved
/// against the config file's directory by [`PipelineConfig::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `NNNNNN.png` frames.
    pub frames_dir: PathBuf,
    pub landmarks: PathBuf,
    /// Direction latent, as its stem or either of its files.
    pub direction: PathBuf,
    /// Directory holding the backend manifest and weights.
    pub backend: PathBuf,
    /// Overridden by `STITCHPIPE_WORKDIR` when loaded through [`PipelineConfig::load`].
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub pti: PtiConfig,
    #[serde(default)]
    pub stitch: StitchConfig,
    #[serde(default)]
    pub inversion: OptimInversionConfig,
    #[serde(default)]
    pub strength: Option<f64>,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// Parse a config file; any failure is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.frames_dir,
            &mut cfg.landmarks,
            &mut cfg.direction,
            &mut cfg.backend,
            &mut cfg.workdir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(w) = std::env::var_os(WORKDIR_ENV).filter(|w| !w.is_empty()) {
            cfg.workdir = PathBuf::from(w);
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> StageSettings {
        StageSettings {
            align: self.align.clone(),
            pti: self.pti.clone(),
            stitch: self.stitch.clone(),
            inversion: self.inversion.clone(),
            strength: self.strength,
            ablation: self.ablation,
            seed: self.seed,
        }
    }

    /// Checks settings, that every input exists and that the work directory
    /// can be written.
    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        if !self.frames_dir.is_dir() {
            return Err(Error::Config(format!("frames directory {} does not exist", self.frames_dir.display())));
        }
        if !self.landmarks.is_file() {
            return Err(Error::Config(format!("landmarks file {} does not exist", self.landmarks.display())));
        }
        let stem = crate::editing::direction_stem(&self.direction);
        if !stem.with_extension("bin").is_file() || !crate::editing::direction_meta_path(&stem).is_file() {
            return Err(Error::Config(format!("direction {} does not exist", self.direction.display())));
        }
        if !self.backend.join(BACKEND_MANIFEST).is_file() {
            return Err(Error::Config(format!(
                "{} holds no backend manifest",
                self.backend.display()
            )));
        }
        std::fs::create_dir_all(&self.workdir)
            .map_err(|e| Error::Config(format!("cannot create workdir {}: {e}", self.workdir.display())))?;
        let probe = self.workdir.join(".write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| Error::Config(format!("workdir {} is not writable: {e}", self.workdir.display())))?;
        Ok(())
    }
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

pub const BACKEND_MANIFEST: &str = "manifest.json";

/// Load the backend saved in `dir`, dispatching on its `backend_id`.
pub fn load_backend(dir: &Path) -> Result<Backend> {
    let manifest: BackendManifest = crate::io::read_json(&dir.join(BACKEND_MANIFEST))?;
    match manifest.backend_id.as_str() {
        crate::toy::generator::BACKEND_ID => Ok(crate::toy::load_toy_models(dir)?.backend()),
        other => Err(Error::Config(format!("unknown backend `{other}` in {}", dir.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("blend".parse::<Stage>(), Err(Error::Config(_))));
    }

    #[test]
    fn editing_waits_for_tuning_unless_ablated() {
        let full = Ablation::default();
        assert!(Stage::Edit.dependencies(&full).contains(&Stage::Tune));
        let no_pti = Ablation {
            no_pti: true,
            ..full
        };
        assert!(!Stage::Edit.dependencies(&no_pti).contains(&Stage::Tune));
        assert!(!Stage::Tune.enabled(&no_pti));
        let no_stitch = Ablation {
            no_stitch: true,
            ..full
        };
        assert_eq!(Stage::Compose.dependencies(&no_stitch), vec![Stage::Align, Stage::Edit]);
    }

    #[test]
    fn dependencies_point_upstream() {
        let a = Ablation::default();
        for s in Stage::ALL {
            assert!(s.dependencies(&a).iter().all(|d| d < &s));
        }
    }

    #[test]
    fn config_resolves_relative_paths_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"frames_dir":"f","landmarks":"l.json","direction":"d","backend":"b","workdir":"w","seed":3}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.frames_dir, dir.path().join("f"));
        assert_eq!(cfg.seed, 3);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"frames_dir":"f","bogus":1}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }
}
