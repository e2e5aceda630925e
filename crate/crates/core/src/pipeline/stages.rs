//! The stage computations, free of any file handling. The on-disk runner in
//! the parent module and the toy certification both drive these.

use serde::{Deserialize, Serialize};

use super::invert::{invert_by_optimization, OptimInversionConfig};
use crate::alignment::{align_track, apply_align, AlignConfig, AlignTransform, FrameSequence, LandmarkTrack};
use crate::editing::{apply_direction, render_edits, EditDirection};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::MetricReport;
use crate::model::{Backend, GeneratorWeights};
use crate::pti::{invert_frames, run_pti, PivotSet, PtiConfig, PtiResult};
use crate::seed::derive_seed;
use crate::stitching::{composite, naive_paste, run_stitch_tuning, MaskSet, StitchConfig, StitchTraceRow};

const STREAM_PTI: u64 = 0x5054_49;
const STREAM_INVERT: u64 = 0x494E_56;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Pivots from per-frame optimization instead of the encoder.
    pub no_encoder: bool,
    /// Skip generator tuning: `θ_p = θ₀`.
    pub no_pti: bool,
    /// Paste the edited crop inside the undilated mask instead of stitching.
    pub no_stitch: bool,
}

/// Everything a run needs besides its inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    pub align: AlignConfig,
    pub pti: PtiConfig,
    pub stitch: StitchConfig,
    pub inversion: OptimInversionConfig,
    /// Edit strength; the direction's default when absent.
    pub strength: Option<f64>,
    pub ablation: Ablation,
    /// Root of every random stream in the run.
    pub seed: u64,
}

impl StageSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.align.sigma.is_finite() && self.align.sigma >= 0.0) {
            return Err(Error::Config("align sigma must be finite and non-negative".into()));
        }
        if self.align.crop_size < 8 {
            return Err(Error::Config("crop size must be at least 8".into()));
        }
        self.pti.validate()?;
        self.stitch.validate()?;
        self.inversion.validate()?;
        if let Some(s) = self.strength {
            if !s.is_finite() {
                return Err(Error::Config("edit strength must be finite".into()));
            }
        }
        Ok(())
    }

    /// PTI settings with the seed drawn from the run seed.
    pub fn pti_config(&self) -> PtiConfig {
        PtiConfig {
            seed: derive_seed(derive_seed(self.seed, STREAM_PTI), self.pti.seed),
            ..self.pti.clone()
        }
    }

    pub fn inversion_config(&self) -> OptimInversionConfig {
        OptimInversionConfig {
            seed: derive_seed(derive_seed(self.seed, STREAM_INVERT), self.inversion.seed),
            ..self.inversion.clone()
        }
    }

    pub fn strength_for(&self, d: &EditDirection) -> f64 {
        self.strength.unwrap_or(d.default_strength)
    }
}

#[derive(Clone, Debug)]
pub struct Aligned {
    pub smoothed: LandmarkTrack,
    pub transforms: Vec<AlignTransform>,
    pub crops: FrameSequence,
}

pub fn align(frames: &FrameSequence, track: &LandmarkTrack, cfg: &AlignConfig) -> Result<Aligned> {
    if frames.len() != track.num_frames() {
        return Err(Error::InvalidInput(format!(
            "{} frames but landmarks for {}",
            frames.len(),
            track.num_frames()
        )));
    }
    let (smoothed, transforms) = align_track(track, cfg)?;
    let crops = frames
        .frames
        .iter()
        .zip(&transforms)
        .map(|(f, t)| apply_align(f, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Aligned {
        smoothed,
        transforms,
        crops: FrameSequence::new(crops, frames.index_offset)?,
    })
}

pub fn invert(backend: &Backend, crops: &FrameSequence, settings: &StageSettings) -> Result<PivotSet> {
    if settings.ablation.no_encoder {
        invert_by_optimization(
            backend.generator.as_ref(),
            backend.perceptual.as_ref(),
            &backend.theta0,
            crops,
            &settings.inversion_config(),
        )
    } else {
        invert_frames(backend.encoder.as_ref(), crops)
    }
}

/// `θ_p`, plus the PTI run unless tuning is ablated.
pub fn tune(
    backend: &Backend,
    pivots: &PivotSet,
    crops: &FrameSequence,
    settings: &StageSettings,
) -> Result<(GeneratorWeights, Option<PtiResult>)> {
    if settings.ablation.no_pti {
        return Ok((backend.theta0.clone(), None));
    }
    let r = run_pti(
        backend.generator.as_ref(),
        backend.perceptual.as_ref(),
        &backend.theta0,
        pivots,
        crops,
        &settings.pti_config(),
    )?;
    Ok((r.weights.clone(), Some(r)))
}

#[derive(Clone, Debug)]
pub struct Edited {
    pub pivots: PivotSet,
    /// `e_i = G(w_i + δw; θ_p)`.
    pub crops: FrameSequence,
    /// Segmented from the edited crops.
    pub masks: Vec<MaskSet>,
}

pub fn edit(
    backend: &Backend,
    theta_p: &GeneratorWeights,
    pivots: &PivotSet,
    direction: &EditDirection,
    settings: &StageSettings,
) -> Result<Edited> {
    let edited = apply_direction(pivots, direction, settings.strength_for(direction))?;
    render_edited(backend, theta_p, edited, &settings.stitch)
}

/// Render already-edited codes and segment the results.
pub fn render_edited(backend: &Backend, theta_p: &GeneratorWeights, edited: PivotSet, cfg: &StitchConfig) -> Result<Edited> {
    let crops = render_edits(backend.generator.as_ref(), theta_p, &edited)?;
    let masks = crops
        .frames
        .iter()
        .map(|e| {
            let m = backend.segmenter.segment(e);
            MaskSet::from_segmentation(m, cfg.radius_for(e.height()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Edited {
        pivots: edited,
        crops,
        masks,
    })
}

#[derive(Clone, Debug)]
pub struct Stitched {
    pub s: Vec<Image>,
    pub traces: Vec<Vec<StitchTraceRow>>,
}

/// Per-frame stitching tuning; every frame starts from `θ_p` and its tuned
/// weights are dropped once `s_i` is rendered.
pub fn stitch(
    backend: &Backend,
    theta_p: &GeneratorWeights,
    edited: &Edited,
    crops: &FrameSequence,
    cfg: &StitchConfig,
) -> Result<Stitched> {
    if crops.len() != edited.crops.len() {
        return Err(Error::InvalidInput("aligned and edited crop counts differ".into()));
    }
    let mut out = Stitched {
        s: Vec::with_capacity(crops.len()),
        traces: Vec::with_capacity(crops.len()),
    };
    for i in 0..crops.len() {
        let r = run_stitch_tuning(
            backend.generator.as_ref(),
            theta_p,
            &edited.pivots.pivots[i],
            &crops.frames[i],
            &edited.crops.frames[i],
            &edited.masks[i],
            cfg,
        )?;
        out.s.push(r.s);
        out.traces.push(r.trace);
    }
    Ok(out)
}

/// Round to the 8-bit grid frames are stored on. Values already on the grid
/// are returned bitwise unchanged.
pub fn quantize8(img: &Image) -> Image {
    let data = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Image::from_vec(img.height(), img.width(), img.channels(), data).expect("same shape")
}

/// Paste every frame's crop back: stitched crops through the dilated,
/// feathered mask, or edited crops through the plain mask when `stitched`
/// is `None`.
pub fn compose(
    frames: &FrameSequence,
    transforms: &[AlignTransform],
    edited: &Edited,
    stitched: Option<&[Image]>,
    cfg: &StitchConfig,
) -> Result<FrameSequence> {
    let n = frames.len();
    if transforms.len() != n || edited.crops.len() != n || stitched.is_some_and(|s| s.len() != n) {
        return Err(Error::InvalidInput("compose inputs disagree on the frame count".into()));
    }
    let out = (0..n)
        .map(|i| {
            let x = &frames.frames[i];
            let t = &transforms[i];
            let m = &edited.masks[i];
            let f = match stitched {
                Some(s) => composite(&s[i], x, t, &m.m_d, cfg.feather_sigma)?,
                None => naive_paste(&edited.crops.frames[i], x, t, &m.m)?,
            };
            Ok(quantize8(&f))
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(out, frames.index_offset)
}

pub fn metrics(backend: &Backend, edited: &FrameSequence, original: &FrameSequence) -> Result<MetricReport> {
    MetricReport::evaluate(edited, original, backend.embedder.as_ref())
}

/// Every intermediate of one in-memory run.
#[derive(Clone, Debug)]
pub struct ClipRun {
    pub aligned: Aligned,
    pub pivots: PivotSet,
    pub theta_p: GeneratorWeights,
    pub pti: Option<PtiResult>,
    pub edited: Edited,
    pub stitched: Option<Stitched>,
    pub frames: FrameSequence,
    pub report: MetricReport,
}

pub fn run_clip(
    backend: &Backend,
    frames: &FrameSequence,
    track: &LandmarkTrack,
    direction: &EditDirection,
    settings: &StageSettings,
) -> Result<ClipRun> {
    settings.validate()?;
    let aligned = align(frames, track, &settings.align)?;
    let pivots = invert(backend, &aligned.crops, settings)?;
    let (theta_p, pti) = tune(backend, &pivots, &aligned.crops, settings)?;
    let edited = edit(backend, &theta_p, &pivots, direction, settings)?;
    let stitched = if settings.ablation.no_stitch {
        None
    } else {
        Some(stitch(backend, &theta_p, &edited, &aligned.crops, &settings.stitch)?)
    };
    let out = compose(
        frames,
        &aligned.transforms,
        &edited,
        stitched.as_ref().map(|s| s.s.as_slice()),
        &settings.stitch,
    )?;
    let report = metrics(backend, &out, frames)?;
    Ok(ClipRun {
        aligned,
        pivots,
        theta_p,
        pti,
        edited,
        stitched,
        frames: out,
        report,
    })
}
