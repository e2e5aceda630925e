//! Latent edits: a named direction applied to every pivot at one strength.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::FrameSequence;
use crate::error::{Error, Result};
use crate::model::{Generator, GeneratorWeights, LatentCode};
use crate::pti::PivotSet;

#[derive(Clone, Debug, PartialEq)]
pub struct EditDirection {
    pub name: String,
    pub delta: LatentCode,
    pub default_strength: f64,
    /// Layers the delta applies to; `None` means all.
    pub layer_mask: Option<Vec<usize>>,
}

/// JSON metadata stored next to a direction's latent file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMeta {
    pub name: String,
    pub default_strength: f64,
    #[serde(default)]
    pub layer_mask: Option<Vec<usize>>,
}

impl EditDirection {
    pub fn new(name: impl Into<String>, delta: LatentCode, default_strength: f64, layer_mask: Option<Vec<usize>>) -> Result<Self> {
        if delta.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("direction delta must be finite".into()));
        }
        if !default_strength.is_finite() {
            return Err(Error::InvalidInput("default strength must be finite".into()));
        }
        if let Some(mask) = &layer_mask {
            if let Some(l) = mask.iter().find(|&&l| l >= delta.layers()) {
                return Err(Error::InvalidInput(format!(
                    "layer mask entry {l} outside 0..{}",
                    delta.layers()
                )));
            }
        }
        Ok(EditDirection {
            name: name.into(),
            delta,
            default_strength,
            layer_mask,
        })
    }

    /// Like [`EditDirection::new`] but rescales `delta` to unit norm.
    pub fn unit(name: impl Into<String>, delta: LatentCode, default_strength: f64, layer_mask: Option<Vec<usize>>) -> Result<Self> {
        let n = delta.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidInput("direction delta must be non-zero".into()));
        }
        let (l, d) = delta.shape();
        let unit = LatentCode::from_vec(l, d, delta.data().iter().map(|v| v / n).collect())?;
        Self::new(name, unit, default_strength, layer_mask)
    }

    pub fn meta(&self) -> DirectionMeta {
        DirectionMeta {
            name: self.name.clone(),
            default_strength: self.default_strength,
            layer_mask: self.layer_mask.clone(),
        }
    }

    fn applies_to(&self, layer: usize) -> bool {
        self.layer_mask.as_ref().is_none_or(|m| m.contains(&layer))
    }

    /// `w + strength·delta` on the masked layers.
    pub fn apply(&self, w: &LatentCode, strength: f64) -> Result<LatentCode> {
        w.check_shape(self.delta.shape(), "edit direction")?;
        let mut out = w.clone();
        for l in (0..w.layers()).filter(|&l| self.applies_to(l)) {
            let d = self.delta.layer(l);
            for (x, dx) in out.layer_mut(l).iter_mut().zip(d) {
                *x += strength * dx;
            }
        }
        Ok(out)
    }
}

/// `<stem>.meta.json`, next to the latent's `<stem>.bin` and `<stem>.json`.
pub fn direction_meta_path(stem: &Path) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    stem.with_file_name(name)
}

/// Accepts the stem or either of the latent files.
pub fn direction_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => {
            let s = path.with_extension("");
            let name = s.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            match name.strip_suffix(".meta") {
                Some(n) => s.with_file_name(n),
                None => s,
            }
        }
        _ => path.to_path_buf(),
    }
}

pub fn save_direction(stem: &Path, d: &EditDirection) -> Result<()> {
    crate::io::write_latent(stem, &d.name, &d.delta)?;
    crate::io::write_json(&direction_meta_path(stem), &d.meta())
}

pub fn load_direction(path: &Path) -> Result<EditDirection> {
    let stem = direction_stem(path);
    let delta = crate::io::read_latent(&stem)?;
    let meta: DirectionMeta = crate::io::read_json(&direction_meta_path(&stem))?;
    EditDirection::new(meta.name, delta, meta.default_strength, meta.layer_mask)
}

pub fn apply_direction(pivots: &PivotSet, d: &EditDirection, strength: f64) -> Result<PivotSet> {
    if !strength.is_finite() {
        return Err(Error::InvalidInput("edit strength must be finite".into()));
    }
    let codes = pivots
        .pivots
        .iter()
        .map(|w| d.apply(w, strength))
        .collect::<Result<Vec<_>>>()?;
    PivotSet::new(codes, pivots.source_crop_hashes.clone())
}

pub fn render_edits(generator: &dyn Generator, theta_p: &GeneratorWeights, edited: &PivotSet) -> Result<FrameSequence> {
    let frames = edited
        .pivots
        .iter()
        .map(|w| generator.generate(w, theta_p))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(layers: usize, dim: usize, f: impl Fn(usize) -> f64) -> LatentCode {
        LatentCode::from_vec(layers, dim, (0..layers * dim).map(f).collect()).unwrap()
    }

    #[test]
    fn masked_layers_stay_bitwise() {
        let d = EditDirection::new("x", code(3, 4, |i| i as f64 * 0.1), 1.0, Some(vec![0])).unwrap();
        let w = code(3, 4, |i| (i as f64).sin());
        let out = d.apply(&w, 2.5).unwrap();
        assert_eq!(out.layer(1), w.layer(1));
        assert_eq!(out.layer(2), w.layer(2));
        assert_ne!(out.layer(0), w.layer(0));
    }

    #[test]
    fn rejects_bad_mask_and_shape() {
        assert!(EditDirection::new("x", code(2, 2, |_| 1.0), 1.0, Some(vec![2])).is_err());
        let d = EditDirection::new("x", code(2, 2, |_| 1.0), 1.0, None).unwrap();
        assert!(matches!(d.apply(&code(3, 2, |_| 0.0), 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn direction_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("grow");
        let d = EditDirection::new("grow", code(2, 3, |i| i as f64 * 0.25), 0.5, Some(vec![1])).unwrap();
        save_direction(&stem, &d).unwrap();
        assert!(direction_meta_path(&stem).ends_with("grow.meta.json"));
        for p in [stem.clone(), stem.with_extension("bin"), direction_meta_path(&stem)] {
            assert_eq!(load_direction(&p).unwrap(), d);
        }
    }

    #[test]
    fn unit_normalizes() {
        let d = EditDirection::unit("x", code(2, 3, |i| i as f64 + 1.0), 1.0, None).unwrap();
        assert!((d.delta.norm() - 1.0).abs() < 1e-12);
    }
}
