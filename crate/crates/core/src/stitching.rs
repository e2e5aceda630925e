//! Stitching tuning and compositing of edited crops back into frames.

use serde::{Deserialize, Serialize};

use crate::alignment::{invert_align, AlignTransform};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::{Generator, GeneratorWeights, LatentCode, SegMask};
use crate::optim::Adam;

/// Tolerance when checking a supplied edited crop against a fresh render
/// (edited crops may round-trip through 32-bit storage).
pub const EDIT_RECOMPUTE_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchConfig {
    pub lambda_m: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Dilation half-width in crop pixels; `None` means 3% of the crop side.
    pub dilation_radius: Option<usize>,
    /// Gaussian feathering of the pasted mask in frame pixels (0 = hard edge).
    pub feather_sigma: f64,
}

impl Default for StitchConfig {
    fn default() -> Self {
        StitchConfig {
            lambda_m: 0.01,
            learning_rate: 3e-4,
            iterations: 100,
            dilation_radius: None,
            feather_sigma: 0.0,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_m.is_finite() && self.lambda_m >= 0.0) {
            return Err(Error::Config("lambda_m must be finite and non-negative".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("stitch learning rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("stitch iterations must be at least 1".into()));
        }
        if self.dilation_radius == Some(0) {
            return Err(Error::Config("dilation radius must be at least 1".into()));
        }
        if !(self.feather_sigma.is_finite() && self.feather_sigma >= 0.0) {
            return Err(Error::Config("feather_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn radius_for(&self, crop_size: usize) -> usize {
        self.dilation_radius
            .unwrap_or_else(|| ((0.03 * crop_size as f64).round() as usize).max(1))
    }
}

/// Chebyshev-ball dilation (square element of half-width `radius`).
pub fn dilate_mask(m: &SegMask, radius: usize) -> SegMask {
    if radius == 0 {
        return m.clone();
    }
    let (h, w) = (m.height(), m.width());
    let mut rows = Mask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(w - 1);
            rows.set(r, c, (lo..=hi).any(|cc| m.get(r, cc)));
        }
    }
    Mask::from_fn(h, w, |r, c| {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        (lo..=hi).any(|rr| rows.get(rr, c))
    })
}

/// `b = m xor m_d`, requiring `m ⊆ m_d`.
pub fn boundary_mask(m: &SegMask, m_d: &SegMask) -> Result<SegMask> {
    if !m.same_shape(m_d) {
        return Err(Error::Contract("mask shapes differ".into()));
    }
    if !m.is_subset_of(m_d) {
        return Err(Error::InvariantViolation("mask is not contained in its dilation".into()));
    }
    m.xor(m_d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub m: SegMask,
    pub m_d: SegMask,
    pub b: SegMask,
}

impl MaskSet {
    pub fn new(m: SegMask, m_d: SegMask) -> Result<Self> {
        let b = boundary_mask(&m, &m_d)?;
        Ok(MaskSet { m, m_d, b })
    }

    pub fn from_segmentation(m: SegMask, radius: usize) -> Result<Self> {
        let m_d = dilate_mask(&m, radius);
        Self::new(m, m_d)
    }

    pub fn height(&self) -> usize {
        self.m.height()
    }

    pub fn width(&self) -> usize {
        self.m.width()
    }
}

fn masked_l1(a: &Image, b: &Image, mask: &Mask) -> f64 {
    let c = a.channels();
    let n = mask.count() * c;
    if n == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for (p, &on) in mask.data().iter().enumerate() {
        if on {
            for ch in 0..c {
                s += (a.data()[p * c + ch] - b.data()[p * c + ch]).abs();
            }
        }
    }
    s / n as f64
}

fn check_stitch_shapes(s: &Image, x: &Image, e: &Image, masks: &MaskSet) -> Result<()> {
    s.check_same_shape(x, "stitch loss")?;
    s.check_same_shape(e, "stitch loss")?;
    if s.height() != masks.height() || s.width() != masks.width() {
        return Err(Error::Contract(format!(
            "images are {}x{}, masks are {}x{}",
            s.height(),
            s.width(),
            masks.height(),
            masks.width()
        )));
    }
    Ok(())
}

/// `(L_b, L_m)`: mean absolute error of `s` against `x` on the boundary and
/// against `e` on the mask, each normalized by masked pixels × channels.
pub fn stitch_losses(s: &Image, x_aligned: &Image, e: &Image, masks: &MaskSet) -> Result<(f64, f64)> {
    check_stitch_shapes(s, x_aligned, e, masks)?;
    Ok((masked_l1(s, x_aligned, &masks.b), masked_l1(s, e, &masks.m)))
}

/// Subgradient of `L_b + λ_m·L_m` with respect to `s`.
pub fn stitch_loss_grad(s: &Image, x_aligned: &Image, e: &Image, masks: &MaskSet, lambda_m: f64) -> Result<Image> {
    check_stitch_shapes(s, x_aligned, e, masks)?;
    let c = s.channels();
    let mut g = Image::zeros(s.height(), s.width(), c);
    let mut add = |mask: &Mask, target: &Image, weight: f64| {
        let n = mask.count() * c;
        if n == 0 {
            return;
        }
        let k = weight / n as f64;
        for (p, &on) in mask.data().iter().enumerate() {
            if on {
                for ch in 0..c {
                    let i = p * c + ch;
                    let d = s.data()[i] - target.data()[i];
                    if d != 0.0 {
                        g.data_mut()[i] += k * d.signum();
                    }
                }
            }
        }
    };
    add(&masks.b, x_aligned, 1.0);
    add(&masks.m, e, lambda_m);
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchTraceRow {
    pub step: usize,
    pub l_b: f64,
    pub l_m: f64,
}

#[derive(Clone, Debug)]
pub struct StitchResult {
    pub weights: GeneratorWeights,
    pub s: Image,
    /// Losses before each update, plus a final row after the last one.
    pub trace: Vec<StitchTraceRow>,
}

impl StitchResult {
    pub fn initial(&self) -> StitchTraceRow {
        self.trace[0]
    }

    pub fn last(&self) -> StitchTraceRow {
        *self.trace.last().expect("trace has at least two rows")
    }
}

pub fn run_stitch_tuning(
    generator: &dyn Generator,
    theta_p: &GeneratorWeights,
    edited_code: &LatentCode,
    x_aligned: &Image,
    e: &Image,
    masks: &MaskSet,
    cfg: &StitchConfig,
) -> Result<StitchResult> {
    cfg.validate()?;
    let fresh = generator.generate(edited_code, theta_p)?;
    if fresh.max_abs_diff(e)? > EDIT_RECOMPUTE_TOL {
        return Err(Error::Contract(
            "edited crop does not match the generator output for the edited code".into(),
        ));
    }
    let mut theta = theta_p.clone();
    let mut adam = Adam::new(theta.params.len(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for step in 0..cfg.iterations {
        let s = generator.generate(edited_code, &theta)?;
        let (l_b, l_m) = stitch_losses(&s, x_aligned, e, masks)?;
        let total = l_b + cfg.lambda_m * l_m;
        if !total.is_finite() {
            return Err(Error::Divergence {
                stage: "stitch",
                step,
                loss: total,
            });
        }
        trace.push(StitchTraceRow { step, l_b, l_m });
        let g_img = stitch_loss_grad(&s, x_aligned, e, masks, cfg.lambda_m)?;
        let grad = generator.backward(edited_code, &theta, &g_img)?;
        adam.step(theta.params.data_mut(), &grad.params);
    }
    let mut params = theta.params;
    params.round_to_f32();
    let weights = theta_p.derive("stitch", params)?;
    let s = generator.generate(edited_code, &weights)?;
    let (l_b, l_m) = stitch_losses(&s, x_aligned, e, masks)?;
    if !(l_b + cfg.lambda_m * l_m).is_finite() {
        return Err(Error::Divergence {
            stage: "stitch",
            step: cfg.iterations,
            loss: l_b + cfg.lambda_m * l_m,
        });
    }
    trace.push(StitchTraceRow {
        step: cfg.iterations,
        l_b,
        l_m,
    });
    Ok(StitchResult { weights, s, trace })
}

/// Frame-space blend weight: the warped mask, optionally feathered, in `[0, 1]`.
pub fn blend_weights(m: &SegMask, t: &AlignTransform, frame_hw: (usize, usize), feather_sigma: f64) -> Result<Image> {
    let (mut w, _) = invert_align(&Image::from_mask(m), t, frame_hw)?;
    if feather_sigma > 0.0 {
        w = w.gaussian_blur(feather_sigma);
    }
    Ok(w.clamp01())
}

/// Blend `crop` into `frame` through `t` with weights from `m`. Pixels with
/// zero weight are copied from `frame` untouched.
pub fn composite(crop: &Image, frame: &Image, t: &AlignTransform, m: &SegMask, feather_sigma: f64) -> Result<Image> {
    if !(feather_sigma.is_finite() && feather_sigma >= 0.0) {
        return Err(Error::InvalidInput("feather_sigma must be finite and non-negative".into()));
    }
    if crop.channels() != frame.channels() {
        return Err(Error::Contract("crop and frame channel counts differ".into()));
    }
    if m.height() != crop.height() || m.width() != crop.width() {
        return Err(Error::Contract("mask and crop shapes differ".into()));
    }
    let hw = (frame.height(), frame.width());
    let (warped, _) = invert_align(crop, t, hw)?;
    let weight = blend_weights(m, t, hw, feather_sigma)?;
    let c = frame.channels();
    let mut out = frame.clone();
    for p in 0..hw.0 * hw.1 {
        let a = weight.data()[p];
        if a == 0.0 {
            continue;
        }
        for ch in 0..c {
            let i = p * c + ch;
            out.data_mut()[i] = frame.data()[i] * (1.0 - a) + warped.data()[i] * a;
        }
    }
    Ok(out)
}

/// Ablation baseline: paste the edited crop inside the undilated mask.
pub fn naive_paste(e: &Image, frame: &Image, t: &AlignTransform, m: &SegMask) -> Result<Image> {
    composite(e, frame, t, m, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_dilate(m: &Mask, r: usize) -> Mask {
        let r = r as isize;
        Mask::from_fn(m.height(), m.width(), |row, col| {
            (-r..=r).any(|dr| {
                (-r..=r).any(|dc| {
                    let (rr, cc) = (row as isize + dr, col as isize + dc);
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < m.height()
                        && (cc as usize) < m.width()
                        && m.get(rr as usize, cc as usize)
                })
            })
        })
    }

    #[test]
    fn single_pixel_dilation_and_ring() {
        let mut m = Mask::empty(9, 9);
        m.set(4, 4, true);
        let d = dilate_mask(&m, 1);
        assert_eq!(d, brute_dilate(&m, 1));
        assert_eq!(d.count(), 9);
        let b = boundary_mask(&m, &d).unwrap();
        assert_eq!(b.count(), 8);
        assert!(!b.get(4, 4));
    }

    #[test]
    fn radius_zero_and_full_masks() {
        let m = Mask::from_fn(5, 6, |r, c| (r + c) % 3 == 0);
        assert_eq!(dilate_mask(&m, 0), m);
        let full = Mask::full(5, 6);
        assert_eq!(dilate_mask(&full, 2), full);
        assert!(boundary_mask(&m, &m).unwrap().is_empty());
        let empty = Mask::empty(5, 6);
        assert_eq!(boundary_mask(&empty, &m).unwrap(), m);
    }

    #[test]
    fn boundary_rejects_non_subset() {
        let a = Mask::from_fn(3, 3, |r, _| r == 0);
        let b = Mask::from_fn(3, 3, |r, _| r == 1);
        assert!(matches!(boundary_mask(&a, &b), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn losses_on_a_hand_checked_2x2() {
        // pixel 0: mask, pixel 1: boundary, pixels 2-3: outside
        let m = Mask::from_vec(2, 2, vec![true, false, false, false]).unwrap();
        let m_d = Mask::from_vec(2, 2, vec![true, true, false, false]).unwrap();
        let masks = MaskSet::new(m, m_d).unwrap();
        let s = Image::from_vec(2, 2, 1, vec![0.5, 0.2, 0.9, 0.1]).unwrap();
        let x = Image::from_vec(2, 2, 1, vec![0.0, 0.6, 0.0, 0.0]).unwrap();
        let e = Image::from_vec(2, 2, 1, vec![0.8, 0.0, 0.0, 0.0]).unwrap();
        let (lb, lm) = stitch_losses(&s, &x, &e, &masks).unwrap();
        assert!((lb - 0.4).abs() < 1e-12);
        assert!((lm - 0.3).abs() < 1e-12);
        let g = stitch_loss_grad(&s, &x, &e, &masks, 0.5).unwrap();
        assert_eq!(g.data(), &[-0.5, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_blend_weight_keeps_frame_bitwise() {
        let frame = Image::from_fn(10, 10, 3, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f64 / 11.0);
        let crop = Image::filled(6, 6, 3, 0.5);
        let t = AlignTransform::identity(6);
        let out = composite(&crop, &frame, &t, &Mask::empty(6, 6), 0.0).unwrap();
        assert_eq!(out, frame);
        let full = composite(&crop, &frame, &t, &Mask::full(6, 6), 0.0).unwrap();
        assert_eq!(full.get(3, 3, 0), 0.5);
        assert_eq!(full.get(8, 8, 1), frame.get(8, 8, 1));
    }
}
