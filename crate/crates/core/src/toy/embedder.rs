//! Identity read-out: locate the face from its mask, then regress the skin
//! logits on the four identity blotch patterns and project onto the palette.

use nalgebra::{DMatrix, DVector};

use super::scene::{logit, FacePalette, FaceSample, Placement, ID_DIM, MOUTH_Y};
use super::segmenter::ToySegmenter;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{IdentityEmbedder, IdentityEmbedding, Segmenter};

/// Only pixels this deep inside the face ellipse are used.
const INNER_RHO: f64 = 0.7;
/// Roll search range in radians.
const MAX_ROLL: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    /// Identity colour per blotch, `ID_DIM × 3`.
    id_color: [[f64; 3]; ID_DIM],
    segmenter: ToySegmenter,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        ToyEmbedder {
            id_color: FacePalette::default().id_color,
            segmenter: ToySegmenter::default(),
        }
    }
}

/// Ellipse fitted to a mask by its first and second moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseFit {
    pub center: [f64; 2],
    /// Covariance `[xx, xy, yy]` of the mask pixels.
    pub cov: [f64; 3],
    pub area: usize,
}

impl EllipseFit {
    /// Radii along the axes rotated by `angle`.
    pub fn radii_at(&self, angle: f64) -> [f64; 2] {
        let (s, c) = angle.sin_cos();
        let [xx, xy, yy] = self.cov;
        let vu = c * c * xx + 2.0 * c * s * xy + s * s * yy;
        let vv = s * s * xx - 2.0 * c * s * xy + c * c * yy;
        // a filled ellipse has variance r²/4 along each axis (+1/12 from pixel quantization)
        let r = |v: f64| (4.0 * (v - 1.0 / 12.0)).max(0.0).sqrt();
        [r(vu), r(vv)]
    }

    pub fn placement(&self, angle: f64) -> Placement {
        Placement {
            center: self.center,
            radii: self.radii_at(angle),
            angle,
        }
    }
}

pub fn fit_ellipse(mask: &crate::image::Mask) -> Option<EllipseFit> {
    let n = mask.count();
    if n < 8 {
        return None;
    }
    let pts = || (0..mask.height()).flat_map(move |r| (0..mask.width()).map(move |c| (r, c))).filter(|&(r, c)| mask.get(r, c));
    let (mut sx, mut sy) = (0.0, 0.0);
    for (r, c) in pts() {
        sx += c as f64;
        sy += r as f64;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let mut cov = [0.0; 3];
    for (r, c) in pts() {
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        cov[0] += dx * dx;
        cov[1] += dx * dy;
        cov[2] += dy * dy;
    }
    Some(EllipseFit {
        center: [cx, cy],
        cov: cov.map(|v| v / n as f64),
        area: n,
    })
}

const K: usize = ID_DIM + 2;

struct Regression {
    mse: f64,
    /// Per channel: intercept, eye term, identity terms.
    beta: [DVector<f64>; 3],
}

fn regress(image: &Image, place: &Placement) -> Option<Regression> {
    let mut xtx = DMatrix::<f64>::zeros(K, K);
    let mut xty = [DVector::<f64>::zeros(K), DVector::<f64>::zeros(K), DVector::<f64>::zeros(K)];
    let mut yy = 0.0;
    let mut used = 0usize;
    for r in 0..image.height() {
        for c in 0..image.width() {
            let (u, v) = place.local(c as f64, r as f64);
            if u * u + v * v > INNER_RHO * INNER_RHO {
                continue;
            }
            if (v - MOUTH_Y).abs() < 0.3 && u.abs() < 0.6 {
                continue;
            }
            let s = FaceSample::at(u, v, 0.0);
            let mut x = [1.0; K];
            x[1] = s.eyes;
            x[2..].copy_from_slice(&s.ids);
            for i in 0..K {
                for j in 0..K {
                    xtx[(i, j)] += x[i] * x[j];
                }
            }
            for (ch, acc) in xty.iter_mut().enumerate() {
                let y = logit(image.get(r, c, ch));
                yy += y * y;
                for i in 0..K {
                    acc[i] += x[i] * y;
                }
            }
            used += 1;
        }
    }
    if used < 4 * K {
        return None;
    }
    for i in 0..K {
        xtx[(i, i)] += 1e-9;
    }
    let chol = xtx.clone().cholesky()?;
    let beta: [DVector<f64>; 3] = std::array::from_fn(|ch| chol.solve(&xty[ch]));
    // residual sum of squares = yᵀy − βᵀXᵀy
    let explained: f64 = (0..3).map(|ch| beta[ch].dot(&xty[ch])).sum();
    Some(Regression {
        mse: (yy - explained).max(0.0) / used as f64,
        beta,
    })
}

impl ToyEmbedder {
    /// Face placement recovered from the mask, with roll chosen by the best
    /// fit of the facial feature model.
    pub fn locate(&self, image: &Image) -> Result<(Placement, f64)> {
        let mask = self.segmenter.segment(image);
        let fit = fit_ellipse(&mask).ok_or_else(|| Error::InvalidInput("no face found in image".into()))?;
        let too_small = || Error::InvalidInput("face region too small to embed".into());
        let r0 = fit.radii_at(0.0);
        if r0[0] < 2.0 || r0[1] < 2.0 {
            return Err(too_small());
        }
        let score = |a: f64| regress(image, &fit.placement(a)).map_or(f64::INFINITY, |g| g.mse);
        let mut best = (0.0, score(0.0));
        let search = |lo: f64, hi: f64, step: f64, best: &mut (f64, f64)| {
            let n = ((hi - lo) / step).round() as i64;
            for i in 0..=n {
                let a = lo + i as f64 * step;
                let e = score(a);
                if e < best.1 {
                    *best = (a, e);
                }
            }
        };
        search(-MAX_ROLL, MAX_ROLL, 0.05, &mut best);
        let a = best.0;
        search(a - 0.04, a + 0.04, 0.01, &mut best);
        let a = best.0;
        search(a - 0.008, a + 0.008, 0.002, &mut best);
        if !best.1.is_finite() {
            return Err(too_small());
        }
        Ok((fit.placement(best.0), best.1))
    }

    /// Unnormalized identity estimate.
    pub fn identity_estimate(&self, image: &Image) -> Result<[f64; ID_DIM]> {
        let (place, _) = self.locate(image)?;
        let reg = regress(image, &place).ok_or_else(|| Error::InvalidInput("identity regression is singular".into()))?;
        Ok(std::array::from_fn(|j| {
            let col = self.id_color[j];
            let nn: f64 = col.iter().map(|v| v * v).sum();
            (0..3).map(|ch| reg.beta[ch][j + 2] * col[ch]).sum::<f64>() / nn
        }))
    }
}

impl IdentityEmbedder for ToyEmbedder {
    fn embed(&self, image: &Image) -> Result<IdentityEmbedding> {
        IdentityEmbedding::normalized(self.identity_estimate(image)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Mask;

    #[test]
    fn ellipse_fit_recovers_a_disk() {
        let m = Mask::from_fn(64, 64, |r, c| {
            let (x, y) = (c as f64 - 31.3, r as f64 - 30.6);
            (x / 20.0).powi(2) + (y / 17.0).powi(2) <= 1.0
        });
        let f = fit_ellipse(&m).unwrap();
        assert!((f.center[0] - 31.3).abs() < 0.1 && (f.center[1] - 30.6).abs() < 0.1);
        let r = f.radii_at(0.0);
        assert!((r[0] - 20.0).abs() < 0.3 && (r[1] - 17.0).abs() < 0.3);
    }
}
