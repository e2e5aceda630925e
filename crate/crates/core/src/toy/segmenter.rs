//! Analytic face segmenter.
//!
//! Projects per-pixel logits on the colour axis orthogonal to both the hue
//! axis and grey, so neither hue nor background texture moves the decision
//! boundary, and thresholds halfway between skin and background. The
//! boundary then sits where the face coverage is one half: the ellipse edge.

use super::scene::{logit, FacePalette};
use crate::image::{Image, Mask};
use crate::model::{SegMask, Segmenter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySegmenter {
    pub axis: [f64; 3],
    pub threshold: f64,
}

impl Default for ToySegmenter {
    fn default() -> Self {
        Self::for_palette(&FacePalette::default())
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl ToySegmenter {
    pub fn for_palette(p: &FacePalette) -> Self {
        let h = p.skin_hue;
        // h × (1, 1, 1)
        let mut axis = [h[1] - h[2], h[2] - h[0], h[0] - h[1]];
        let diff = [
            p.skin_base[0] - p.bg_base[0],
            p.skin_base[1] - p.bg_base[1],
            p.skin_base[2] - p.bg_base[2],
        ];
        if dot(&axis, &diff) < 0.0 {
            axis = axis.map(|v| -v);
        }
        let threshold = 0.5 * (dot(&axis, &p.skin_base) + dot(&axis, &p.bg_base));
        ToySegmenter { axis, threshold }
    }

    /// Signed margin of one pixel; positive inside the face.
    pub fn margin(&self, image: &Image, row: usize, col: usize) -> f64 {
        if image.channels() < 3 {
            return -1.0;
        }
        let l = [
            logit(image.get(row, col, 0)),
            logit(image.get(row, col, 1)),
            logit(image.get(row, col, 2)),
        ];
        dot(&self.axis, &l) - self.threshold
    }
}

impl Segmenter for ToySegmenter {
    fn segment(&self, image: &Image) -> SegMask {
        let (h, w) = (image.height(), image.width());
        let raw = Mask::from_fn(h, w, |r, c| self.margin(image, r, c) > 0.0);
        fill_holes(&raw)
    }
}

/// Sets every background pixel not 4-connected to the border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut outside = vec![false; h * w];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) && !mask.get(r, c) {
                outside[r * w + c] = true;
                stack.push((r, c));
            }
        }
    }
    while let Some((r, c)) = stack.pop() {
        let mut visit = |rr: usize, cc: usize| {
            if !mask.get(rr, cc) && !outside[rr * w + cc] {
                outside[rr * w + cc] = true;
                stack.push((rr, cc));
            }
        };
        if r > 0 {
            visit(r - 1, c);
        }
        if r + 1 < h {
            visit(r + 1, c);
        }
        if c > 0 {
            visit(r, c - 1);
        }
        if c + 1 < w {
            visit(r, c + 1);
        }
    }
    Mask::from_fn(h, w, |r, c| !outside[r * w + c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::scene::sigmoid;

    #[test]
    fn fills_enclosed_holes_only() {
        let ring = Mask::from_fn(7, 7, |r, c| (1..=5).contains(&r) && (1..=5).contains(&c) && !(r == 3 && c == 3));
        let filled = fill_holes(&ring);
        assert!(filled.get(3, 3));
        assert!(!filled.get(0, 0));
        assert_eq!(filled.count(), 25);
    }

    #[test]
    fn textured_background_is_empty() {
        let p = FacePalette::default();
        let img = Image::from_fn(8, 8, 3, |r, c, ch| sigmoid(p.bg_base[ch] + ((r * 3 + c) % 5) as f64 * 0.4 - 0.8));
        assert!(ToySegmenter::default().segment(&img).is_empty());
    }

    #[test]
    fn boundary_is_at_half_coverage_for_any_hue() {
        let p = FacePalette::default();
        let seg = ToySegmenter::for_palette(&p);
        for hue in [-1.0, 0.0, 1.0] {
            for tex in [-1.0, 0.3] {
                let px = |a: f64| {
                    Image::from_fn(1, 1, 3, |_, _, ch| {
                        let f = p.skin_base[ch] + p.skin_hue[ch] * hue;
                        let b = p.bg_base[ch] + tex;
                        sigmoid((1.0 - a) * b + a * f)
                    })
                };
                assert!(seg.margin(&px(0.52), 0, 0) > 0.0);
                assert!(seg.margin(&px(0.48), 0, 0) < 0.0);
            }
        }
    }
}
