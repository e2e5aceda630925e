//! Perceptual distance stand-in: a frozen random-convolution feature pyramid.
//!
//! Three scales (full, 1/2, 1/4 via 2×2 average pooling); at each scale eight
//! random 3×3×3 filters followed by `tanh`. The distance is the sum over
//! scales of the mean squared feature difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image::Image;
use crate::model::PerceptualDistance;

/// Seed of the frozen filter bank.
pub const PERCEPTUAL_SEED: u64 = 0x1_9195;
const SCALES: usize = 3;
const FILTERS: usize = 8;
const TAPS: usize = 27;

#[derive(Clone, Debug)]
pub struct RandomConvPerceptual {
    /// `SCALES × FILTERS × (27 taps + bias)`.
    filters: Vec<[f64; TAPS + 1]>,
}

impl Default for RandomConvPerceptual {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

struct Pyramid {
    levels: Vec<Image>,
    feats: Vec<Vec<f64>>,
}

fn pool2(img: &Image) -> Image {
    let (h, w, c) = img.dims();
    let (h2, w2) = (h / 2, w / 2);
    Image::from_fn(h2, w2, c, |r, col, ch| {
        0.25 * (img.get(2 * r, 2 * col, ch)
            + img.get(2 * r + 1, 2 * col, ch)
            + img.get(2 * r, 2 * col + 1, ch)
            + img.get(2 * r + 1, 2 * col + 1, ch))
    })
}

impl RandomConvPerceptual {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tap = Normal::new(0.0, 1.0 / (TAPS as f64).sqrt()).unwrap();
        let bias = Normal::new(0.0, 0.1).unwrap();
        let filters = (0..SCALES * FILTERS)
            .map(|_| {
                let mut f = [0.0; TAPS + 1];
                for v in f.iter_mut().take(TAPS) {
                    *v = tap.sample(&mut rng);
                }
                f[TAPS] = bias.sample(&mut rng);
                f
            })
            .collect();
        RandomConvPerceptual { filters }
    }

    fn pyramid(&self, img: &Image) -> Pyramid {
        let mut levels = Vec::with_capacity(SCALES);
        // LPIPS-style input scaling to [-1, 1]
        let mut cur = Image::from_vec(
            img.height(),
            img.width(),
            img.channels(),
            img.data().iter().map(|v| 2.0 * v - 1.0).collect(),
        )
        .expect("same shape");
        for s in 0..SCALES {
            if s > 0 {
                cur = pool2(&cur);
            }
            levels.push(cur.clone());
        }
        let feats = levels
            .iter()
            .enumerate()
            .map(|(s, lvl)| self.conv_tanh(s, lvl))
            .collect();
        Pyramid { levels, feats }
    }

    fn conv_tanh(&self, scale: usize, img: &Image) -> Vec<f64> {
        let (h, w, c) = img.dims();
        if h < 3 || w < 3 {
            return Vec::new();
        }
        let (oh, ow) = (h - 2, w - 2);
        let mut out = vec![0.0; FILTERS * oh * ow];
        let data = img.data();
        for k in 0..FILTERS {
            let f = &self.filters[scale * FILTERS + k];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = f[TAPS];
                    let mut t = 0;
                    for di in 0..3 {
                        let base = ((i + di) * w + j) * c;
                        for v in &data[base..base + 3 * c] {
                            acc += f[t] * v;
                            t += 1;
                        }
                    }
                    out[(k * oh + i) * ow + j] = acc.tanh();
                }
            }
        }
        out
    }

    /// Pull `g_feat` back through tanh and the convolution onto the level image.
    fn conv_backward(&self, scale: usize, img: &Image, feat: &[f64], g_feat: &[f64]) -> Image {
        let (h, w, c) = img.dims();
        let mut g = Image::zeros(h, w, c);
        if h < 3 || w < 3 {
            return g;
        }
        let (oh, ow) = (h - 2, w - 2);
        let gd = g.data_mut();
        for k in 0..FILTERS {
            let f = &self.filters[scale * FILTERS + k];
            for i in 0..oh {
                for j in 0..ow {
                    let o = (k * oh + i) * ow + j;
                    let gpre = g_feat[o] * (1.0 - feat[o] * feat[o]);
                    if gpre == 0.0 {
                        continue;
                    }
                    let mut t = 0;
                    for di in 0..3 {
                        let base = ((i + di) * w + j) * c;
                        for v in &mut gd[base..base + 3 * c] {
                            *v += gpre * f[t];
                            t += 1;
                        }
                    }
                }
            }
        }
        g
    }

    fn grad_from(&self, pyr: &Pyramid, g_feats: &[Vec<f64>]) -> Image {
        let mut g_level: Option<Image> = None;
        for s in (0..SCALES).rev() {
            let mut g = self.conv_backward(s, &pyr.levels[s], &pyr.feats[s], &g_feats[s]);
            if let Some(up) = g_level.take() {
                // unpool: each coarse gradient spreads over its 2×2 block
                let (h, w, c) = up.dims();
                for r in 0..h {
                    for col in 0..w {
                        for ch in 0..c {
                            let v = 0.25 * up.get(r, col, ch);
                            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = g.idx(2 * r + dr, 2 * col + dc, ch);
                                g.data_mut()[i] += v;
                            }
                        }
                    }
                }
            }
            g_level = Some(g);
        }
        let mut g = g_level.expect("at least one scale");
        // input scaling 2x - 1
        g.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        g
    }
}

impl PerceptualDistance for RandomConvPerceptual {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        a.check_same_shape(b, "perceptual distance")?;
        let pa = self.pyramid(a);
        let pb = self.pyramid(b);
        Ok(pa
            .feats
            .iter()
            .zip(&pb.feats)
            .map(|(fa, fb)| {
                let n = fa.len().max(1) as f64;
                fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
            })
            .sum())
    }

    fn distance_grad(&self, a: &Image, b: &Image) -> Result<(f64, Image, Image)> {
        a.check_same_shape(b, "perceptual distance")?;
        let pa = self.pyramid(a);
        let pb = self.pyramid(b);
        let mut d = 0.0;
        let mut ga = Vec::with_capacity(SCALES);
        let mut gb = Vec::with_capacity(SCALES);
        for (fa, fb) in pa.feats.iter().zip(&pb.feats) {
            let n = fa.len().max(1) as f64;
            let mut g = Vec::with_capacity(fa.len());
            for (x, y) in fa.iter().zip(fb) {
                d += (x - y) * (x - y) / n;
                g.push(2.0 * (x - y) / n);
            }
            gb.push(g.iter().map(|v| -v).collect::<Vec<_>>());
            ga.push(g);
        }
        Ok((d, self.grad_from(&pa, &ga), self.grad_from(&pb, &gb)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_on_identical_and_symmetric() {
        let p = RandomConvPerceptual::default();
        let a = random_image(1, 20);
        let b = random_image(2, 20);
        assert_eq!(p.distance(&a, &a).unwrap(), 0.0);
        let d1 = p.distance(&a, &b).unwrap();
        let d2 = p.distance(&b, &a).unwrap();
        assert!(d1 > 0.0);
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn constant_shift_is_visible() {
        let p = RandomConvPerceptual::default();
        let a = Image::filled(16, 16, 3, 0.4);
        let b = Image::filled(16, 16, 3, 0.5);
        assert!(p.distance(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = RandomConvPerceptual::default();
        let a = random_image(3, 16);
        let b = random_image(4, 16);
        let (_, ga, gb) = p.distance_grad(&a, &b).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let i = rng.random_range(0..a.data().len());
            let mut ap = a.clone();
            ap.data_mut()[i] += h;
            let mut am = a.clone();
            am.data_mut()[i] -= h;
            let fd = (p.distance(&ap, &b).unwrap() - p.distance(&am, &b).unwrap()) / (2.0 * h);
            assert!((fd - ga.data()[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "a[{i}]: {fd} vs {}", ga.data()[i]);
            let mut bp = b.clone();
            bp.data_mut()[i] += h;
            let mut bm = b.clone();
            bm.data_mut()[i] -= h;
            let fd = (p.distance(&a, &bp).unwrap() - p.distance(&a, &bm).unwrap()) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }
}
