//! Dense float images and binary masks.
//!
//! Images are stored row-major as `height × width × channels` with values
//! nominally in `[0, 1]`. Pixel `(row, col)` has its center at continuous
//! coordinates `(x = col, y = row)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.idx(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "{what}: image shapes differ ({:?} vs {:?})",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Bilinear sample at continuous coordinates; coordinates outside the
    /// pixel-center grid are clamped (edge replication).
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get(y0, x0, ch);
            let b = self.get(y0, x1, ch);
            let c = self.get(y1, x0, ch);
            let d = self.get(y1, x1, ch);
            *o = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
        }
    }

    /// Mean squared difference over pixels and channels.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "mse")?;
        let n = self.data.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `(1 - t)·self + t·other`.
    pub fn lerp(&self, other: &Image, t: f64) -> Result<Image> {
        self.check_same_shape(other, "lerp")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Ok(Image { data, ..*self })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn clamp01(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single-channel image holding the mask as 0.0 / 1.0.
    /// SHA-256 over the shape and the exact f64 bit patterns.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in [self.height, self.width, self.channels] {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn from_mask(mask: &Mask) -> Image {
        Image {
            height: mask.height,
            width: mask.width,
            channels: 1,
            data: mask
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Separable Gaussian blur with kernel radius `ceil(3·sigma)` and edge
    /// replication. `sigma <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let (h, w, c) = self.dims();
        let mut tmp = Image::zeros(h, w, c);
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, wk) in kernel.iter().enumerate() {
                        let cc = (col as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += wk * self.get(row, cc, ch);
                    }
                    tmp.set(row, col, ch, acc);
                }
            }
        }
        let mut out = Image::zeros(h, w, c);
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, wk) in kernel.iter().enumerate() {
                        let rr = (row as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                        acc += wk * tmp.get(rr, col, ch);
                    }
                    out.set(row, col, ch, acc);
                }
            }
        }
        out
    }
}

/// Normalized Gaussian weights on `[-ceil(3σ), ceil(3σ)]`. `sigma == 0`
/// gives the unit impulse.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Binary mask at image resolution.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "mask buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        if !self.same_shape(other) {
            return Err(Error::Contract(format!(
                "mask shapes differ ({}x{} vs {}x{})",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a ^ b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.5, 1.0, 2.3, 3.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn bilinear_at_pixel_centers_is_exact() {
        let img = Image::from_fn(5, 7, 2, |r, c, ch| (r * 10 + c) as f64 + ch as f64 * 0.5);
        let mut out = [0.0; 2];
        img.sample_bilinear(3.0, 2.0, &mut out);
        assert_eq!(out, [23.0, 23.5]);
        img.sample_bilinear(-4.0, 100.0, &mut out);
        assert_eq!(out, [40.0, 40.5]);
        img.sample_bilinear(3.5, 2.0, &mut out);
        assert_eq!(out[0], 23.5);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(9, 6, 3, 0.25);
        let b = img.gaussian_blur(1.7);
        assert!(b.max_abs_diff(&img).unwrap() < 1e-12);
    }
}
