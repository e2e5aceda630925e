//! Temporally smoothed crop-and-align of faces, and the inverse warp used
//! when compositing edited crops back into the source frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_kernel, Image, Mask};

/// Per-frame facial landmarks, `N × K × 2` pixel coordinates (origin top-left).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkTrack {
    num_frames: usize,
    num_landmarks: usize,
    points: Vec<[f64; 2]>,
    pub frame_rate: Option<f64>,
}

impl LandmarkTrack {
    pub fn new(num_frames: usize, num_landmarks: usize, points: Vec<[f64; 2]>) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::InvalidInput("landmark track has no frames".into()));
        }
        if num_landmarks < 5 {
            return Err(Error::InvalidInput(format!(
                "landmark track needs at least 5 landmarks, got {num_landmarks}"
            )));
        }
        if points.len() != num_frames * num_landmarks {
            return Err(Error::InvalidInput(format!(
                "expected {} points, got {}",
                num_frames * num_landmarks,
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "landmark coordinates must be finite".into(),
            ));
        }
        Ok(LandmarkTrack {
            num_frames,
            num_landmarks,
            points,
            frame_rate: None,
        })
    }

    pub fn from_frames(frames: &[Vec<[f64; 2]>]) -> Result<Self> {
        let k = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != k) {
            return Err(Error::InvalidInput(
                "all frames must carry the same number of landmarks".into(),
            ));
        }
        Self::new(frames.len(), k, frames.concat())
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_landmarks(&self) -> usize {
        self.num_landmarks
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn frame(&self, i: usize) -> &[[f64; 2]] {
        &self.points[i * self.num_landmarks..(i + 1) * self.num_landmarks]
    }

    /// `Σ_i |p_{i+1} − p_i|` for one landmark coordinate.
    pub fn total_variation(&self, landmark: usize, axis: usize) -> f64 {
        (1..self.num_frames)
            .map(|i| {
                (self.frame(i)[landmark][axis] - self.frame(i - 1)[landmark][axis]).abs()
            })
            .sum()
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`), folding as often as needed.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Low-pass every landmark coordinate along time with a normalized Gaussian
/// of standard deviation `sigma` frames (radius `ceil(3σ)`, reflect padding).
pub fn smooth_landmarks(track: &LandmarkTrack, sigma: f64) -> Result<LandmarkTrack> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothing sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if track.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "landmark coordinates must be finite".into(),
        ));
    }
    if sigma == 0.0 {
        return Ok(track.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let n = track.num_frames;
    let k = track.num_landmarks;
    let mut points = vec![[0.0; 2]; n * k];
    for i in 0..n {
        for (j, wj) in kernel.iter().enumerate() {
            let src = reflect_index(i as isize + j as isize - r, n);
            for l in 0..k {
                let p = track.points[src * k + l];
                let q = &mut points[i * k + l];
                q[0] += wj * p[0];
                q[1] += wj * p[1];
            }
        }
    }
    Ok(LandmarkTrack {
        points,
        ..track.clone()
    })
}

/// Which landmark indices form the left eye, right eye and mouth; each group
/// is averaged to a single center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkLayout {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub mouth: Vec<usize>,
}

impl LandmarkLayout {
    /// Five-point-plus-contour layout emitted by the toy scenes:
    /// 0 left eye, 1 right eye, 2 nose, 3/4 mouth corners, 5.. jaw contour.
    pub fn toy() -> Self {
        LandmarkLayout {
            left_eye: vec![0],
            right_eye: vec![1],
            mouth: vec![3, 4],
        }
    }

    /// The common 68-point annotation.
    pub fn ibug68() -> Self {
        LandmarkLayout {
            left_eye: (36..42).collect(),
            right_eye: (42..48).collect(),
            mouth: (48..68).collect(),
        }
    }

    fn center(points: &[[f64; 2]], idx: &[usize], what: &str) -> Result<[f64; 2]> {
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("{what} has no landmark indices")));
        }
        let mut c = [0.0; 2];
        for &i in idx {
            let p = points.get(i).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{what} landmark index {i} out of range ({} landmarks)",
                    points.len()
                ))
            })?;
            c[0] += p[0];
            c[1] += p[1];
        }
        let n = idx.len() as f64;
        Ok([c[0] / n, c[1] / n])
    }

    /// Left-eye, right-eye and mouth centers.
    pub fn anchors(&self, points: &[[f64; 2]]) -> Result<[[f64; 2]; 3]> {
        Ok([
            Self::center(points, &self.left_eye, "left eye")?,
            Self::center(points, &self.right_eye, "right eye")?,
            Self::center(points, &self.mouth, "mouth")?,
        ])
    }
}

impl Default for LandmarkLayout {
    fn default() -> Self {
        Self::toy()
    }
}

/// Canonical anchor positions as fractions of the crop side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTemplate {
    pub eye_y: f64,
    pub eye_distance: f64,
    pub mouth_y: f64,
}

impl Default for CanonicalTemplate {
    fn default() -> Self {
        CanonicalTemplate {
            eye_y: 0.40,
            eye_distance: 0.38,
            mouth_y: 0.72,
        }
    }
}

impl CanonicalTemplate {
    /// Template anchors (left eye, right eye, mouth) in crop pixels.
    pub fn anchors(&self, crop_size: usize) -> [[f64; 2]; 3] {
        let s = crop_size as f64;
        [
            [s * (0.5 - self.eye_distance / 2.0), s * self.eye_y],
            [s * (0.5 + self.eye_distance / 2.0), s * self.eye_y],
            [s * 0.5, s * self.mouth_y],
        ]
    }
}

/// Similarity warp mapping full-frame coordinates to aligned-crop coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignTransform {
    pub matrix: [[f64; 3]; 2],
    pub crop_size: usize,
}

impl AlignTransform {
    pub fn identity(crop_size: usize) -> Self {
        AlignTransform {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            crop_size,
        }
    }

    /// `x ↦ scale·R(angle)·x + t`.
    pub fn from_parts(scale: f64, angle: f64, translation: [f64; 2], crop_size: usize) -> Self {
        let (s, c) = angle.sin_cos();
        AlignTransform {
            matrix: [
                [scale * c, -scale * s, translation[0]],
                [scale * s, scale * c, translation[1]],
            ],
            crop_size,
        }
    }

    pub fn from_row_major(v: [f64; 6], crop_size: usize) -> Result<Self> {
        let t = AlignTransform {
            matrix: [[v[0], v[1], v[2]], [v[3], v[4], v[5]]],
            crop_size,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_row_major(&self) -> [f64; 6] {
        let m = &self.matrix;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
    }

    pub fn scale(&self) -> f64 {
        let m = &self.matrix;
        (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs().sqrt()
    }

    pub fn angle(&self) -> f64 {
        self.matrix[1][0].atan2(self.matrix[0][0])
    }

    /// Checks the linear part is `s·R` with `s > 0` to 1e-6.
    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("transform has non-finite entries".into()));
        }
        let tol = 1e-6 * (1.0 + self.scale());
        if (m[0][0] - m[1][1]).abs() > tol || (m[0][1] + m[1][0]).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "transform linear part is not a similarity: {m:?}"
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::InvalidInput("crop size must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    /// Inverse warp (crop → frame).
    pub fn inverse(&self) -> Result<AlignTransform> {
        let m = &self.matrix;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs().sqrt() <= 1e-9 {
            return Err(Error::DegenerateGeometry(format!(
                "transform scale {} is not invertible",
                det.abs().sqrt()
            )));
        }
        let a = m[1][1] / det;
        let b = -m[0][1] / det;
        let c = -m[1][0] / det;
        let d = m[0][0] / det;
        Ok(AlignTransform {
            matrix: [
                [a, b, -(a * m[0][2] + b * m[1][2])],
                [c, d, -(c * m[0][2] + d * m[1][2])],
            ],
            crop_size: self.crop_size,
        })
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &AlignTransform) -> AlignTransform {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + if c == 2 { a[r][2] } else { 0.0 };
            }
        }
        AlignTransform {
            matrix: m,
            crop_size: self.crop_size,
        }
    }
}

/// Least-squares similarity taking `src` onto `dst` (no reflection).
pub fn fit_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<[[f64; 3]; 2]> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::InvalidInput(
            "similarity fit needs at least two point pairs".into(),
        ));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let ms = mean(src);
    let md = mean(dst);
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ms[0], p[1] - ms[1]);
        let (qx, qy) = (q[0] - md[0], q[1] - md[1]);
        re += px * qx + py * qy;
        im += px * qy - py * qx;
        norm += px * px + py * py;
    }
    if norm <= 1e-18 {
        return Err(Error::DegenerateGeometry(
            "source points are coincident".into(),
        ));
    }
    let a = re / norm;
    let b = im / norm;
    Ok([
        [a, -b, md[0] - (a * ms[0] - b * ms[1])],
        [b, a, md[1] - (b * ms[0] + a * ms[1])],
    ])
}

/// Crop geometry shared by every frame of a video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Temporal smoothing of the landmark track, in frames.
    pub sigma: f64,
    pub crop_size: usize,
    pub layout: LandmarkLayout,
    pub template: CanonicalTemplate,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            sigma: 3.0,
            crop_size: 64,
            layout: LandmarkLayout::toy(),
            template: CanonicalTemplate::default(),
        }
    }
}

/// Fit the similarity taking this frame's eye and mouth centers to the
/// canonical template positions inside a `crop_size` square.
pub fn compute_align_transform(
    landmarks: &[[f64; 2]],
    crop_size: usize,
    layout: &LandmarkLayout,
    template: &CanonicalTemplate,
) -> Result<AlignTransform> {
    if landmarks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("landmarks must be finite".into()));
    }
    let src = layout.anchors(landmarks)?;
    let eye_gap = ((src[0][0] - src[1][0]).powi(2) + (src[0][1] - src[1][1]).powi(2)).sqrt();
    if eye_gap <= 1e-9 {
        return Err(Error::DegenerateGeometry(
            "left and right eye centers coincide".into(),
        ));
    }
    let dst = template.anchors(crop_size);
    let matrix = fit_similarity(&src, &dst)?;
    let t = AlignTransform { matrix, crop_size };
    if t.scale() <= 1e-9 {
        return Err(Error::DegenerateGeometry("fitted scale is zero".into()));
    }
    Ok(t)
}

/// Smoothed per-frame transforms for a whole track.
pub fn align_track(track: &LandmarkTrack, cfg: &AlignConfig) -> Result<(LandmarkTrack, Vec<AlignTransform>)> {
    let smoothed = smooth_landmarks(track, cfg.sigma)?;
    let transforms = (0..smoothed.num_frames())
        .map(|i| compute_align_transform(smoothed.frame(i), cfg.crop_size, &cfg.layout, &cfg.template))
        .collect::<Result<Vec<_>>>()?;
    Ok((smoothed, transforms))
}

/// Resample the aligned crop from a full frame (bilinear, edge replication).
pub fn apply_align(frame: &Image, t: &AlignTransform) -> Result<Image> {
    t.validate()?;
    let inv = t.inverse()?;
    let s = t.crop_size;
    let c = frame.channels();
    let mut out = Image::zeros(s, s, c);
    let mut px = vec![0.0; c];
    for row in 0..s {
        for col in 0..s {
            let p = inv.apply([col as f64, row as f64]);
            frame.sample_bilinear(p[0], p[1], &mut px);
            for (ch, v) in px.iter().enumerate() {
                out.set(row, col, ch, *v);
            }
        }
    }
    Ok(out)
}

/// Whether a crop-space point lies on the crop's pixel-center domain.
#[inline]
fn in_crop(q: [f64; 2], crop_size: usize) -> bool {
    const EPS: f64 = 1e-9;
    let m = (crop_size - 1) as f64;
    q[0] >= -EPS && q[1] >= -EPS && q[0] <= m + EPS && q[1] <= m + EPS
}

/// Warp a crop back into `(height, width)` frame coordinates. Pixels whose
/// center does not land on the crop get value 0 and coverage `false`.
pub fn invert_align(crop: &Image, t: &AlignTransform, frame_hw: (usize, usize)) -> Result<(Image, Mask)> {
    t.validate()?;
    t.inverse()?;
    if crop.height() != t.crop_size || crop.width() != t.crop_size {
        return Err(Error::Contract(format!(
            "crop is {}x{}, transform expects {}",
            crop.height(),
            crop.width(),
            t.crop_size
        )));
    }
    let (h, w) = frame_hw;
    let c = crop.channels();
    let mut out = Image::zeros(h, w, c);
    let mut cover = Mask::empty(h, w);
    let mut px = vec![0.0; c];
    for row in 0..h {
        for col in 0..w {
            let q = t.apply([col as f64, row as f64]);
            if in_crop(q, t.crop_size) {
                cover.set(row, col, true);
                crop.sample_bilinear(q[0], q[1], &mut px);
                for (ch, v) in px.iter().enumerate() {
                    out.set(row, col, ch, *v);
                }
            }
        }
    }
    Ok((out, cover))
}

/// Ordered frames with a common shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Image>,
    pub index_offset: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, index_offset: usize) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| !f.same_shape(first)) {
                return Err(Error::InvalidInput(
                    "all frames in a sequence must share a shape".into(),
                ));
            }
        }
        if frames
            .iter()
            .any(|f| f.data().iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidInput(
                "frame values must lie in [0, 1]".into(),
            ));
        }
        Ok(FrameSequence {
            frames,
            index_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
