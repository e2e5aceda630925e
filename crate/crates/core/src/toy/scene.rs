//! Procedural "face" scenes: an ellipse with eyes, a curved mouth and four
//! identity blotches over a smooth textured background.
//!
//! The same face function is used by the toy generator (in crop space) and
//! by the synthetic video renderer (in frame space), so aligned crops of
//! synthetic frames are close to, but not exactly on, the generator manifold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{compute_align_transform, AlignTransform, CanonicalTemplate, LandmarkLayout, LandmarkTrack};
use crate::error::{Error, Result};
use crate::image::Image;

/// Edge softness of the face ellipse, in normalized radius units.
pub const EDGE_TAU: f64 = 0.05;

pub const EYES: [[f64; 2]; 2] = [[-0.55, -0.35], [0.55, -0.35]];
pub const EYE_SIGMA: f64 = 0.12;
pub const NOSE: [f64; 2] = [0.0, 0.1];
pub const MOUTH_Y: f64 = 0.55;
pub const MOUTH_HALF_WIDTH: f64 = 0.32;
pub const MOUTH_SIGMA: f64 = 0.07;
pub const MOUTH_CURVE: f64 = 0.1;
pub const MOUTH_WINDOW: f64 = 0.3;

/// Centers of the identity blotches (forehead, cheeks, nose bridge).
pub const ID_CENTERS: [[f64; 2]; 4] = [[0.0, -0.6], [-0.5, 0.2], [0.5, 0.2], [0.0, 0.1]];
pub const ID_SIGMA: f64 = 0.15;
pub const ID_DIM: usize = 4;

/// Number of jaw-contour landmarks emitted after the five inner points.
pub const CONTOUR_POINTS: usize = 12;
pub const NUM_LANDMARKS: usize = 5 + CONTOUR_POINTS;

/// Appearance constants of the face and background, in logit space.
#[derive(Clone, Debug, PartialEq)]
pub struct FacePalette {
    pub skin_base: [f64; 3],
    pub skin_hue: [f64; 3],
    pub eye_depth: [f64; 3],
    pub mouth_depth: [f64; 3],
    pub id_color: [[f64; 3]; ID_DIM],
    pub bg_base: [f64; 3],
}

impl Default for FacePalette {
    fn default() -> Self {
        FacePalette {
            skin_base: [1.3, 0.3, -0.9],
            skin_hue: [0.25, 0.2, -0.1],
            eye_depth: [1.8, 1.6, 1.0],
            mouth_depth: [1.6, 2.0, 1.0],
            id_color: [
                [0.6, 0.0, 0.3],
                [0.0, 0.6, 0.2],
                [0.3, 0.3, -0.3],
                [0.45, -0.35, 0.1],
            ],
            bg_base: [-1.4, 0.2, 0.8],
        }
    }
}

/// Face appearance at one point in face-local coordinates, with the partial
/// derivatives the generator's backward pass needs.
#[derive(Clone, Copy, Debug, Default)]
pub struct FaceSample {
    pub eyes: f64,
    pub eyes_du: f64,
    pub eyes_dv: f64,
    pub mouth: f64,
    pub mouth_du: f64,
    pub mouth_dv: f64,
    pub mouth_dcurv: f64,
    pub ids: [f64; ID_DIM],
    pub ids_du: [f64; ID_DIM],
    pub ids_dv: [f64; ID_DIM],
}

impl FaceSample {
    pub fn at(u: f64, v: f64, curvature: f64) -> Self {
        let mut s = FaceSample::default();
        let inv_e = 1.0 / (EYE_SIGMA * EYE_SIGMA);
        for e in EYES {
            let (du, dv) = (u - e[0], v - e[1]);
            let g = (-(du * du + dv * dv) * 0.5 * inv_e).exp();
            s.eyes += g;
            s.eyes_du -= du * inv_e * g;
            s.eyes_dv -= dv * inv_e * g;
        }

        let q = u / MOUTH_HALF_WIDTH;
        let shape = 1.0 - q * q;
        let vm = MOUTH_Y + MOUTH_CURVE * curvature * shape;
        let dvm_du = MOUTH_CURVE * curvature * (-2.0 * u / (MOUTH_HALF_WIDTH * MOUTH_HALF_WIDTH));
        let dvm_dc = MOUTH_CURVE * shape;
        let inv_m = 1.0 / (MOUTH_SIGMA * MOUTH_SIGMA);
        let g = (-(v - vm) * (v - vm) * 0.5 * inv_m).exp();
        let dg_dv = -(v - vm) * inv_m * g;
        let dg_dvm = -dg_dv;
        let w4 = MOUTH_WINDOW.powi(4);
        let win = (-u.powi(4) / (2.0 * w4)).exp();
        let dwin_du = -(2.0 * u.powi(3) / w4) * win;
        s.mouth = g * win;
        s.mouth_du = win * dg_dvm * dvm_du + g * dwin_du;
        s.mouth_dv = win * dg_dv;
        s.mouth_dcurv = win * dg_dvm * dvm_dc;

        let inv_p = 1.0 / (ID_SIGMA * ID_SIGMA);
        for (j, c) in ID_CENTERS.iter().enumerate() {
            let (du, dv) = (u - c[0], v - c[1]);
            let g = (-(du * du + dv * dv) * 0.5 * inv_p).exp();
            s.ids[j] = g;
            s.ids_du[j] = -du * inv_p * g;
            s.ids_dv[j] = -dv * inv_p * g;
        }
        s
    }

    /// Face logits for one channel.
    #[inline]
    pub fn logit(&self, pal: &FacePalette, ch: usize, hue: f64, identity: &[f64; ID_DIM]) -> f64 {
        let mut f = pal.skin_base[ch] + pal.skin_hue[ch] * hue - pal.eye_depth[ch] * self.eyes
            - pal.mouth_depth[ch] * self.mouth;
        for j in 0..ID_DIM {
            f += identity[j] * pal.id_color[j][ch] * self.ids[j];
        }
        f
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Face placement in some image's pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub angle: f64,
}

impl Placement {
    /// Face-local `(u, v)` of a pixel-space point.
    #[inline]
    pub fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        ((c * dx + s * dy) / self.radii[0], (-s * dx + c * dy) / self.radii[1])
    }

    /// Pixel-space point of face-local `(u, v)`.
    #[inline]
    pub fn to_pixel(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let a = u * self.radii[0];
        let b = v * self.radii[1];
        [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b]
    }

    /// The placement after mapping through a similarity warp.
    pub fn transformed(&self, t: &AlignTransform) -> Placement {
        Placement {
            center: t.apply(self.center),
            radii: [self.radii[0] * t.scale(), self.radii[1] * t.scale()],
            angle: self.angle + t.angle(),
        }
    }
}

/// Soft face coverage at radius `rho`.
#[inline]
pub fn face_alpha(rho: f64) -> f64 {
    sigmoid((1.0 - rho) / EDGE_TAU)
}

/// Landmarks in face-local coordinates: eyes, nose, mouth corners, contour.
pub fn local_landmarks() -> Vec<[f64; 2]> {
    let mut pts = vec![
        EYES[0],
        EYES[1],
        NOSE,
        [-MOUTH_HALF_WIDTH, MOUTH_Y],
        [MOUTH_HALF_WIDTH, MOUTH_Y],
    ];
    for k in 0..CONTOUR_POINTS {
        let a = std::f64::consts::TAU * k as f64 / CONTOUR_POINTS as f64;
        pts.push([a.cos(), a.sin()]);
    }
    pts
}

/// Smooth background made of a few plane waves, in logit space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundTexture {
    /// `(kx, ky, phase, amplitude)` per wave, `k` in radians per pixel.
    pub waves: Vec<[f64; 4]>,
}

impl BackgroundTexture {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB6C0_11D5);
        let waves = (0..4)
            .map(|_| {
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let period = rng.random_range(24.0..48.0);
                let k = std::f64::consts::TAU / period;
                [
                    k * dir.cos(),
                    k * dir.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.2..0.4),
                ]
            })
            .collect();
        BackgroundTexture { waves }
    }

    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w[3] * (w[0] * x + w[1] * y + w[2]).cos())
            .sum()
    }
}

/// Semantic scene coordinates for one frame (frame pixel space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySceneParams {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub roll: f64,
    pub hue: f64,
    pub mouth_curvature: f64,
    pub identity: [f64; ID_DIM],
    pub background_seed: u64,
}

impl ToySceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radii[0] > 0.0 && self.radii[1] > 0.0) {
            return Err(Error::InvalidInput("face radii must be positive".into()));
        }
        let all = [
            self.center[0],
            self.center[1],
            self.radii[0],
            self.radii[1],
            self.roll,
            self.hue,
            self.mouth_curvature,
        ];
        if all.iter().chain(&self.identity).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scene parameters must be finite".into()));
        }
        if self.hue.abs() > 1.0 || self.mouth_curvature.abs() > 1.0 {
            return Err(Error::InvalidInput(
                "hue and mouth curvature must lie in [-1, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn placement(&self) -> Placement {
        Placement {
            center: self.center,
            radii: self.radii,
            angle: self.roll,
        }
    }

    /// Continuous coordinates as one vector (background seed excluded).
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![
            self.center[0],
            self.center[1],
            self.radii[0],
            self.radii[1],
            self.roll,
            self.hue,
            self.mouth_curvature,
        ];
        v.extend_from_slice(&self.identity);
        v
    }

    pub fn lerp(&self, other: &ToySceneParams, t: f64) -> ToySceneParams {
        let l = |a: f64, b: f64| a + (b - a) * t;
        ToySceneParams {
            center: [l(self.center[0], other.center[0]), l(self.center[1], other.center[1])],
            radii: [l(self.radii[0], other.radii[0]), l(self.radii[1], other.radii[1])],
            roll: l(self.roll, other.roll),
            hue: l(self.hue, other.hue),
            mouth_curvature: l(self.mouth_curvature, other.mouth_curvature),
            identity: std::array::from_fn(|j| l(self.identity[j], other.identity[j])),
            background_seed: self.background_seed,
        }
    }

    /// Landmarks in frame pixels, laid out as [`LandmarkLayout::toy`].
    pub fn landmarks(&self) -> Vec<[f64; 2]> {
        let p = self.placement();
        local_landmarks()
            .into_iter()
            .map(|q| p.to_pixel(q[0], q[1]))
            .collect()
    }

    /// A random in-range scene for a `frame_size` square frame.
    pub fn random(rng: &mut impl Rng, frame_size: usize) -> Self {
        let s = frame_size as f64;
        let ry = rng.random_range(0.18..0.22) * s;
        let aspect = rng.random_range(0.92..1.02);
        ToySceneParams {
            center: [
                s * 0.5 + rng.random_range(-0.06..0.06) * s,
                s * 0.5 + rng.random_range(-0.06..0.06) * s,
            ],
            radii: [ry * aspect, ry],
            roll: rng.random_range(-0.15..0.15),
            hue: rng.random_range(-0.8..0.8),
            mouth_curvature: rng.random_range(-0.8..0.8),
            identity: random_identity(rng),
            background_seed: rng.random(),
        }
    }
}

/// A random identity vector: uniform direction, norm in `[0.6, 1.0]`.
pub fn random_identity(rng: &mut impl Rng) -> [f64; ID_DIM] {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: [f64; ID_DIM] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            let r = rng.random_range(0.6..1.0);
            return v.map(|x| x * r / n);
        }
    }
}

/// Render a full frame for `scene` (no learned residuals).
pub fn render_frame(scene: &ToySceneParams, height: usize, width: usize, palette: &FacePalette) -> Image {
    let bg = BackgroundTexture::from_seed(scene.background_seed);
    let place = scene.placement();
    let mut img = Image::zeros(height, width, 3);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = (col as f64, row as f64);
            let (u, v) = place.local(x, y);
            let rho = (u * u + v * v + 1e-12).sqrt();
            let alpha = face_alpha(rho);
            let face = FaceSample::at(u, v, scene.mouth_curvature);
            let tex = bg.value(x, y);
            for ch in 0..3 {
                let b = palette.bg_base[ch] + tex;
                let f = face.logit(palette, ch, scene.hue, &scene.identity);
                img.set(row, col, ch, sigmoid((1.0 - alpha) * b + alpha * f));
            }
        }
    }
    img
}

/// How the scene evolves over a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub start: ToySceneParams,
    pub end: ToySceneParams,
    /// Head-sway amplitude in pixels, added to the face center.
    pub wobble: f64,
    /// Sway period in frames.
    pub wobble_period: f64,
    pub frame_size: usize,
}

impl TrajectorySpec {
    pub fn constant(scene: ToySceneParams, frame_size: usize) -> Self {
        TrajectorySpec {
            start: scene.clone(),
            end: scene,
            wobble: 0.0,
            wobble_period: 1.0,
            frame_size,
        }
    }

    /// A smooth random clip of one identity.
    pub fn random(seed: u64, frame_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = ToySceneParams::random(&mut rng, frame_size);
        let mut end = ToySceneParams::random(&mut rng, frame_size);
        end.identity = start.identity;
        end.background_seed = start.background_seed;
        // keep the motion modest, like a talking head
        end.center = [
            start.center[0] + rng.random_range(-4.0..4.0),
            start.center[1] + rng.random_range(-3.0..3.0),
        ];
        end.radii = [
            start.radii[0] * rng.random_range(0.95..1.05),
            start.radii[1] * rng.random_range(0.95..1.05),
        ];
        end.roll = start.roll + rng.random_range(-0.08..0.08);
        end.hue = (start.hue + rng.random_range(-0.2..0.2)).clamp(-1.0, 1.0);
        TrajectorySpec {
            start,
            end,
            wobble: rng.random_range(0.5..1.5),
            wobble_period: rng.random_range(10.0..20.0),
            frame_size,
        }
    }

    pub fn at(&self, i: usize, n: usize) -> ToySceneParams {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let mut p = self.start.lerp(&self.end, t);
        let phase = std::f64::consts::TAU * i as f64 / self.wobble_period;
        p.center[0] += self.wobble * phase.sin();
        p.center[1] += 0.5 * self.wobble * (0.7 * phase).sin();
        p
    }
}

/// Synthetic clip with its per-frame scene parameters and landmarks.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub frames: Vec<Image>,
    pub scenes: Vec<ToySceneParams>,
    pub landmarks: LandmarkTrack,
}

/// Render `n` frames along `spec`. Randomness lives in the spec
/// (see [`TrajectorySpec::random`]), so equal specs give equal clips.
pub fn make_synthetic_video(spec: &TrajectorySpec, n: usize, palette: &FacePalette) -> Result<SyntheticVideo> {
    if n < 2 {
        return Err(Error::InvalidInput("a synthetic video needs at least two frames".into()));
    }
    let scenes: Vec<ToySceneParams> = (0..n).map(|i| spec.at(i, n)).collect();
    for s in &scenes {
        s.validate()?;
    }
    let frames = scenes
        .iter()
        .map(|s| render_frame(s, spec.frame_size, spec.frame_size, palette))
        .collect();
    let lm: Vec<Vec<[f64; 2]>> = scenes.iter().map(ToySceneParams::landmarks).collect();
    Ok(SyntheticVideo {
        frames,
        scenes,
        landmarks: LandmarkTrack::from_frames(&lm)?,
    })
}

/// Exact (unsmoothed) alignment of one synthetic frame.
pub fn exact_transform(scene: &ToySceneParams, crop_size: usize) -> Result<AlignTransform> {
    compute_align_transform(
        &scene.landmarks(),
        crop_size,
        &LandmarkLayout::toy(),
        &CanonicalTemplate::default(),
    )
}
