//! Style-based toy generator.
//!
//! A mapping network embeds 17 semantic scene coordinates into four 32-wide
//! latent layers (geometry, appearance, identity, background). The synthesis
//! network applies a learned affine style per layer and renders a soft face
//! ellipse over a learned background basis, plus a learned per-pixel residual,
//! all in logit space followed by a sigmoid.
//!
//! Every parameter group carries a fixed runtime multiplier (stored value ×
//! multiplier = effective value), in the spirit of StyleGAN's equalized
//! learning rate; gradients are reported with respect to stored values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scene::{
    face_alpha, random_identity, sigmoid, FacePalette, FaceSample, Placement, ToySceneParams, ID_DIM,
};
use crate::alignment::{AlignTransform, CanonicalTemplate};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Generator, GeneratorGrad, GeneratorWeights, LatentCode, ParamSet};

pub const RESOLUTION: usize = 64;
pub const LAYERS: usize = 4;
pub const LATENT_DIM: usize = 32;
/// Style width per layer: geometry, appearance, identity, background.
pub const LAYER_STYLES: [usize; LAYERS] = [5, 2, ID_DIM, BG_BASIS];
pub const NUM_STYLES: usize = 5 + 2 + ID_DIM + BG_BASIS;
pub const BG_BASIS: usize = 6;

const SHIFT_SCALE: f64 = 2.5;
const RADIUS_LOG_SCALE: f64 = 0.11;
const ANGLE_SCALE: f64 = 0.15;
const BG_AMPLITUDE: f64 = 0.5;
const BG_TINT: [f64; 3] = [1.0, 0.95, 0.9];

/// Runtime multipliers per parameter group.
pub const GAIN_STYLE: f64 = 200.0;
pub const GAIN_PALETTE: f64 = 100.0;
pub const GAIN_BACKGROUND: f64 = 100.0;
pub const GAIN_RESIDUAL: f64 = 300.0;

pub const BACKEND_ID: &str = "toy-stylegen-v1";

fn style_offset(layer: usize) -> usize {
    LAYER_STYLES[..layer].iter().sum()
}

/// Face placement in crop pixels for the zero style, i.e. the placement whose
/// eye and mouth landmarks land exactly on the canonical template.
pub fn canonical_placement(crop_size: usize) -> Placement {
    let t = CanonicalTemplate::default().anchors(crop_size);
    let eye = super::scene::EYES[1];
    let rx = (t[1][0] - t[0][0]) / (2.0 * eye[0]);
    let ry = (t[2][1] - t[0][1]) / (super::scene::MOUTH_Y - eye[1]);
    Placement {
        center: [t[2][0], t[0][1] - eye[1] * ry],
        radii: [rx, ry],
        angle: 0.0,
    }
}

/// Crop-space scene decoded from the 17 style coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CropScene {
    pub placement: Placement,
    pub hue: f64,
    pub mouth_curvature: f64,
    pub identity: [f64; ID_DIM],
    pub background: [f64; BG_BASIS],
}

impl CropScene {
    pub fn from_styles(s: &[f64]) -> Self {
        let c = canonical_placement(RESOLUTION);
        CropScene {
            placement: Placement {
                center: [c.center[0] + SHIFT_SCALE * s[0], c.center[1] + SHIFT_SCALE * s[1]],
                radii: [
                    c.radii[0] * (RADIUS_LOG_SCALE * s[2]).exp(),
                    c.radii[1] * (RADIUS_LOG_SCALE * s[3]).exp(),
                ],
                angle: ANGLE_SCALE * s[4],
            },
            hue: s[5],
            mouth_curvature: s[6],
            identity: std::array::from_fn(|j| s[7 + j]),
            background: std::array::from_fn(|k| s[7 + ID_DIM + k]),
        }
    }

    pub fn to_styles(&self) -> Vec<f64> {
        let c = canonical_placement(RESOLUTION);
        let p = &self.placement;
        let mut s = vec![
            (p.center[0] - c.center[0]) / SHIFT_SCALE,
            (p.center[1] - c.center[1]) / SHIFT_SCALE,
            (p.radii[0] / c.radii[0]).ln() / RADIUS_LOG_SCALE,
            (p.radii[1] / c.radii[1]).ln() / RADIUS_LOG_SCALE,
            p.angle / ANGLE_SCALE,
            self.hue,
            self.mouth_curvature,
        ];
        s.extend_from_slice(&self.identity);
        s.extend_from_slice(&self.background);
        s
    }

    /// Crop-space coordinates of a synthetic frame seen through `t`. The
    /// background coefficients are the least-squares projection of the
    /// warped frame texture onto the initial background basis.
    pub fn from_frame_scene(scene: &ToySceneParams, t: &AlignTransform) -> Result<Self> {
        let placement = scene.placement().transformed(t);
        let inv = t.inverse()?;
        let tex = super::scene::BackgroundTexture::from_seed(scene.background_seed);
        let mut ata = nalgebra::DMatrix::<f64>::zeros(BG_BASIS, BG_BASIS);
        let mut atb = nalgebra::DVector::<f64>::zeros(BG_BASIS);
        for row in 0..RESOLUTION {
            for col in 0..RESOLUTION {
                let (u, v) = placement.local(col as f64, row as f64);
                let w = 1.0 - face_alpha((u * u + v * v).sqrt());
                let f = t.crop_size as f64 / RESOLUTION as f64;
                let p = inv.apply([col as f64 * f, row as f64 * f]);
                let target = tex.value(p[0], p[1]);
                let b = basis_values(row, col);
                for i in 0..BG_BASIS {
                    atb[i] += w * b[i] * target;
                    for j in 0..BG_BASIS {
                        ata[(i, j)] += w * b[i] * b[j];
                    }
                }
            }
        }
        for i in 0..BG_BASIS {
            ata[(i, i)] += 1e-6;
        }
        let sol = ata
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("background projection is singular".into()))?
            .solve(&atb);
        Ok(CropScene {
            placement,
            hue: scene.hue,
            mouth_curvature: scene.mouth_curvature,
            identity: scene.identity,
            background: std::array::from_fn(|k| sol[k]),
        })
    }
}

/// Initial background basis at one pixel (channel-independent part).
fn basis_values(row: usize, col: usize) -> [f64; BG_BASIS] {
    use std::f64::consts::PI;
    let m = (RESOLUTION - 1) as f64;
    let x = col as f64 / m;
    let y = row as f64 / m;
    [
        (PI * x).cos(),
        (PI * y).cos(),
        (PI * x).cos() * (PI * y).cos(),
        (2.0 * PI * x).cos(),
        (2.0 * PI * y).cos(),
        (2.0 * PI * x).sin() * (PI * y).sin(),
    ]
    .map(|v| v * BG_AMPLITUDE)
}

/// In-distribution style coordinates.
pub fn sample_styles(rng: &mut impl Rng) -> Vec<f64> {
    let mut s: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.extend_from_slice(&random_identity(rng));
    s.extend((0..BG_BASIS).map(|_| rng.random_range(-1.0..1.0)));
    s
}

#[derive(Clone, Debug)]
pub struct ToyGenerator {
    /// Per layer, `LATENT_DIM × styles` with orthonormal columns (row-major).
    mapping: Vec<Vec<f64>>,
}

impl ToyGenerator {
    /// Builds the mapping network and the initial weights `θ₀`.
    pub fn new(seed: u64) -> (ToyGenerator, GeneratorWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E4E_7A70);
        let mapping: Vec<Vec<f64>> = LAYER_STYLES
            .iter()
            .map(|&s| orthonormal_columns(&mut rng, LATENT_DIM, s))
            .collect();
        let gen = ToyGenerator { mapping };
        let mut theta = gen.initial_params();
        theta.round_to_f32();
        let weights = GeneratorWeights::new(BACKEND_ID, "theta0", theta);
        (gen, weights)
    }

    pub fn from_mapping(mapping: Vec<Vec<f64>>) -> Result<ToyGenerator> {
        if mapping.len() != LAYERS
            || mapping
                .iter()
                .zip(LAYER_STYLES)
                .any(|(m, s)| m.len() != LATENT_DIM * s)
        {
            return Err(Error::Contract("toy mapping has the wrong shape".into()));
        }
        Ok(ToyGenerator { mapping })
    }

    pub fn mapping(&self) -> &[Vec<f64>] {
        &self.mapping
    }

    fn initial_params(&self) -> ParamSet {
        let pal = FacePalette::default();
        let mut p = ParamSet::new();
        for (l, &s) in LAYER_STYLES.iter().enumerate() {
            // A_l = U_lᵀ so that A_l·U_l = I
            let u = &self.mapping[l];
            let mut a = vec![0.0; s * LATENT_DIM];
            for i in 0..s {
                for d in 0..LATENT_DIM {
                    a[i * LATENT_DIM + d] = u[d * s + i] / GAIN_STYLE;
                }
            }
            p.push(format!("style.{l}.weight"), &[s, LATENT_DIM], a).unwrap();
            p.push(format!("style.{l}.bias"), &[s], vec![0.0; s]).unwrap();
        }
        let g = |v: &[f64]| v.iter().map(|x| x / GAIN_PALETTE).collect::<Vec<_>>();
        p.push("palette.skin_base", &[3], g(&pal.skin_base)).unwrap();
        p.push("palette.skin_hue", &[3], g(&pal.skin_hue)).unwrap();
        p.push("palette.eye_depth", &[3], g(&pal.eye_depth)).unwrap();
        p.push("palette.mouth_depth", &[3], g(&pal.mouth_depth)).unwrap();
        p.push("palette.id_color", &[ID_DIM, 3], g(&pal.id_color.concat())).unwrap();
        p.push("palette.bg_base", &[3], g(&pal.bg_base)).unwrap();
        let mut basis = Vec::with_capacity(BG_BASIS * RESOLUTION * RESOLUTION * 3);
        for k in 0..BG_BASIS {
            for row in 0..RESOLUTION {
                for col in 0..RESOLUTION {
                    let b = basis_values(row, col)[k];
                    for tint in BG_TINT {
                        basis.push(b * tint / GAIN_BACKGROUND);
                    }
                }
            }
        }
        p.push("bg.basis", &[BG_BASIS, RESOLUTION, RESOLUTION, 3], basis).unwrap();
        p.push("residual", &[RESOLUTION, RESOLUTION, 3], vec![0.0; RESOLUTION * RESOLUTION * 3])
            .unwrap();
        p
    }

    /// Latent code of the given style coordinates (`w_l = U_l·s_l`).
    pub fn map_styles(&self, styles: &[f64]) -> LatentCode {
        let mut w = LatentCode::zeros(LAYERS, LATENT_DIM);
        for (l, &s) in LAYER_STYLES.iter().enumerate() {
            let off = style_offset(l);
            let u = &self.mapping[l];
            let row = w.layer_mut(l);
            for d in 0..LATENT_DIM {
                row[d] = (0..s).map(|i| u[d * s + i] * styles[off + i]).sum();
            }
        }
        w
    }

    /// Style coordinates of a code under the mapping (`s_l = U_lᵀ·w_l`).
    pub fn unmap(&self, w: &LatentCode) -> Vec<f64> {
        let mut out = vec![0.0; NUM_STYLES];
        for (l, &s) in LAYER_STYLES.iter().enumerate() {
            let off = style_offset(l);
            let u = &self.mapping[l];
            let row = w.layer(l);
            for i in 0..s {
                out[off + i] = (0..LATENT_DIM).map(|d| u[d * s + i] * row[d]).sum();
            }
        }
        out
    }

    /// Unit latent direction moving the given style coordinates together.
    pub fn style_direction(&self, coords: &[(usize, f64)]) -> LatentCode {
        let mut s = vec![0.0; NUM_STYLES];
        for &(i, v) in coords {
            s[i] = v;
        }
        let w = self.map_styles(&s);
        let n = w.norm();
        LatentCode::from_vec(LAYERS, LATENT_DIM, w.data().iter().map(|v| v / n).collect()).unwrap()
    }

    /// Effective styles `s_l = A_l·w_l + b_l` under `theta`.
    pub fn styles(&self, w: &LatentCode, theta: &GeneratorWeights) -> Result<Vec<f64>> {
        w.check_shape((LAYERS, LATENT_DIM), "toy generator")?;
        let mut s = vec![0.0; NUM_STYLES];
        for (l, &n) in LAYER_STYLES.iter().enumerate() {
            let a = theta.params.get(&format!("style.{l}.weight"))?;
            let b = theta.params.get(&format!("style.{l}.bias"))?;
            let off = style_offset(l);
            let row = w.layer(l);
            for i in 0..n {
                let dot: f64 = a[i * LATENT_DIM..(i + 1) * LATENT_DIM]
                    .iter()
                    .zip(row)
                    .map(|(x, y)| x * y)
                    .sum();
                s[off + i] = GAIN_STYLE * (dot + b[i]);
            }
        }
        Ok(s)
    }

    fn run(&self, w: &LatentCode, theta: &GeneratorWeights, grad_out: Option<&Image>) -> Result<(Image, Option<GeneratorGrad>)> {
        if theta.backend_id != BACKEND_ID {
            return Err(Error::Contract(format!(
                "weights belong to backend `{}`, not `{BACKEND_ID}`",
                theta.backend_id
            )));
        }
        let params = &theta.params;
        let styles = self.styles(w, theta)?;
        let scene = CropScene::from_styles(&styles);

        let rd = |name: &str, gain: f64| -> Result<Vec<f64>> {
            Ok(params.get(name)?.iter().map(|v| v * gain).collect())
        };
        let skin_base = rd("palette.skin_base", GAIN_PALETTE)?;
        let skin_hue = rd("palette.skin_hue", GAIN_PALETTE)?;
        let eye_depth = rd("palette.eye_depth", GAIN_PALETTE)?;
        let mouth_depth = rd("palette.mouth_depth", GAIN_PALETTE)?;
        let id_color = rd("palette.id_color", GAIN_PALETTE)?;
        let bg_base = rd("palette.bg_base", GAIN_PALETTE)?;
        let basis = params.get("bg.basis")?;
        let residual = params.get("residual")?;
        let basis_r = params.range("bg.basis")?;
        let residual_r = params.range("residual")?;

        let n = RESOLUTION;
        let plane = n * n * 3;
        let place = scene.placement;
        let (sin_a, cos_a) = place.angle.sin_cos();
        let (rx, ry) = (place.radii[0], place.radii[1]);
        let hue = scene.hue;
        let curv = scene.mouth_curvature;
        let id = scene.identity;
        let coef = scene.background;

        let mut out = Image::zeros(n, n, 3);

        if let Some(g) = grad_out {
            if g.dims() != (n, n, 3) {
                return Err(Error::Contract(format!(
                    "gradient image is {:?}, generator renders {n}x{n}x3",
                    g.dims()
                )));
            }
        }
        let mut gp = grad_out.map(|_| vec![0.0; params.len()]);
        // gradients wrt decoded scene quantities
        let (mut g_cx, mut g_cy, mut g_rx, mut g_ry, mut g_ang) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut g_hue, mut g_curv) = (0.0, 0.0);
        let mut g_id = [0.0; ID_DIM];
        let mut g_coef = [0.0; BG_BASIS];
        let mut g_skin_base = [0.0; 3];
        let mut g_skin_hue = [0.0; 3];
        let mut g_eye = [0.0; 3];
        let mut g_mouth = [0.0; 3];
        let mut g_idc = [0.0; ID_DIM * 3];
        let mut g_bgb = [0.0; 3];

        for row in 0..n {
            for col in 0..n {
                let dx = col as f64 - place.center[0];
                let dy = row as f64 - place.center[1];
                let up = cos_a * dx + sin_a * dy;
                let vp = -sin_a * dx + cos_a * dy;
                let u = up / rx;
                let v = vp / ry;
                let rho = (u * u + v * v + 1e-12).sqrt();
                let alpha = face_alpha(rho);
                let face = FaceSample::at(u, v, curv);
                let pix = (row * n + col) * 3;

                let mut face_l = [0.0; 3];
                let mut bg_l = [0.0; 3];
                let mut outv = [0.0; 3];
                for ch in 0..3 {
                    let mut f = skin_base[ch] + skin_hue[ch] * hue - eye_depth[ch] * face.eyes
                        - mouth_depth[ch] * face.mouth;
                    for j in 0..ID_DIM {
                        f += id[j] * id_color[j * 3 + ch] * face.ids[j];
                    }
                    let mut b = bg_base[ch];
                    for k in 0..BG_BASIS {
                        b += coef[k] * GAIN_BACKGROUND * basis[k * plane + pix + ch];
                    }
                    let pre = (1.0 - alpha) * b + alpha * f + GAIN_RESIDUAL * residual[pix + ch];
                    let o = sigmoid(pre);
                    out.data_mut()[pix + ch] = o;
                    face_l[ch] = f;
                    bg_l[ch] = b;
                    outv[ch] = o;
                }

                let (Some(g), Some(gp)) = (grad_out, gp.as_mut()) else {
                    continue;
                };
                let mut g_alpha = 0.0;
                let (mut g_e, mut g_m) = (0.0, 0.0);
                let mut g_pat = [0.0; ID_DIM];
                for ch in 0..3 {
                    let gpre = g.data()[pix + ch] * outv[ch] * (1.0 - outv[ch]);
                    if gpre == 0.0 {
                        continue;
                    }
                    gp[residual_r.start + pix + ch] += GAIN_RESIDUAL * gpre;
                    let gb = gpre * (1.0 - alpha);
                    g_bgb[ch] += gb;
                    for k in 0..BG_BASIS {
                        g_coef[k] += gb * GAIN_BACKGROUND * basis[k * plane + pix + ch];
                        gp[basis_r.start + k * plane + pix + ch] += gb * coef[k] * GAIN_BACKGROUND;
                    }
                    let gf = gpre * alpha;
                    g_skin_base[ch] += gf;
                    g_skin_hue[ch] += gf * hue;
                    g_hue += gf * skin_hue[ch];
                    g_eye[ch] -= gf * face.eyes;
                    g_mouth[ch] -= gf * face.mouth;
                    g_e -= gf * eye_depth[ch];
                    g_m -= gf * mouth_depth[ch];
                    for j in 0..ID_DIM {
                        g_id[j] += gf * id_color[j * 3 + ch] * face.ids[j];
                        g_idc[j * 3 + ch] += gf * id[j] * face.ids[j];
                        g_pat[j] += gf * id[j] * id_color[j * 3 + ch];
                    }
                    g_alpha += gpre * (face_l[ch] - bg_l[ch]);
                }
                let da_drho = -alpha * (1.0 - alpha) / super::scene::EDGE_TAU;
                let mut g_u = g_alpha * da_drho * u / rho + g_e * face.eyes_du + g_m * face.mouth_du;
                let mut g_v = g_alpha * da_drho * v / rho + g_e * face.eyes_dv + g_m * face.mouth_dv;
                for j in 0..ID_DIM {
                    g_u += g_pat[j] * face.ids_du[j];
                    g_v += g_pat[j] * face.ids_dv[j];
                }
                g_curv += g_m * face.mouth_dcurv;
                let g_up = g_u / rx;
                let g_vp = g_v / ry;
                g_rx -= g_u * u / rx;
                g_ry -= g_v * v / ry;
                let g_dx = g_up * cos_a - g_vp * sin_a;
                let g_dy = g_up * sin_a + g_vp * cos_a;
                g_ang += g_up * vp - g_vp * up;
                g_cx -= g_dx;
                g_cy -= g_dy;
            }
        }

        let Some(mut gp) = gp else {
            return Ok((out, None));
        };

        let mut put = |name: &str, gain: f64, vals: &[f64]| -> Result<()> {
            let r = params.range(name)?;
            for (dst, v) in gp[r].iter_mut().zip(vals) {
                *dst += gain * v;
            }
            Ok(())
        };
        put("palette.skin_base", GAIN_PALETTE, &g_skin_base)?;
        put("palette.skin_hue", GAIN_PALETTE, &g_skin_hue)?;
        put("palette.eye_depth", GAIN_PALETTE, &g_eye)?;
        put("palette.mouth_depth", GAIN_PALETTE, &g_mouth)?;
        put("palette.id_color", GAIN_PALETTE, &g_idc)?;
        put("palette.bg_base", GAIN_PALETTE, &g_bgb)?;

        // scene quantities -> styles
        let mut g_s = vec![0.0; NUM_STYLES];
        g_s[0] = SHIFT_SCALE * g_cx;
        g_s[1] = SHIFT_SCALE * g_cy;
        g_s[2] = g_rx * rx * RADIUS_LOG_SCALE;
        g_s[3] = g_ry * ry * RADIUS_LOG_SCALE;
        g_s[4] = ANGLE_SCALE * g_ang;
        g_s[5] = g_hue;
        g_s[6] = g_curv;
        g_s[7..7 + ID_DIM].copy_from_slice(&g_id);
        g_s[7 + ID_DIM..].copy_from_slice(&g_coef);

        // styles -> affine weights and code
        let mut g_w = LatentCode::zeros(LAYERS, LATENT_DIM);
        for (l, &ns) in LAYER_STYLES.iter().enumerate() {
            let off = style_offset(l);
            let a = params.get(&format!("style.{l}.weight"))?;
            let ar = params.range(&format!("style.{l}.weight"))?;
            let br = params.range(&format!("style.{l}.bias"))?;
            let row = w.layer(l);
            let gw = g_w.layer_mut(l);
            for i in 0..ns {
                let gs = g_s[off + i] * GAIN_STYLE;
                gp[br.start + i] += gs;
                for d in 0..LATENT_DIM {
                    gp[ar.start + i * LATENT_DIM + d] += gs * row[d];
                    gw[d] += gs * a[i * LATENT_DIM + d];
                }
            }
        }
        Ok((out, Some(GeneratorGrad { code: g_w, params: gp })))
    }
}

fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut cs: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while cs.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for c in &cs {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cs.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, c) in cs.iter().enumerate() {
        for i in 0..rows {
            out[i * cols + j] = c[i];
        }
    }
    out
}

impl Generator for ToyGenerator {
    fn backend_id(&self) -> &str {
        BACKEND_ID
    }

    fn latent_shape(&self) -> (usize, usize) {
        (LAYERS, LATENT_DIM)
    }

    fn resolution(&self) -> usize {
        RESOLUTION
    }

    fn generate(&self, w: &LatentCode, theta: &GeneratorWeights) -> Result<Image> {
        Ok(self.run(w, theta, None)?.0)
    }

    fn backward(&self, w: &LatentCode, theta: &GeneratorWeights, grad_image: &Image) -> Result<GeneratorGrad> {
        let (_, g) = self.run(w, theta, Some(grad_image))?;
        Ok(g.expect("gradient requested"))
    }

    fn mean_code(&self) -> LatentCode {
        LatentCode::zeros(LAYERS, LATENT_DIM)
    }

    fn sample_code(&self, seed: u64) -> LatentCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.map_styles(&sample_styles(&mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_placement_hits_the_template() {
        let c = canonical_placement(64);
        let t = CanonicalTemplate::default().anchors(64);
        let le = c.to_pixel(super::super::scene::EYES[0][0], super::super::scene::EYES[0][1]);
        let mouth = c.to_pixel(0.0, super::super::scene::MOUTH_Y);
        assert!((le[0] - t[0][0]).abs() < 1e-9 && (le[1] - t[0][1]).abs() < 1e-9);
        assert!((mouth[0] - t[2][0]).abs() < 1e-9 && (mouth[1] - t[2][1]).abs() < 1e-9);
    }

    #[test]
    fn mapping_round_trips_and_theta0_inverts_it() {
        let (g, theta) = ToyGenerator::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample_styles(&mut rng);
        let w = g.map_styles(&s);
        let back = g.unmap(&w);
        let styles = g.styles(&w, &theta).unwrap();
        for i in 0..NUM_STYLES {
            assert!((back[i] - s[i]).abs() < 1e-12);
            assert!((styles[i] - s[i]).abs() < 1e-5, "style {i}");
        }
    }

    #[test]
    fn crop_scene_style_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_styles(&mut rng);
        let back = CropScene::from_styles(&s).to_styles();
        for (a, b) in s.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_code_shape() {
        let (g, theta) = ToyGenerator::new(1);
        let w = LatentCode::zeros(2, LATENT_DIM);
        assert!(matches!(g.generate(&w, &theta), Err(Error::Contract(_))));
    }
}
