//! Fitted toy encoder: pooled pixels plus seeded random tanh features, with
//! a ridge-regressed linear read-out straight to W+ codes.
//!
//! Training pairs mix generator samples under `θ₀` with aligned crops of
//! random synthetic frames (whose background lies off the generator's span),
//! so the read-out sees the inputs the pipeline feeds it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::generator::{sample_styles, CropScene, ToyGenerator, LATENT_DIM, LAYERS, RESOLUTION};
use super::scene::{exact_transform, render_frame, FacePalette, ToySceneParams};
use crate::alignment::{apply_align, AlignTransform};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Encoder, Generator, GeneratorWeights, LatentCode, ParamSet};

const POOL: usize = 4;
const POOLED: usize = (RESOLUTION / POOL) * (RESOLUTION / POOL) * 3;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFitConfig {
    pub hidden: usize,
    pub generator_samples: usize,
    pub frame_samples: usize,
    pub ridge: f64,
    /// Frame size of the synthetic frames used for crop samples.
    pub frame_size: usize,
}

impl Default for EncoderFitConfig {
    fn default() -> Self {
        EncoderFitConfig {
            hidden: 256,
            generator_samples: 1000,
            frame_samples: 1000,
            ridge: 1e-3,
            frame_size: 96,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    params: ParamSet,
    hidden: usize,
}

impl ToyEncoder {
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let spec = params
            .specs()
            .iter()
            .find(|s| s.name == "rf.weight")
            .ok_or_else(|| Error::Contract("encoder weights lack `rf.weight`".into()))?;
        let hidden = spec.shape.first().copied().unwrap_or(0);
        let expect = [
            ("rf.weight", vec![hidden, POOLED]),
            ("rf.bias", vec![hidden]),
            ("readout.weight", vec![LAYERS * LATENT_DIM, POOLED + hidden + 1]),
        ];
        for (name, shape) in expect {
            let ok = params.specs().iter().any(|s| s.name == name && s.shape == shape);
            if !ok {
                return Err(Error::Contract(format!("encoder tensor `{name}` must have shape {shape:?}")));
            }
        }
        Ok(ToyEncoder { params, hidden })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn feature_len(&self) -> usize {
        POOLED + self.hidden + 1
    }

    fn features(&self, image: &Image) -> Result<Vec<f64>> {
        if image.dims() != (RESOLUTION, RESOLUTION, 3) {
            return Err(Error::Contract(format!(
                "toy encoder expects {RESOLUTION}x{RESOLUTION}x3, got {:?}",
                image.dims()
            )));
        }
        features_with(&self.params, self.hidden, image)
    }

    /// Fits the read-out on generator samples and synthetic-frame crops.
    pub fn fit(gen: &ToyGenerator, theta0: &GeneratorWeights, seed: u64, cfg: &EncoderFitConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE4E0_0001);
        let mut params = ParamSet::new();
        let wdist = Normal::new(0.0, 2.0 / (POOLED as f64).sqrt()).unwrap();
        let bdist = Normal::new(0.0, 0.5).unwrap();
        let rf_w: Vec<f64> = (0..cfg.hidden * POOLED).map(|_| wdist.sample(&mut rng)).collect();
        let rf_b: Vec<f64> = (0..cfg.hidden).map(|_| bdist.sample(&mut rng)).collect();
        params.push("rf.weight", &[cfg.hidden, POOLED], rf_w)?;
        params.push("rf.bias", &[cfg.hidden], rf_b)?;
        let fdim = POOLED + cfg.hidden + 1;
        let out_dim = LAYERS * LATENT_DIM;
        params.push("readout.weight", &[out_dim, fdim], vec![0.0; out_dim * fdim])?;
        params.round_to_f32();

        let total = cfg.generator_samples + cfg.frame_samples;
        let mut x = DMatrix::<f64>::zeros(total, fdim);
        let mut y = DMatrix::<f64>::zeros(total, out_dim);
        let mut put = |row: usize, phi: &[f64], target: &LatentCode| {
            for (i, v) in phi.iter().enumerate() {
                x[(row, i)] = *v;
            }
            for (k, v) in target.data().iter().enumerate() {
                y[(row, k)] = *v;
            }
        };
        for row in 0..cfg.generator_samples {
            let s = sample_styles(&mut rng);
            let w = gen.map_styles(&s);
            let img = gen.generate(&w, theta0)?;
            put(row, &features_with(&params, cfg.hidden, &img)?, &w);
        }
        let palette = FacePalette::default();
        for row in cfg.generator_samples..total {
            let (img, w) = frame_sample(gen, &mut rng, cfg.frame_size, &palette)?;
            put(row, &features_with(&params, cfg.hidden, &img)?, &w);
        }
        let mut xtx = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        let n = total.max(1) as f64;
        for i in 0..fdim - 1 {
            xtx[(i, i)] += cfg.ridge * n;
        }
        xtx[(fdim - 1, fdim - 1)] += 1e-9;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Certification("encoder normal equations are not positive definite".into()))?;
        let sol = chol.solve(&xty);
        let readout = params.get_mut("readout.weight")?;
        for k in 0..out_dim {
            for i in 0..fdim {
                readout[k * fdim + i] = sol[(i, k)];
            }
        }
        params.round_to_f32();
        ToyEncoder::from_params(params)
    }
}

/// An aligned crop of a random synthetic frame, seen through a slightly
/// perturbed alignment, and its ground-truth code.
pub fn frame_sample(
    gen: &ToyGenerator,
    rng: &mut impl Rng,
    frame_size: usize,
    palette: &FacePalette,
) -> Result<(Image, LatentCode)> {
    let scene = ToySceneParams::random(rng, frame_size);
    let exact = exact_transform(&scene, RESOLUTION)?;
    let jitter = AlignTransform::from_parts(
        1.0 + rng.random_range(-0.02..0.02),
        rng.random_range(-0.03..0.03),
        [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        RESOLUTION,
    );
    // jitter acts about the crop centre
    let c = RESOLUTION as f64 * 0.5;
    let to_c = AlignTransform::from_parts(1.0, 0.0, [-c, -c], RESOLUTION);
    let from_c = AlignTransform::from_parts(1.0, 0.0, [c, c], RESOLUTION);
    let t = from_c.compose(&jitter.compose(&to_c.compose(&exact)));
    let frame = render_frame(&scene, frame_size, frame_size, palette);
    let crop = apply_align(&frame, &t)?;
    let styles = CropScene::from_frame_scene(&scene, &t)?.to_styles();
    Ok((crop, gen.map_styles(&styles)))
}

fn features_with(params: &ParamSet, hidden: usize, image: &Image) -> Result<Vec<f64>> {
    let side = RESOLUTION / POOL;
    let mut pooled = vec![0.0; POOLED];
    let norm = 1.0 / (POOL * POOL) as f64;
    for r in 0..RESOLUTION {
        for c in 0..RESOLUTION {
            let base = ((r / POOL) * side + c / POOL) * 3;
            for ch in 0..3 {
                pooled[base + ch] += image.get(r, c, ch) * norm;
            }
        }
    }
    pooled.iter_mut().for_each(|v| *v = 2.0 * (*v - 0.5));
    let w = params.get("rf.weight")?;
    let b = params.get("rf.bias")?;
    let mut phi = Vec::with_capacity(POOLED + hidden + 1);
    phi.extend_from_slice(&pooled);
    for h in 0..hidden {
        let row = &w[h * POOLED..(h + 1) * POOLED];
        let z: f64 = row.iter().zip(&pooled).map(|(a, x)| a * x).sum::<f64>() + b[h];
        phi.push(z.tanh());
    }
    phi.push(1.0);
    Ok(phi)
}

impl Encoder for ToyEncoder {
    fn encode(&self, image: &Image) -> Result<LatentCode> {
        let phi = self.features(image)?;
        let fdim = self.feature_len();
        let r = self.params.get("readout.weight")?;
        let out: Vec<f64> = (0..LAYERS * LATENT_DIM)
            .map(|k| r[k * fdim..(k + 1) * fdim].iter().zip(&phi).map(|(a, x)| a * x).sum())
            .collect();
        LatentCode::from_vec(LAYERS, LATENT_DIM, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_resolution() {
        let (g, t) = ToyGenerator::new(3);
        let cfg = EncoderFitConfig {
            hidden: 8,
            generator_samples: 40,
            frame_samples: 0,
            ..Default::default()
        };
        let e = ToyEncoder::fit(&g, &t, 3, &cfg).unwrap();
        assert!(matches!(e.encode(&Image::zeros(32, 32, 3)), Err(Error::Contract(_))));
        let img = g.generate(&g.mean_code(), &t).unwrap();
        assert_eq!(e.encode(&img).unwrap(), e.encode(&img).unwrap());
    }
}
