//! Optimizer-based inversion, the baseline for the encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::FrameSequence;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Generator, GeneratorWeights, LatentCode, PerceptualDistance};
use crate::optim::Adam;
use crate::pti::PivotSet;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimInversionConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_l2: f64,
    /// Initial strength of the seeded code noise, ramped to zero by three
    /// quarters of the run.
    pub noise: f64,
    pub seed: u64,
}

impl Default for OptimInversionConfig {
    fn default() -> Self {
        OptimInversionConfig {
            steps: 150,
            learning_rate: 0.03,
            lambda_l2: 10.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl OptimInversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("inversion steps must be at least 1".into()));
        }
        let vals = [self.learning_rate, self.lambda_l2, self.noise];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.learning_rate == 0.0 {
            return Err(Error::Config(
                "inversion learning rate must be positive; weights and noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Perceptual plus weighted L2 reconstruction loss of `w`, with its code gradient.
pub fn reconstruction_loss(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta: &GeneratorWeights,
    w: &LatentCode,
    target: &Image,
    lambda_l2: f64,
) -> Result<(f64, LatentCode)> {
    let r = generator.generate(w, theta)?;
    let (d, _, mut g) = perceptual.distance_grad(target, &r)?;
    let n = r.data().len() as f64;
    let mut mse = 0.0;
    for ((gi, &y), &x) in g.data_mut().iter_mut().zip(r.data()).zip(target.data()) {
        mse += (y - x) * (y - x);
        *gi += lambda_l2 * 2.0 * (y - x) / n;
    }
    let back = generator.backward(w, theta, &g)?;
    Ok((d + lambda_l2 * mse / n, back.code))
}

fn invert_one(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta0: &GeneratorWeights,
    crop: &Image,
    cfg: &OptimInversionConfig,
    seed: u64,
) -> Result<LatentCode> {
    let mut w = generator.mean_code();
    let mut adam = Adam::new(w.data().len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let ramp_end = 0.75 * cfg.steps as f64;
    for step in 0..cfg.steps {
        let strength = cfg.noise * (1.0 - step as f64 / ramp_end).max(0.0).powi(2);
        let probe = if strength > 0.0 {
            let data = w.data().iter().map(|v| v + strength * normal.sample(&mut rng)).collect();
            LatentCode::from_vec(w.layers(), w.dim(), data)?
        } else {
            w.clone()
        };
        let (loss, grad) = reconstruction_loss(generator, perceptual, theta0, &probe, crop, cfg.lambda_l2)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                stage: "invert",
                step,
                loss,
            });
        }
        adam.step(w.data_mut(), grad.data());
    }
    let final_loss = reconstruction_loss(generator, perceptual, theta0, &w, crop, cfg.lambda_l2)?.0;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            stage: "invert",
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(w)
}

/// Per-frame seeded gradient descent from the mean code.
pub fn invert_by_optimization(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta0: &GeneratorWeights,
    crops: &FrameSequence,
    cfg: &OptimInversionConfig,
) -> Result<PivotSet> {
    cfg.validate()?;
    let pivots = crops
        .frames
        .iter()
        .enumerate()
        .map(|(i, c)| invert_one(generator, perceptual, theta0, c, cfg, derive_seed(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let hashes = crops.frames.iter().map(Image::content_hash).collect();
    PivotSet::new(pivots, hashes)
}
