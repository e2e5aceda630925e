//! Pivots and pivotal tuning: one generator fine-tuned around every frame's
//! pivot at once.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::FrameSequence;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Encoder, Generator, GeneratorWeights, LatentCode, PerceptualDistance};
use crate::optim::Adam;
use crate::seed::derive_seed;

/// Per-frame latent pivots and the hashes of the crops they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotSet {
    pub pivots: Vec<LatentCode>,
    pub source_crop_hashes: Vec<String>,
}

impl PivotSet {
    pub fn new(pivots: Vec<LatentCode>, source_crop_hashes: Vec<String>) -> Result<Self> {
        if pivots.len() != source_crop_hashes.len() {
            return Err(Error::InvalidInput(format!(
                "{} pivots but {} crop hashes",
                pivots.len(),
                source_crop_hashes.len()
            )));
        }
        if let Some(first) = pivots.first() {
            if pivots.iter().any(|p| p.shape() != first.shape()) {
                return Err(Error::InvalidInput("pivots must share one latent shape".into()));
            }
        }
        if pivots.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("pivots must be finite".into()));
        }
        Ok(PivotSet {
            pivots,
            source_crop_hashes,
        })
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    /// Mean `‖w_{i+1} − w_i‖₂` over adjacent frames (0 for fewer than two).
    pub fn mean_adjacent_distance(&self) -> f64 {
        if self.pivots.len() < 2 {
            return 0.0;
        }
        let s: f64 = self.pivots.windows(2).map(|p| p[0].distance(&p[1])).sum();
        s / (self.pivots.len() - 1) as f64
    }
}

pub fn invert_frames(encoder: &dyn Encoder, crops: &FrameSequence) -> Result<PivotSet> {
    let pivots = crops
        .frames
        .iter()
        .map(|c| encoder.encode(c))
        .collect::<Result<Vec<_>>>()?;
    let hashes = crops.frames.iter().map(Image::content_hash).collect();
    PivotSet::new(pivots, hashes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtiConfig {
    pub lambda_l2: f64,
    pub lambda_r: f64,
    pub learning_rate: f64,
    pub passes_per_frame: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Distance moved from the pivot towards a prior sample for the locality term.
    pub locality_alpha: f64,
}

impl Default for PtiConfig {
    fn default() -> Self {
        PtiConfig {
            lambda_l2: 10.0,
            lambda_r: 0.1,
            learning_rate: 3e-5,
            passes_per_frame: 80,
            batch_size: 4,
            seed: 0,
            locality_alpha: DEFAULT_LOCALITY_ALPHA,
        }
    }
}

/// Toy-scale counterpart of the usual W-space step of 30.
pub const DEFAULT_LOCALITY_ALPHA: f64 = 2.0;

impl PtiConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_l2, self.lambda_r, self.locality_alpha];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("PTI weights must be finite and non-negative".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("PTI learning rate must be positive".into()));
        }
        if self.passes_per_frame == 0 {
            return Err(Error::Config("passes_per_frame must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// `⌈passes · n / batch⌉`.
    pub fn num_steps(&self, num_frames: usize) -> usize {
        (self.passes_per_frame * num_frames).div_ceil(self.batch_size)
    }
}

/// The terms of one objective evaluation, each before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PtiLoss {
    pub recon_lpips: f64,
    pub recon_l2: f64,
    pub locality: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtiTraceRow {
    pub step: usize,
    #[serde(flatten)]
    pub loss: PtiLoss,
}

#[derive(Clone, Debug)]
pub struct PtiResult {
    pub weights: GeneratorWeights,
    pub trace: Vec<PtiTraceRow>,
    /// Full-batch objective before and after tuning, with the same regularizer sample.
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Mean pixel/channel squared error and its gradient wrt `b`.
fn mse_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b, "mse")?;
    let n = a.data().len().max(1) as f64;
    let mut s = 0.0;
    let g = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            s += (y - x) * (y - x);
            2.0 * (y - x) / n
        })
        .collect();
    Ok((s / n, g))
}

/// The locality code `w_p + α·(w_z − w_p)/‖w_z − w_p‖`.
pub fn locality_code(generator: &dyn Generator, pivots: &[LatentCode], sampler_seed: u64, alpha: f64) -> Result<LatentCode> {
    if pivots.is_empty() {
        return Err(Error::InvalidInput("locality regularizer needs at least one pivot".into()));
    }
    let wz = generator.sample_code(derive_seed(sampler_seed, 1));
    let idx = (derive_seed(sampler_seed, 2) % pivots.len() as u64) as usize;
    let wp = &pivots[idx];
    let dir = wz.add_scaled(wp, -1.0)?;
    let n = dir.norm();
    if n < 1e-12 {
        return Ok(wp.clone());
    }
    wp.add_scaled(&dir, alpha / n)
}

/// `d(G(w_r;θ), G(w_r;θ₀)) + MSE` of the same pair, and optionally its θ-gradient.
fn locality_term(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta: &GeneratorWeights,
    theta0: &GeneratorWeights,
    w_r: &LatentCode,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let a = generator.generate(w_r, theta)?;
    let b = generator.generate(w_r, theta0)?;
    if !want_grad {
        return Ok((perceptual.distance(&a, &b)? + a.mse(&b)?, None));
    }
    let (d, ga, _) = perceptual.distance_grad(&a, &b)?;
    let (m, gm) = mse_grad(&b, &a)?;
    let mut g = ga;
    g.data_mut().iter_mut().zip(&gm).for_each(|(x, y)| *x += y);
    let grad = generator.backward(w_r, theta, &g)?;
    Ok((d + m, Some(grad.params)))
}

pub fn locality_regularizer(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta: &GeneratorWeights,
    theta0: &GeneratorWeights,
    pivots: &[LatentCode],
    sampler_seed: u64,
    alpha: f64,
) -> Result<f64> {
    let w_r = locality_code(generator, pivots, sampler_seed, alpha)?;
    Ok(locality_term(generator, perceptual, theta, theta0, &w_r, false)?.0)
}

fn check_batch(pivots: &PivotSet, crops: &FrameSequence, minibatch: &[usize]) -> Result<()> {
    if pivots.len() != crops.len() {
        return Err(Error::Contract(format!(
            "{} pivots for {} crops",
            pivots.len(),
            crops.len()
        )));
    }
    if minibatch.is_empty() {
        return Err(Error::Contract("minibatch is empty".into()));
    }
    if let Some(&i) = minibatch.iter().find(|&&i| i >= crops.len()) {
        return Err(Error::Contract(format!(
            "frame index {i} out of range for {} frames",
            crops.len()
        )));
    }
    Ok(())
}

/// Everything the PTI objective needs besides the weights.
#[derive(Clone, Copy)]
pub struct PtiProblem<'a> {
    pub generator: &'a dyn Generator,
    pub perceptual: &'a dyn PerceptualDistance,
    pub theta0: &'a GeneratorWeights,
    pub pivots: &'a PivotSet,
    pub crops: &'a FrameSequence,
    pub cfg: &'a PtiConfig,
}

impl PtiProblem<'_> {
    /// Objective on `minibatch`; the locality code is drawn from `sampler_seed`.
    pub fn objective(&self, theta: &GeneratorWeights, minibatch: &[usize], sampler_seed: u64) -> Result<PtiLoss> {
        Ok(self.evaluate(theta, minibatch, sampler_seed, false)?.0)
    }

    pub fn objective_grad(
        &self,
        theta: &GeneratorWeights,
        minibatch: &[usize],
        sampler_seed: u64,
    ) -> Result<(PtiLoss, Vec<f64>)> {
        let (l, g) = self.evaluate(theta, minibatch, sampler_seed, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn evaluate(
        &self,
        theta: &GeneratorWeights,
        minibatch: &[usize],
        sampler_seed: u64,
        want_grad: bool,
    ) -> Result<(PtiLoss, Option<Vec<f64>>)> {
        check_batch(self.pivots, self.crops, minibatch)?;
        let cfg = self.cfg;
        let nb = minibatch.len() as f64;
        let mut grad = want_grad.then(|| vec![0.0; theta.params.len()]);
        let (mut lp, mut l2) = (0.0, 0.0);
        for &i in minibatch {
            let w = &self.pivots.pivots[i];
            let c = &self.crops.frames[i];
            let r = self.generator.generate(w, theta)?;
            match grad.as_mut() {
                None => {
                    lp += self.perceptual.distance(c, &r)?;
                    l2 += c.mse(&r)?;
                }
                Some(acc) => {
                    let (d, _, gr) = self.perceptual.distance_grad(c, &r)?;
                    let (m, gm) = mse_grad(c, &r)?;
                    lp += d;
                    l2 += m;
                    let mut g = gr;
                    g.data_mut()
                        .iter_mut()
                        .zip(&gm)
                        .for_each(|(x, y)| *x = (*x + cfg.lambda_l2 * y) / nb);
                    let back = self.generator.backward(w, theta, &g)?;
                    acc.iter_mut().zip(&back.params).for_each(|(a, b)| *a += b);
                }
            }
        }
        lp /= nb;
        l2 /= nb;
        let mut locality = 0.0;
        if cfg.lambda_r > 0.0 {
            let w_r = locality_code(self.generator, &self.pivots.pivots, sampler_seed, cfg.locality_alpha)?;
            let (v, g) = locality_term(self.generator, self.perceptual, theta, self.theta0, &w_r, want_grad)?;
            locality = v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += cfg.lambda_r * b);
            }
        }
        let total = lp + cfg.lambda_l2 * l2 + cfg.lambda_r * locality;
        Ok((
            PtiLoss {
                recon_lpips: lp,
                recon_l2: l2,
                locality,
                total,
            },
            grad,
        ))
    }
}

/// Functional form of [`PtiProblem::objective`].
#[allow(clippy::too_many_arguments)]
pub fn pti_objective(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta: &GeneratorWeights,
    theta0: &GeneratorWeights,
    pivots: &PivotSet,
    crops: &FrameSequence,
    cfg: &PtiConfig,
    minibatch: &[usize],
    sampler_seed: u64,
) -> Result<PtiLoss> {
    PtiProblem {
        generator,
        perceptual,
        theta0,
        pivots,
        crops,
        cfg,
    }
    .objective(theta, minibatch, sampler_seed)
}

/// Seeded stream of minibatches: concatenated shuffled epochs cut into
/// `batch`-sized pieces.
pub fn minibatch_schedule(num_frames: usize, batch: usize, steps: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(steps);
    let take = batch.min(num_frames).max(1);
    for _ in 0..steps {
        let mut b = Vec::with_capacity(take);
        while b.len() < take {
            if pool.is_empty() {
                pool = (0..num_frames).collect();
                pool.shuffle(&mut rng);
                pool.reverse();
            }
            b.push(pool.pop().expect("refilled"));
        }
        out.push(b);
    }
    out
}

/// Step seed for the locality sample at `step` (`usize::MAX` is the evaluation draw).
fn locality_seed(cfg: &PtiConfig, step: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, 0x10CA_1177), step as u64)
}

pub fn run_pti(
    generator: &dyn Generator,
    perceptual: &dyn PerceptualDistance,
    theta0: &GeneratorWeights,
    pivots: &PivotSet,
    crops: &FrameSequence,
    cfg: &PtiConfig,
) -> Result<PtiResult> {
    cfg.validate()?;
    if crops.is_empty() {
        return Err(Error::InvalidInput("PTI needs at least one frame".into()));
    }
    let problem = PtiProblem {
        generator,
        perceptual,
        theta0,
        pivots,
        crops,
        cfg,
    };
    let all: Vec<usize> = (0..crops.len()).collect();
    let eval_seed = locality_seed(cfg, usize::MAX);
    let initial = problem.objective(theta0, &all, eval_seed)?.total;
    let steps = cfg.num_steps(crops.len());
    let schedule = minibatch_schedule(crops.len(), cfg.batch_size, steps, derive_seed(cfg.seed, 0xBA7C));
    let mut adam = Adam::new(theta0.params.len(), cfg.learning_rate);
    let mut theta = theta0.clone();
    let mut trace = Vec::with_capacity(steps);
    for (step, batch) in schedule.iter().enumerate() {
        let (loss, grad) = problem.objective_grad(&theta, batch, locality_seed(cfg, step))?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                stage: "pti",
                step,
                loss: loss.total,
            });
        }
        trace.push(PtiTraceRow { step, loss });
        adam.step(theta.params.data_mut(), &grad);
    }
    let mut params = theta.params;
    params.round_to_f32();
    let weights = theta0.derive("pti", params)?;
    let fin = problem.objective(&weights, &all, eval_seed)?.total;
    if !fin.is_finite() {
        return Err(Error::Divergence {
            stage: "pti",
            step: steps,
            loss: fin,
        });
    }
    Ok(PtiResult {
        weights,
        trace,
        initial_objective: initial,
        final_objective: fin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(PtiConfig::default().validate().is_ok());
        let bad = PtiConfig {
            passes_per_frame: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = PtiConfig {
            lambda_r: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(PtiConfig::default().num_steps(8), 160);
        assert_eq!(PtiConfig::default().num_steps(5), 100);
    }

    #[test]
    fn schedule_visits_every_frame_equally() {
        let s = minibatch_schedule(6, 4, 30, 1);
        let mut counts = [0usize; 6];
        for b in &s {
            assert_eq!(b.len(), 4);
            for &i in b {
                counts[i] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 20));
        assert_eq!(s, minibatch_schedule(6, 4, 30, 1));
    }
}
