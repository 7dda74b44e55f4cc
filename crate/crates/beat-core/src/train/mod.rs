//! Trainers: the three baselines (standard, adversarial, randomized
//! smoothing) in this module and BEAT itself in [`beat`].
//!
//! All baselines share one minibatch SGD loop over the softmax
//! cross-entropy; they differ only in how a batch input is prepared (clean,
//! adversarially perturbed, or noise-smoothed). Adversarial preparation with
//! a zero budget degrades to the clean path bit for bit, which the tests
//! pin down.

pub mod beat;

use crate::error::{Error, Result};
use crate::model::{Architecture, BaseClassifier, Evaluator, ModelEval};
use crate::rng::{derived_rng, Rng};
use crate::sampler::MOTION_CLAMP;
use crate::skeleton::{temporal_gaussian_filter, Dataset, Motion};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Shared SGD hyperparameters of the baseline trainers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 32, learning_rate: 0.05, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Inner-maximization settings of adversarial training: an iterated
/// sign-gradient attack inside an `epsilon` box around each batch input.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtConfig {
    /// Per-coordinate perturbation budget.
    pub epsilon: f64,
    /// Sign-gradient iterations per batch input.
    pub iterations: usize,
    /// Per-iteration step length.
    pub step: f64,
}

impl Default for AtConfig {
    fn default() -> Self {
        // Step covers the budget about 2.5 times over the iteration count.
        AtConfig { epsilon: 0.005, iterations: 20, step: 0.000625 }
    }
}

impl AtConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !self.step.is_finite() || self.step < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step must be finite and non-negative, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Randomized-smoothing settings: Gaussian coordinate noise followed by a
/// temporal low-pass filter, applied at fine-tuning and prediction time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RsConfig {
    /// Standard deviation of the coordinate noise.
    pub noise_std: f64,
    /// Monte-Carlo draws averaged at prediction time.
    pub draws: usize,
}

impl Default for RsConfig {
    fn default() -> Self {
        RsConfig { noise_std: 0.05, draws: 16 }
    }
}

impl RsConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        if self.draws == 0 {
            return Err(Error::InvalidArgument("draws must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record returned alongside a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

enum BatchMode<'a> {
    Clean,
    Adversarial(&'a AtConfig),
    Smoothed { noise_std: f64 },
}

/// Train a fresh classifier with plain minibatch SGD on the cross-entropy.
pub fn train_standard(
    dataset: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(BaseClassifier, TrainReport)> {
    cfg.validate()?;
    let mut base = init_base(dataset, hidden, cfg.seed)?;
    let report = run_epochs(&mut base, dataset, cfg, BatchMode::Clean)?;
    Ok((base, report))
}

/// Train a fresh classifier where every batch input is first replaced by an
/// adversarial perturbation computed against the current parameters. With
/// `epsilon == 0` the result is bit-identical to [`train_standard`].
pub fn train_at(
    dataset: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
    at: &AtConfig,
) -> Result<(BaseClassifier, TrainReport)> {
    cfg.validate()?;
    at.validate()?;
    let mut base = init_base(dataset, hidden, cfg.seed)?;
    let report = run_epochs(&mut base, dataset, cfg, BatchMode::Adversarial(at))?;
    Ok((base, report))
}

/// Continue training an existing classifier on smoothed inputs (Gaussian
/// noise plus temporal filtering), preparing it for [`predict_smoothed`].
pub fn finetune_rs(
    base: &BaseClassifier,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rs: &RsConfig,
) -> Result<(BaseClassifier, TrainReport)> {
    cfg.validate()?;
    rs.validate()?;
    let mut tuned = base.clone();
    let report = run_epochs(&mut tuned, dataset, cfg, BatchMode::Smoothed { noise_std: rs.noise_std })?;
    Ok((tuned, report))
}

/// Smoothed prediction: average the model's probabilities over `draws`
/// noisy, temporally filtered copies of the motion. A zero noise level
/// evaluates the clean motion directly.
pub fn predict_smoothed(
    model: &mut ModelEval,
    motion: &Motion,
    rs: &RsConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    rs.validate()?;
    if rs.noise_std == 0.0 {
        return model.probs(motion.positions());
    }
    let mut acc = vec![0.0; model.classes()];
    for _ in 0..rs.draws {
        let noisy = perturb_and_filter(motion, rs.noise_std, rng)?;
        let p = model.probs(noisy.positions())?;
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v / rs.draws as f64;
        }
    }
    Ok(acc)
}

fn init_base(dataset: &Dataset, hidden: &[usize], seed: u64) -> Result<BaseClassifier> {
    let arch = Architecture {
        input_dim: dataset.flat_dim()?,
        hidden: hidden.to_vec(),
        classes: dataset.class_count(),
    };
    BaseClassifier::init(arch, seed)
}

fn perturb_and_filter(motion: &Motion, noise_std: f64, rng: &mut Rng) -> Result<Motion> {
    let mut positions = motion.positions().to_vec();
    for v in positions.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += noise_std * z;
    }
    temporal_gaussian_filter(&motion.with_positions(positions)?)
}

/// Iterated sign-gradient perturbation of one flat input, staying inside the
/// `epsilon` box around `x` and the global coordinate clamp.
fn pgd_example(eval: &mut Evaluator, x: &[f64], label: usize, at: &AtConfig) -> Result<Vec<f64>> {
    let mut tilde = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for _ in 0..at.iterations {
        eval.input_grad_ce(&tilde, label, &mut grad)?;
        for (i, t) in tilde.iter_mut().enumerate() {
            let stepped = *t + at.step * grad[i].signum();
            let delta = (stepped - x[i]).clamp(-at.epsilon, at.epsilon);
            *t = (x[i] + delta).clamp(-MOTION_CLAMP, MOTION_CLAMP);
        }
    }
    Ok(tilde)
}

fn run_epochs(
    base: &mut BaseClassifier,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mode: BatchMode<'_>,
) -> Result<TrainReport> {
    let samples = dataset.samples();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut eval = Evaluator::for_base(base)?;
    let mut shuffle_rng = derived_rng(cfg.seed, "train-shuffle", 0);
    // Only the smoothed mode consumes this stream; keeping it separate from
    // the shuffle stream keeps batch order comparable across modes.
    let mut noise_rng = derived_rng(cfg.seed, "train-noise", 0);
    let mut grad = base.params().filled_like(0.0);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            grad.fill_zero();
            let weight = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let sample = &samples[i];
                let loss = match &mode {
                    BatchMode::Clean => eval.add_base_grad_ce(
                        sample.motion.positions(),
                        sample.label,
                        &mut grad,
                        weight,
                    )?,
                    BatchMode::Adversarial(at) => {
                        let adv = pgd_example(&mut eval, sample.motion.positions(), sample.label, at)?;
                        eval.add_base_grad_ce(&adv, sample.label, &mut grad, weight)?
                    }
                    BatchMode::Smoothed { noise_std } => {
                        let noisy = perturb_and_filter(&sample.motion, *noise_std, &mut noise_rng)?;
                        eval.add_base_grad_ce(noisy.positions(), sample.label, &mut grad, weight)?
                    }
                };
                epoch_loss += loss / samples.len() as f64;
            }
            base.params_mut().add_scaled(&grad, -cfg.learning_rate)?;
            if !base.params().all_finite() {
                return Err(Error::NonFinite("training diverged"));
            }
            eval.set_base_params(base.params())?;
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainReport { epoch_losses })
}
