//! BEAT training: drawing an ensemble of appended heads from their
//! posterior while the base classifier stays frozen.
//!
//! Each head runs its own loop. One outer iteration assembles a combined
//! stochastic gradient from three terms on a fresh minibatch:
//!
//! 1. classification: the cross-entropy gradient on clean motions;
//! 2. energy: negatives from the persistent SGLD chains raise the mean
//!    logit, minibatch positives lower it, so real data ends up with higher
//!    unnormalized density than sampled data;
//! 3. adversarial: sampled adversaries raise their attacked-class logit,
//!    rewarding models that keep assigning the true class near the data.
//!
//! The combined gradient is then held fixed while SG-AHMC takes a whole
//! round of parameter steps. Heads are fully independent: every head owns
//! its randomness, its negative-chain buffer, and its sampler state, so the
//! result does not depend on whether heads run in parallel or interleaved.

use crate::energy::ManifoldDistanceConfig;
use crate::error::{Error, Result};
use crate::model::{AppendedHead, BaseClassifier, BeatEnsemble, Evaluator};
use crate::rng::{derive_seed, derived_rng, Rng};
use crate::sampler::{
    sample_adversary, sample_negatives, PcdBuffer, SgahmcConfig, SgahmcState, SgldConfig,
};
use crate::skeleton::Dataset;
use serde::{Deserialize, Serialize};

/// Stored negative chains per head.
pub const NEGATIVE_BUFFER_CAPACITY: usize = 512;
/// Probability that a negative chain restarts from fresh noise.
pub const NEGATIVE_REINIT_PROB: f64 = 0.05;

/// All knobs of BEAT training.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeatTrainerConfig {
    /// Outer iterations per head.
    pub iterations: usize,
    /// Ensemble size.
    pub heads: usize,
    /// Weight of the classification term.
    pub w1: f64,
    /// Weight of the energy term.
    pub w2: f64,
    /// Weight of the adversarial term.
    pub w3: f64,
    /// Uniform initialization radius of sampled adversaries.
    pub budget: f64,
    /// SGLD steps per negative chain.
    pub negative_steps: usize,
    /// SGLD steps per sampled adversary.
    pub adversary_steps: usize,
    /// Minibatch size of clean motions.
    pub positive_batch: usize,
    /// Negative chains advanced per iteration.
    pub negative_batch: usize,
    pub sgld: SgldConfig,
    pub sgahmc: SgahmcConfig,
    pub manifold: ManifoldDistanceConfig,
    pub seed: u64,
}

impl Default for BeatTrainerConfig {
    fn default() -> Self {
        BeatTrainerConfig {
            iterations: 40,
            heads: 5,
            w1: 1.0,
            w2: 0.3,
            w3: 0.1,
            budget: 0.05,
            negative_steps: 10,
            adversary_steps: 10,
            positive_batch: 32,
            negative_batch: 32,
            sgld: SgldConfig::default(),
            sgahmc: SgahmcConfig::default(),
            manifold: ManifoldDistanceConfig::default(),
            seed: 0,
        }
    }
}

impl BeatTrainerConfig {
    /// Preset hardened against label-only (decision) attacks: a stronger
    /// adversarial term with coarser, wider-ranging adversaries.
    pub fn for_decision_attacks() -> Self {
        BeatTrainerConfig {
            w2: 0.1,
            w3: 1.0,
            budget: 0.5,
            negative_steps: 2,
            adversary_steps: 2,
            sgahmc: SgahmcConfig { step: 0.02, ..SgahmcConfig::default() },
            ..BeatTrainerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::InvalidArgument("heads must be >= 1".into()));
        }
        if self.positive_batch == 0 || self.negative_batch == 0 {
            return Err(Error::InvalidArgument("batch sizes must be >= 1".into()));
        }
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite, got {w}")));
            }
        }
        if !self.budget.is_finite() || self.budget < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "budget must be finite and non-negative, got {}",
                self.budget
            )));
        }
        self.sgld.validate()?;
        self.sgahmc.validate()?;
        self.manifold.validate()
    }
}

/// Everything one head needs to advance independently of its siblings.
struct HeadRun {
    head: AppendedHead,
    eval: Evaluator,
    negatives: PcdBuffer,
    sampler: SgahmcState,
    rng: Rng,
    grad: crate::autodiff::ParamVector,
    onehot: Vec<f64>,
}

impl HeadRun {
    fn new(base: &BaseClassifier, cfg: &BeatTrainerConfig, index: usize) -> Result<Self> {
        let mut rng = derived_rng(cfg.seed, "head", index as u64);
        let head =
            AppendedHead::init(base.classes(), derive_seed(cfg.seed, "head-init", index as u64))?;
        let eval = Evaluator::for_member(base, &head)?;
        let negatives = PcdBuffer::new(
            NEGATIVE_BUFFER_CAPACITY,
            base.input_dim(),
            NEGATIVE_REINIT_PROB,
            &mut rng,
        )?;
        let sampler = SgahmcState::new(head.params(), cfg.sgahmc.clone())?;
        let grad = head.params().filled_like(0.0);
        let onehot = vec![0.0; base.classes()];
        Ok(HeadRun { head, eval, negatives, sampler, rng, grad, onehot })
    }

    /// One outer iteration: assemble the combined gradient on a fresh
    /// minibatch, then run a full SG-AHMC round against it.
    fn iteration(&mut self, dataset: &Dataset, cfg: &BeatTrainerConfig) -> Result<()> {
        let samples = dataset.samples();
        let batch_len = cfg.positive_batch.min(samples.len());
        let picks = rand::seq::index::sample(&mut self.rng, samples.len(), batch_len);
        self.grad.fill_zero();

        let w_ce = cfg.w1 / batch_len as f64;
        for i in picks.iter() {
            let s = &samples[i];
            self.eval.add_head_grad_ce(s.motion.positions(), s.label, &mut self.grad, w_ce)?;
        }

        if cfg.w2 != 0.0 {
            let negs = sample_negatives(
                &mut self.eval,
                &mut self.negatives,
                cfg.negative_batch,
                cfg.negative_steps,
                &cfg.sgld,
                &mut self.rng,
            )?;
            let w_neg = cfg.w2 / negs.len() as f64;
            for neg in &negs {
                self.eval.add_head_grad_mean(neg, &mut self.grad, w_neg)?;
            }
            let w_pos = -cfg.w2 / batch_len as f64;
            for i in picks.iter() {
                self.eval.add_head_grad_mean(
                    samples[i].motion.positions(),
                    &mut self.grad,
                    w_pos,
                )?;
            }
        }

        if cfg.w3 != 0.0 {
            let w_adv = -cfg.w3 / batch_len as f64;
            for i in picks.iter() {
                let s = &samples[i];
                let adv = sample_adversary(
                    &mut self.eval,
                    &s.motion,
                    s.label,
                    cfg.budget,
                    cfg.adversary_steps,
                    &cfg.sgld,
                    &cfg.manifold,
                    &mut self.rng,
                )?;
                self.onehot.fill(0.0);
                self.onehot[s.label] = 1.0;
                self.eval.add_head_grad_vjp(adv.positions(), &self.onehot, &mut self.grad, w_adv)?;
            }
        }

        for _ in 0..cfg.sgahmc.steps_per_round {
            self.sampler.step(self.head.params_mut(), &self.grad, &mut self.rng)?;
        }
        self.eval.set_head_params(&self.head)
    }
}

fn check_compatible(base: &BaseClassifier, dataset: &Dataset) -> Result<()> {
    if dataset.flat_dim()? != base.input_dim() || dataset.class_count() != base.classes() {
        return Err(Error::ArchMismatch(format!(
            "dataset provides {} inputs / {} classes but the classifier expects {} / {}",
            dataset.flat_dim()?,
            dataset.class_count(),
            base.input_dim(),
            base.classes()
        )));
    }
    Ok(())
}

fn train_head(
    base: &BaseClassifier,
    dataset: &Dataset,
    cfg: &BeatTrainerConfig,
    index: usize,
) -> Result<AppendedHead> {
    let mut run = HeadRun::new(base, cfg, index)?;
    for _ in 0..cfg.iterations {
        run.iteration(dataset, cfg)?;
    }
    Ok(run.head)
}

/// Train a full BEAT ensemble. Heads run in parallel threads on native
/// targets and sequentially on wasm; either way each head's result depends
/// only on the configuration seed and its own index.
pub fn train_beat(
    base: &BaseClassifier,
    dataset: &Dataset,
    cfg: &BeatTrainerConfig,
) -> Result<BeatEnsemble> {
    cfg.validate()?;
    check_compatible(base, dataset)?;
    let digest_before = base.digest();

    #[cfg(not(target_arch = "wasm32"))]
    let heads: Vec<AppendedHead> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.heads)
            .map(|i| scope.spawn(move || train_head(base, dataset, cfg, i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("head training thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    #[cfg(target_arch = "wasm32")]
    let heads: Vec<AppendedHead> =
        (0..cfg.heads).map(|i| train_head(base, dataset, cfg, i)).collect::<Result<Vec<_>>>()?;

    let ensemble = BeatEnsemble::new(base.clone(), heads)?;
    if ensemble.base_digest() != digest_before {
        return Err(Error::DigestMismatch(
            "base classifier changed during BEAT training".into(),
        ));
    }
    Ok(ensemble)
}

/// Incremental BEAT trainer: advances every head by one outer iteration per
/// [`BeatTrainer::step`] call, so training can be chunked (for interactive
/// front ends) while producing exactly the same heads as [`train_beat`].
pub struct BeatTrainer {
    base: BaseClassifier,
    dataset: Dataset,
    cfg: BeatTrainerConfig,
    runs: Vec<HeadRun>,
    iteration: usize,
}

impl BeatTrainer {
    pub fn new(base: BaseClassifier, dataset: Dataset, cfg: BeatTrainerConfig) -> Result<Self> {
        cfg.validate()?;
        check_compatible(&base, &dataset)?;
        let runs =
            (0..cfg.heads).map(|i| HeadRun::new(&base, &cfg, i)).collect::<Result<Vec<_>>>()?;
        Ok(BeatTrainer { base, dataset, cfg, runs, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn total_iterations(&self) -> usize {
        self.cfg.iterations
    }

    pub fn is_complete(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    /// Advance every head by one outer iteration; returns whether training
    /// is now complete. Stepping a completed trainer is a no-op.
    pub fn step(&mut self) -> Result<bool> {
        if !self.is_complete() {
            for run in &mut self.runs {
                run.iteration(&self.dataset, &self.cfg)?;
            }
            self.iteration += 1;
        }
        Ok(self.is_complete())
    }

    /// Snapshot of the current ensemble (valid at any point of training).
    pub fn ensemble(&self) -> Result<BeatEnsemble> {
        BeatEnsemble::new(self.base.clone(), self.runs.iter().map(|r| r.head.clone()).collect())
    }

    pub fn base(&self) -> &BaseClassifier {
        &self.base
    }
}
