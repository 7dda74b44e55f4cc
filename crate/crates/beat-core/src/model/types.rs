//! Model types: base classifier, appended heads, and the Bayesian ensemble.

use super::eval::{EnsembleEval, Evaluator};
use crate::autodiff::{DenseArray, ParamVector};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, Rng};
use crate::skeleton::Motion;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Shape of the base classifier: a flattened motion through affine/ReLU
/// layers to class logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Flat input dimension (`frames * joints * 3`).
    pub input_dim: usize,
    /// Hidden layer widths, outermost first.
    pub hidden: Vec<usize>,
    /// Number of classes.
    pub classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::ArchMismatch("input dimension must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::ArchMismatch(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::ArchMismatch("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths including input and output: `[input, hidden..., classes]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.classes);
        w
    }
}

/// Draws a `(rows, cols)` weight matrix with N(0, std^2) entries.
fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> DenseArray {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseArray::matrix(rows, cols, data).expect("length matches by construction")
}

/// The base skeletal-motion classifier: flatten, then affine/ReLU layers to
/// class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseClassifier {
    arch: Architecture,
    params: ParamVector,
}

impl BaseClassifier {
    /// Fresh classifier with 1/sqrt(fan-in) Gaussian weights and zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = derived_rng(seed, "base-init", 0);
        let widths = arch.widths();
        let mut params = ParamVector::new();
        for layer in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            params.insert(&format!("w{layer}"), gaussian_matrix(fan_out, fan_in, std, &mut rng))?;
            params.insert(&format!("b{layer}"), DenseArray::zeros(&[fan_out]))?;
        }
        Ok(BaseClassifier { arch, params })
    }

    /// Rebuilds a classifier from stored parts, validating every block shape
    /// against the architecture.
    pub fn from_parts(arch: Architecture, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let expected_blocks = 2 * (widths.len() - 1);
        if params.block_count() != expected_blocks {
            return Err(Error::ArchMismatch(format!(
                "architecture wants {expected_blocks} parameter blocks, checkpoint has {}",
                params.block_count()
            )));
        }
        for layer in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let w = params
                .get(&format!("w{layer}"))
                .ok_or_else(|| Error::ArchMismatch(format!("missing block w{layer}")))?;
            if w.shape() != [fan_out, fan_in] {
                return Err(Error::ArchMismatch(format!(
                    "block w{layer} has shape {:?}, expected [{fan_out}, {fan_in}]",
                    w.shape()
                )));
            }
            let b = params
                .get(&format!("b{layer}"))
                .ok_or_else(|| Error::ArchMismatch(format!("missing block b{layer}")))?;
            if b.shape() != [fan_out] {
                return Err(Error::ArchMismatch(format!(
                    "block b{layer} has shape {:?}, expected [{fan_out}]",
                    b.shape()
                )));
            }
        }
        Ok(BaseClassifier { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Hex digest of the parameters; used to detect frozen-base violations.
    pub fn digest(&self) -> String {
        self.params.digest()
    }

    /// Logits for one motion. Convenience path; loops should reuse an
    /// [`Evaluator`].
    pub fn logits(&self, motion: &Motion) -> Result<Vec<f64>> {
        Evaluator::for_base(self)?.logits(motion.positions())
    }

    /// Softmax probabilities for one motion.
    pub fn probs(&self, motion: &Motion) -> Result<Vec<f64>> {
        Evaluator::for_base(self)?.probs(motion.positions())
    }

    /// Predicted class (argmax of logits, ties to the lowest index).
    pub fn predict(&self, motion: &Motion) -> Result<usize> {
        Ok(argmax(&self.logits(motion)?))
    }
}

/// A small appended head: two affine layers around a tanh, operating on the
/// frozen base's logits. Member logits add the head output back onto the base
/// logits (skip connection), so a zero head is an exact identity.
#[derive(Clone, Debug, PartialEq)]
pub struct AppendedHead {
    classes: usize,
    params: ParamVector,
}

impl AppendedHead {
    /// Standard deviation of the Gaussian used for fresh head weights.
    pub const INIT_STD: f64 = 0.01;
    /// Diagonal seed added to the first layer so hidden unit `j` starts out
    /// reading logit `j`. The tanh features freeze early once training
    /// saturates them, and purely random features can freeze into patterns
    /// that no longer separate the classes; aligning them at init removes
    /// that failure mode. The head output scale is still set by the second
    /// layer's near-zero weights, so a fresh head remains a near-identity.
    pub const INIT_DIAG: f64 = 0.25;

    /// Fresh head with N(0, 0.01^2) weights (plus a small diagonal on the
    /// first layer) and zero biases.
    pub fn init(classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::ArchMismatch(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = derived_rng(seed, "head-init", 0);
        let mut params = ParamVector::new();
        let mut w0 = gaussian_matrix(classes, classes, Self::INIT_STD, &mut rng);
        for j in 0..classes {
            w0.data_mut()[j * classes + j] += Self::INIT_DIAG;
        }
        params.insert("w0", w0)?;
        params.insert("b0", DenseArray::zeros(&[classes]))?;
        params.insert("w1", gaussian_matrix(classes, classes, Self::INIT_STD, &mut rng))?;
        params.insert("b1", DenseArray::zeros(&[classes]))?;
        Ok(AppendedHead { classes, params })
    }

    /// All-zero head: exactly the identity on base logits.
    pub fn zeros(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::ArchMismatch(format!("need at least 2 classes, got {classes}")));
        }
        let mut params = ParamVector::new();
        params.insert("w0", DenseArray::zeros(&[classes, classes]))?;
        params.insert("b0", DenseArray::zeros(&[classes]))?;
        params.insert("w1", DenseArray::zeros(&[classes, classes]))?;
        params.insert("b1", DenseArray::zeros(&[classes]))?;
        Ok(AppendedHead { classes, params })
    }

    /// Rebuilds a head from stored parameters, validating shapes.
    pub fn from_params(classes: usize, params: ParamVector) -> Result<Self> {
        let check = |name: &str, shape: &[usize]| -> Result<()> {
            let block = params
                .get(name)
                .ok_or_else(|| Error::ArchMismatch(format!("missing head block {name}")))?;
            if block.shape() != shape {
                return Err(Error::ArchMismatch(format!(
                    "head block {name} has shape {:?}, expected {:?}",
                    block.shape(),
                    shape
                )));
            }
            Ok(())
        };
        check("w0", &[classes, classes])?;
        check("b0", &[classes])?;
        check("w1", &[classes, classes])?;
        check("b1", &[classes])?;
        if params.block_count() != 4 {
            return Err(Error::ArchMismatch(format!(
                "head wants 4 parameter blocks, got {}",
                params.block_count()
            )));
        }
        Ok(AppendedHead { classes, params })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }
}

/// A trained BEAT model: a frozen base classifier plus `N >= 1` posterior
/// head samples, combined by Bayesian model averaging over member softmaxes.
#[derive(Clone, Debug)]
pub struct BeatEnsemble {
    base: BaseClassifier,
    base_digest: String,
    heads: Vec<AppendedHead>,
}

impl BeatEnsemble {
    pub fn new(base: BaseClassifier, heads: Vec<AppendedHead>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one head".into()));
        }
        for (i, h) in heads.iter().enumerate() {
            if h.classes() != base.classes() {
                return Err(Error::ArchMismatch(format!(
                    "head {i} has {} classes, base has {}",
                    h.classes(),
                    base.classes()
                )));
            }
        }
        let base_digest = base.digest();
        Ok(BeatEnsemble { base, base_digest, heads })
    }

    pub fn base(&self) -> &BaseClassifier {
        &self.base
    }

    pub fn heads(&self) -> &[AppendedHead] {
        &self.heads
    }

    pub fn member_count(&self) -> usize {
        self.heads.len()
    }

    pub fn classes(&self) -> usize {
        self.base.classes()
    }

    /// Digest of the base parameters captured when the ensemble was assembled.
    pub fn base_digest(&self) -> &str {
        &self.base_digest
    }

    /// Confirms the base parameters still hash to the digest captured at
    /// construction (the base must stay frozen for the posterior heads to be
    /// meaningful).
    pub fn verify_frozen(&self) -> Result<()> {
        let now = self.base.digest();
        if now != self.base_digest {
            return Err(Error::DigestMismatch(format!(
                "frozen base violated: stored {}.., recomputed {}..",
                &self.base_digest[..12.min(self.base_digest.len())],
                &now[..12.min(now.len())]
            )));
        }
        Ok(())
    }

    /// A sub-ensemble over the first `n` heads, sharing the same frozen base.
    pub fn truncated(&self, n: usize) -> Result<BeatEnsemble> {
        if n == 0 || n > self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-member ensemble to {n}",
                self.heads.len()
            )));
        }
        BeatEnsemble::new(self.base.clone(), self.heads[..n].to_vec())
    }

    /// Logits of one ensemble member (base logits plus head output).
    pub fn member_logits(&self, motion: &Motion, member: usize) -> Result<Vec<f64>> {
        if member >= self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "member {member} out of range for {} heads",
                self.heads.len()
            )));
        }
        Evaluator::for_member(&self.base, &self.heads[member])?.logits(motion.positions())
    }

    /// Bayesian model average: the mean of the member softmax distributions.
    pub fn predict_bma(&self, motion: &Motion) -> Result<Vec<f64>> {
        EnsembleEval::new(self)?.bma_probs(motion.positions())
    }

    /// Predicted class under the Bayesian model average.
    pub fn predict(&self, motion: &Motion) -> Result<usize> {
        Ok(argmax(&self.predict_bma(motion)?))
    }

    /// Mean over members of the cross-entropy input gradient at `label`,
    /// shaped like the flattened motion.
    pub fn expected_input_gradient(&self, motion: &Motion, label: usize) -> Result<Vec<f64>> {
        EnsembleEval::new(self)?.expected_ce_input_grad(motion.positions(), label)
    }
}

/// Borrowed handle over "a model you can attack and score": either a plain
/// classifier or a BEAT ensemble.
#[derive(Clone, Copy)]
pub enum ModelRef<'a> {
    Base(&'a BaseClassifier),
    Ensemble(&'a BeatEnsemble),
}

impl<'a> ModelRef<'a> {
    pub fn classes(&self) -> usize {
        match self {
            ModelRef::Base(b) => b.classes(),
            ModelRef::Ensemble(e) => e.classes(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelRef::Base(b) => b.input_dim(),
            ModelRef::Ensemble(e) => e.base().input_dim(),
        }
    }

    /// Class probabilities (softmax for a base model, Bayesian model average
    /// for an ensemble).
    pub fn probs(&self, motion: &Motion) -> Result<Vec<f64>> {
        match self {
            ModelRef::Base(b) => b.probs(motion),
            ModelRef::Ensemble(e) => e.predict_bma(motion),
        }
    }

    pub fn predict(&self, motion: &Motion) -> Result<usize> {
        Ok(argmax(&self.probs(motion)?))
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
