//! Reusable graph evaluators.
//!
//! Building a compute graph clones the model parameters once; every query
//! after that (logits, energies, input gradients, head gradients) reuses the
//! same buffers. Hot loops — samplers, trainers, attacks — hold one
//! [`Evaluator`] per model (or an [`EnsembleEval`] per ensemble) instead of
//! rebuilding graphs per call.

use super::types::{argmax, AppendedHead, BaseClassifier, BeatEnsemble, ModelRef};
use crate::autodiff::{softmax_row, DenseArray, Graph, NodeId, ParamVector};
use crate::error::{Error, Result};

/// Which scalar root to differentiate.
enum Root {
    /// `<logits, cotangent>` for an arbitrary vector-Jacobian product.
    Vjp,
    /// `logsumexp(logits)`: the unnormalized log-density of the energy view.
    Lse,
    /// `mean(logits)`: the pooled logit statistic used by the energy trainer.
    Mean,
    /// Softmax cross-entropy against the current label.
    Ce,
}

/// A compute graph for one model (base classifier, optionally with an
/// appended head and skip connection), exposing values and gradients.
pub struct Evaluator {
    graph: Graph,
    input: NodeId,
    cot: NodeId,
    logits: NodeId,
    vjp: NodeId,
    lse: NodeId,
    mean: NodeId,
    ce: NodeId,
    base_leaves: Vec<(String, NodeId)>,
    head_leaves: Vec<(String, NodeId)>,
    dim: usize,
    classes: usize,
    /// Label currently baked into the cross-entropy node.
    label: usize,
}

impl Evaluator {
    /// Evaluator over the base classifier alone.
    pub fn for_base(base: &BaseClassifier) -> Result<Self> {
        Self::build(base, None)
    }

    /// Evaluator over one ensemble member: base, head, and skip connection.
    pub fn for_member(base: &BaseClassifier, head: &AppendedHead) -> Result<Self> {
        if head.classes() != base.classes() {
            return Err(Error::ArchMismatch(format!(
                "head has {} classes, base has {}",
                head.classes(),
                base.classes()
            )));
        }
        Self::build(base, Some(head))
    }

    fn build(base: &BaseClassifier, head: Option<&AppendedHead>) -> Result<Self> {
        let dim = base.input_dim();
        let classes = base.classes();
        let mut graph = Graph::new();
        let input = graph.leaf(DenseArray::zeros(&[dim]));

        let mut base_leaves = Vec::new();
        let widths = base.arch().widths();
        let mut x = input;
        for layer in 0..widths.len() - 1 {
            let wname = format!("w{layer}");
            let bname = format!("b{layer}");
            let w = graph.leaf(base.params().get(&wname).expect("validated layout").clone());
            let b = graph.leaf(base.params().get(&bname).expect("validated layout").clone());
            base_leaves.push((wname, w));
            base_leaves.push((bname, b));
            x = graph.affine(x, w, b)?;
            if layer + 1 < widths.len() - 1 {
                x = graph.relu(x)?;
            }
        }
        let base_logits = x;

        let mut head_leaves = Vec::new();
        let logits = match head {
            None => base_logits,
            Some(h) => {
                let leaf = |name: &str, g: &mut Graph, leaves: &mut Vec<(String, NodeId)>| {
                    let id = g.leaf(h.params().get(name).expect("validated layout").clone());
                    leaves.push((name.to_string(), id));
                    id
                };
                let w0 = leaf("w0", &mut graph, &mut head_leaves);
                let b0 = leaf("b0", &mut graph, &mut head_leaves);
                let w1 = leaf("w1", &mut graph, &mut head_leaves);
                let b1 = leaf("b1", &mut graph, &mut head_leaves);
                let pre = graph.affine(base_logits, w0, b0)?;
                let mid = graph.tanh(pre)?;
                let out = graph.affine(mid, w1, b1)?;
                // Skip connection: member logits are base logits plus head output.
                graph.add(out, base_logits)?
            }
        };

        let cot = graph.leaf(DenseArray::zeros(&[classes]));
        let prod = graph.mul(logits, cot)?;
        let vjp = graph.sum(prod)?;
        let lse = graph.logsumexp(logits)?;
        let mean = graph.mean(logits)?;
        let ce = graph.softmax_cross_entropy(logits, 0)?;

        Ok(Evaluator {
            graph,
            input,
            cot,
            logits,
            vjp,
            lse,
            mean,
            ce,
            base_leaves,
            head_leaves,
            dim,
            classes,
            label: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn has_head(&self) -> bool {
        !self.head_leaves.is_empty()
    }

    /// Copies new head parameters into the graph (after a sampler update).
    pub fn set_head_params(&mut self, head: &AppendedHead) -> Result<()> {
        if self.head_leaves.is_empty() {
            return Err(Error::InvalidArgument("evaluator has no head".into()));
        }
        for (name, id) in &self.head_leaves {
            let block = head
                .params()
                .get(name)
                .ok_or_else(|| Error::ArchMismatch(format!("missing head block {name}")))?;
            self.graph.set_leaf(*id, block.data())?;
        }
        Ok(())
    }

    /// Copies new base parameters into the graph (after a trainer update).
    pub fn set_base_params(&mut self, params: &ParamVector) -> Result<()> {
        for (name, id) in &self.base_leaves {
            let block = params
                .get(name)
                .ok_or_else(|| Error::ArchMismatch(format!("missing base block {name}")))?;
            self.graph.set_leaf(*id, block.data())?;
        }
        Ok(())
    }

    fn set_input(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "evaluator input",
                details: format!("model wants {} coordinates, got {}", self.dim, x.len()),
            });
        }
        self.graph.set_leaf(self.input, x)
    }

    fn set_cotangent(&mut self, cot: &[f64]) -> Result<()> {
        if cot.len() != self.classes {
            return Err(Error::ShapeMismatch {
                op: "evaluator cotangent",
                details: format!("model has {} classes, cotangent has {}", self.classes, cot.len()),
            });
        }
        self.graph.set_leaf(self.cot, cot)
    }

    fn set_label(&mut self, label: usize) -> Result<()> {
        if label != self.label {
            self.graph.set_label(self.ce, label)?;
            self.label = label;
        }
        Ok(())
    }

    fn forward(&mut self, x: &[f64]) -> Result<()> {
        self.set_input(x)?;
        self.graph.forward();
        Ok(())
    }

    fn backward(&mut self, root: Root) -> Result<()> {
        let id = match root {
            Root::Vjp => self.vjp,
            Root::Lse => self.lse,
            Root::Mean => self.mean,
            Root::Ce => self.ce,
        };
        self.graph.backward(id)
    }

    /// Logits for a flat input.
    pub fn logits(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)?;
        Ok(self.graph.value(self.logits).data().to_vec())
    }

    /// Softmax probabilities for a flat input.
    pub fn probs(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        let mut p = vec![0.0; logits.len()];
        softmax_row(&logits, &mut p);
        Ok(p)
    }

    /// Predicted class.
    pub fn predict(&mut self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// `logsumexp(logits)`: the unnormalized log-density of the input under
    /// the classifier's energy view.
    pub fn log_px(&mut self, x: &[f64]) -> Result<f64> {
        self.forward(x)?;
        self.graph.value(self.lse).as_scalar()
    }

    /// Mean of the logits (the pooled statistic whose parameter gradient
    /// drives the energy term of BEAT training).
    pub fn logit_mean(&mut self, x: &[f64]) -> Result<f64> {
        self.forward(x)?;
        self.graph.value(self.mean).as_scalar()
    }

    /// Cross-entropy loss of `x` against `label`.
    pub fn ce(&mut self, x: &[f64], label: usize) -> Result<f64> {
        self.set_label(label)?;
        self.forward(x)?;
        self.graph.value(self.ce).as_scalar()
    }

    /// d logsumexp(logits) / d input, written into `out`.
    pub fn input_grad_lse(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.forward(x)?;
        self.backward(Root::Lse)?;
        out.copy_from_slice(self.graph.grad(self.input).data());
        Ok(())
    }

    /// d `<logits, cot>` / d input, written into `out`.
    pub fn input_grad_vjp(&mut self, x: &[f64], cot: &[f64], out: &mut [f64]) -> Result<()> {
        self.set_cotangent(cot)?;
        self.forward(x)?;
        self.backward(Root::Vjp)?;
        out.copy_from_slice(self.graph.grad(self.input).data());
        Ok(())
    }

    /// d cross-entropy / d input, written into `out`.
    pub fn input_grad_ce(&mut self, x: &[f64], label: usize, out: &mut [f64]) -> Result<()> {
        self.set_label(label)?;
        self.forward(x)?;
        self.backward(Root::Ce)?;
        out.copy_from_slice(self.graph.grad(self.input).data());
        Ok(())
    }

    /// Accumulates `factor *` d cross-entropy / d head-params into `out`.
    pub fn add_head_grad_ce(
        &mut self,
        x: &[f64],
        label: usize,
        out: &mut ParamVector,
        factor: f64,
    ) -> Result<()> {
        self.set_label(label)?;
        self.forward(x)?;
        self.backward(Root::Ce)?;
        self.add_leaf_grads(true, out, factor)
    }

    /// Accumulates `factor *` d mean-logit / d head-params into `out`.
    pub fn add_head_grad_mean(&mut self, x: &[f64], out: &mut ParamVector, factor: f64) -> Result<()> {
        self.forward(x)?;
        self.backward(Root::Mean)?;
        self.add_leaf_grads(true, out, factor)
    }

    /// Accumulates `factor *` d `<logits, cot>` / d head-params into `out`.
    pub fn add_head_grad_vjp(
        &mut self,
        x: &[f64],
        cot: &[f64],
        out: &mut ParamVector,
        factor: f64,
    ) -> Result<()> {
        self.set_cotangent(cot)?;
        self.forward(x)?;
        self.backward(Root::Vjp)?;
        self.add_leaf_grads(true, out, factor)
    }

    /// Accumulates `factor *` d cross-entropy / d base-params into `out` and
    /// returns the cross-entropy value itself.
    pub fn add_base_grad_ce(
        &mut self,
        x: &[f64],
        label: usize,
        out: &mut ParamVector,
        factor: f64,
    ) -> Result<f64> {
        self.set_label(label)?;
        self.forward(x)?;
        self.backward(Root::Ce)?;
        self.add_leaf_grads(false, out, factor)?;
        self.graph.value(self.ce).as_scalar()
    }

    fn add_leaf_grads(&self, head: bool, out: &mut ParamVector, factor: f64) -> Result<()> {
        let leaves = if head { &self.head_leaves } else { &self.base_leaves };
        if head && leaves.is_empty() {
            return Err(Error::InvalidArgument("evaluator has no head".into()));
        }
        for (name, id) in leaves {
            let grad = self.graph.grad(*id);
            let block = out
                .get_mut(name)
                .ok_or_else(|| Error::ArchMismatch(format!("gradient target missing block {name}")))?;
            block.add_scaled(grad, factor)?;
        }
        Ok(())
    }
}

/// Prebuilt member evaluators for a whole ensemble.
pub struct EnsembleEval {
    members: Vec<Evaluator>,
    classes: usize,
    dim: usize,
}

impl EnsembleEval {
    pub fn new(ensemble: &BeatEnsemble) -> Result<Self> {
        let members = ensemble
            .heads()
            .iter()
            .map(|h| Evaluator::for_member(ensemble.base(), h))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleEval {
            members,
            classes: ensemble.classes(),
            dim: ensemble.base().input_dim(),
        })
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    /// Bayesian model average: mean of member softmaxes.
    pub fn bma_probs(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.classes];
        let n = self.members.len() as f64;
        for member in &mut self.members {
            let p = member.probs(x)?;
            for (a, v) in acc.iter_mut().zip(&p) {
                *a += v / n;
            }
        }
        Ok(acc)
    }

    pub fn predict(&mut self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.bma_probs(x)?))
    }

    /// Mean over members of the cross-entropy input gradient (the "expected
    /// loss gradient" reported by the gradient analysis).
    pub fn expected_ce_input_grad(&mut self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        let n = self.members.len() as f64;
        for member in &mut self.members {
            member.input_grad_ce(x, label, &mut scratch)?;
            for (a, g) in acc.iter_mut().zip(&scratch) {
                *a += g / n;
            }
        }
        Ok(acc)
    }

    /// Cross-entropy of the averaged prediction, −log p̄(y|x).
    pub fn bma_ce(&mut self, x: &[f64], label: usize) -> Result<f64> {
        let p = self.bma_probs(x)?;
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    /// Exact input gradient of [`Self::bma_ce`]. Each member enters through
    /// the averaged softmax, so a member that predicts the label with full
    /// confidence contributes a vanishing term — unlike the member-averaged
    /// cross-entropy gradient, which amplifies low-confidence members.
    pub fn bma_ce_input_grad(&mut self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        let n = self.members.len() as f64;
        let member_probs: Vec<Vec<f64>> = self
            .members
            .iter_mut()
            .map(|m| m.probs(x))
            .collect::<Result<Vec<_>>>()?;
        let mut mean_y = 0.0;
        for p in &member_probs {
            mean_y += p[label] / n;
        }
        let mean_y = mean_y.max(f64::MIN_POSITIVE);
        let mut acc = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        let mut cot = vec![0.0; self.classes];
        for (member, p) in self.members.iter_mut().zip(&member_probs) {
            // d(−log p̄_y)/d logits_m = −(p_m[y] / (N p̄_y)) · (e_y − p_m).
            let scale = -p[label] / (n * mean_y);
            for (k, c) in cot.iter_mut().enumerate() {
                let e = if k == label { 1.0 } else { 0.0 };
                *c = scale * (e - p[k]);
            }
            member.input_grad_vjp(x, &cot, &mut scratch)?;
            for (a, g) in acc.iter_mut().zip(&scratch) {
                *a += g;
            }
        }
        Ok(acc)
    }
}

/// Uniform evaluation handle over base models and ensembles, used by attacks
/// and metrics.
pub enum ModelEval {
    Single(Evaluator),
    Ensemble(EnsembleEval),
}

impl ModelEval {
    pub fn from_ref(model: ModelRef<'_>) -> Result<Self> {
        Ok(match model {
            ModelRef::Base(b) => ModelEval::Single(Evaluator::for_base(b)?),
            ModelRef::Ensemble(e) => ModelEval::Ensemble(EnsembleEval::new(e)?),
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelEval::Single(e) => e.classes(),
            ModelEval::Ensemble(e) => e.classes(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelEval::Single(e) => e.input_dim(),
            ModelEval::Ensemble(e) => e.input_dim(),
        }
    }

    pub fn probs(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ModelEval::Single(e) => e.probs(x),
            ModelEval::Ensemble(e) => e.bma_probs(x),
        }
    }

    pub fn predict(&mut self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probs(x)?))
    }

    /// Cross-entropy loss of the model's predictive distribution. For an
    /// ensemble the predictive distribution is the averaged softmax, so this
    /// is −log p̄(y|x).
    pub fn ce(&mut self, x: &[f64], label: usize) -> Result<f64> {
        match self {
            ModelEval::Single(e) => e.ce(x, label),
            ModelEval::Ensemble(e) => e.bma_ce(x, label),
        }
    }

    /// White-box attack direction: the gradient of the expected cross-entropy
    /// loss with respect to the input. For a base model this is the plain CE
    /// gradient; for an ensemble it is the member-averaged CE gradient — the
    /// expectation-over-models loss that is the standard strong attack
    /// objective against averaging defenses (attacking each member's loss in
    /// expectation rather than only the blended prediction).
    pub fn loss_input_grad(&mut self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        match self {
            ModelEval::Single(e) => {
                let mut out = vec![0.0; e.input_dim()];
                e.input_grad_ce(x, label, &mut out)?;
                Ok(out)
            }
            ModelEval::Ensemble(e) => e.expected_ce_input_grad(x, label),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DenseArray};
    use crate::model::Architecture;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn tiny_base() -> BaseClassifier {
        BaseClassifier::init(Architecture { input_dim: 6, hidden: vec![5], classes: 3 }, 7).unwrap()
    }

    fn rand_input(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn evaluator_logits_match_manual_forward() {
        let base = tiny_base();
        let x = rand_input(6, 0);
        let mut eval = Evaluator::for_base(&base).unwrap();
        let got = eval.logits(&x).unwrap();

        // Manual forward pass.
        let w0 = base.params().get("w0").unwrap();
        let b0 = base.params().get("b0").unwrap();
        let w1 = base.params().get("w1").unwrap();
        let b1 = base.params().get("b1").unwrap();
        let mut hidden = vec![0.0; 5];
        for o in 0..5 {
            let mut acc = b0.data()[o];
            for i in 0..6 {
                acc += w0.data()[o * 6 + i] * x[i];
            }
            hidden[o] = acc.max(0.0);
        }
        for c in 0..3 {
            let mut acc = b1.data()[c];
            for (i, h) in hidden.iter().enumerate() {
                acc += w1.data()[c * 5 + i] * h;
            }
            assert!((got[c] - acc).abs() < 1e-12, "class {c}: {} vs {acc}", got[c]);
        }
    }

    #[test]
    fn input_gradients_pass_finite_difference_checks() {
        let base = tiny_base();
        let head = AppendedHead::init(3, 1).unwrap();
        let point = DenseArray::vector(rand_input(6, 3));

        // log p(x) gradient through the member graph.
        let err = grad_check(
            |p| Evaluator::for_member(&base, &head).unwrap().log_px(p.data()),
            |p| {
                let mut out = vec![0.0; 6];
                Evaluator::for_member(&base, &head).unwrap().input_grad_lse(p.data(), &mut out)?;
                Ok(DenseArray::vector(out))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "lse input gradient error {err}");

        // Cross-entropy gradient.
        let err = grad_check(
            |p| Evaluator::for_member(&base, &head).unwrap().ce(p.data(), 2),
            |p| {
                let mut out = vec![0.0; 6];
                Evaluator::for_member(&base, &head)
                    .unwrap()
                    .input_grad_ce(p.data(), 2, &mut out)?;
                Ok(DenseArray::vector(out))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "ce input gradient error {err}");
    }

    #[test]
    fn vjp_with_onehot_cotangent_differentiates_single_logit() {
        let base = tiny_base();
        let x = rand_input(6, 5);
        let mut eval = Evaluator::for_base(&base).unwrap();
        let cot = vec![0.0, 1.0, 0.0];
        let mut got = vec![0.0; 6];
        eval.input_grad_vjp(&x, &cot, &mut got).unwrap();

        // Finite differences on logit 1 directly.
        let mut probe = x.clone();
        let h = 1e-6;
        for i in 0..6 {
            probe[i] = x[i] + h;
            let plus = eval.logits(&probe).unwrap()[1];
            probe[i] = x[i] - h;
            let minus = eval.logits(&probe).unwrap()[1];
            probe[i] = x[i];
            let numeric = (plus - minus) / (2.0 * h);
            assert!((got[i] - numeric).abs() < 1e-6, "coord {i}: {} vs {numeric}", got[i]);
        }
    }

    #[test]
    fn head_gradients_pass_finite_difference_checks() {
        let base = tiny_base();
        let head = AppendedHead::init(3, 2).unwrap();
        let x = rand_input(6, 8);

        // Pack head params into a flat point, evaluate ce as a function of them.
        let labels = 1_usize;
        let flat: Vec<f64> = head.params().iter().flat_map(|(_, a)| a.data().to_vec()).collect();
        let point = DenseArray::vector(flat);
        let rebuild = |p: &DenseArray| {
            let mut h = head.clone();
            let mut offset = 0;
            for (_, block) in h.params_mut().iter_mut() {
                let len = block.len();
                block.copy_from_slice(&p.data()[offset..offset + len]).unwrap();
                offset += len;
            }
            h
        };
        let err = grad_check(
            |p| Evaluator::for_member(&base, &rebuild(p)).unwrap().ce(&x, labels),
            |p| {
                let h = rebuild(p);
                let mut grad = h.params().filled_like(0.0);
                Evaluator::for_member(&base, &h)
                    .unwrap()
                    .add_head_grad_ce(&x, labels, &mut grad, 1.0)?;
                let flat: Vec<f64> = grad.iter().flat_map(|(_, a)| a.data().to_vec()).collect();
                Ok(DenseArray::vector(flat))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "head ce gradient error {err}");
    }

    #[test]
    fn base_gradients_pass_finite_difference_checks() {
        let base = tiny_base();
        let x = rand_input(6, 9);
        let flat: Vec<f64> = base.params().iter().flat_map(|(_, a)| a.data().to_vec()).collect();
        let point = DenseArray::vector(flat);
        let rebuild = |p: &DenseArray| {
            let mut b = base.clone();
            let mut offset = 0;
            for (_, block) in b.params_mut().iter_mut() {
                let len = block.len();
                block.copy_from_slice(&p.data()[offset..offset + len]).unwrap();
                offset += len;
            }
            b
        };
        let err = grad_check(
            |p| Evaluator::for_base(&rebuild(p)).unwrap().ce(&x, 0),
            |p| {
                let b = rebuild(p);
                let mut grad = b.params().filled_like(0.0);
                Evaluator::for_base(&b).unwrap().add_base_grad_ce(&x, 0, &mut grad, 1.0)?;
                let flat: Vec<f64> = grad.iter().flat_map(|(_, a)| a.data().to_vec()).collect();
                Ok(DenseArray::vector(flat))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "base ce gradient error {err}");
    }

    #[test]
    fn set_head_params_updates_outputs() {
        let base = tiny_base();
        let h1 = AppendedHead::init(3, 1).unwrap();
        let h2 = AppendedHead::init(3, 2).unwrap();
        let x = rand_input(6, 11);
        let mut eval = Evaluator::for_member(&base, &h1).unwrap();
        let l1 = eval.logits(&x).unwrap();
        eval.set_head_params(&h2).unwrap();
        let l2 = eval.logits(&x).unwrap();
        let mut fresh = Evaluator::for_member(&base, &h2).unwrap();
        let want = fresh.logits(&x).unwrap();
        assert_ne!(l1, l2);
        assert_eq!(l2, want);
    }

    #[test]
    fn wrong_input_dim_is_rejected() {
        let base = tiny_base();
        let mut eval = Evaluator::for_base(&base).unwrap();
        assert!(eval.logits(&[0.0; 5]).is_err());
        let mut out = vec![0.0; 6];
        assert!(eval.input_grad_vjp(&[0.0; 6], &[1.0; 4], &mut out).is_err());
    }

    #[test]
    fn model_eval_dispatches_both_variants() {
        let base = tiny_base();
        let heads = vec![AppendedHead::init(3, 1).unwrap(), AppendedHead::init(3, 2).unwrap()];
        let ens = BeatEnsemble::new(base.clone(), heads).unwrap();
        let x = rand_input(6, 12);
        let mut me = ModelEval::from_ref(ModelRef::Base(&base)).unwrap();
        let p1 = me.probs(&x).unwrap();
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut me2 = ModelEval::from_ref(ModelRef::Ensemble(&ens)).unwrap();
        let p2 = me2.probs(&x).unwrap();
        assert!((p2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let g = me2.loss_input_grad(&x, 0).unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn bma_ce_gradient_matches_finite_differences() {
        let base = tiny_base();
        let heads = vec![AppendedHead::init(3, 4).unwrap(), AppendedHead::init(3, 5).unwrap()];
        let ens = BeatEnsemble::new(base, heads).unwrap();
        let mut eval = EnsembleEval::new(&ens).unwrap();
        let x = rand_input(6, 13);
        let label = 1;
        let grad = eval.bma_ce_input_grad(&x, label).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let fd =
                (eval.bma_ce(&hi, label).unwrap() - eval.bma_ce(&lo, label).unwrap()) / (2.0 * eps);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-5,
                "component {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn single_member_bma_ce_equals_member_ce() {
        let base = tiny_base();
        let head = AppendedHead::init(3, 6).unwrap();
        let ens = BeatEnsemble::new(base.clone(), vec![head.clone()]).unwrap();
        let mut ens_eval = EnsembleEval::new(&ens).unwrap();
        let mut member = Evaluator::for_member(&base, &head).unwrap();
        let x = rand_input(6, 14);
        let a = ens_eval.bma_ce(&x, 2).unwrap();
        let b = member.ce(&x, 2).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
