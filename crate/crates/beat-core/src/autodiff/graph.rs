//! Reverse-mode automatic differentiation over a small, fixed operation set.
//!
//! A [`Graph`] is built once (operations validate shapes eagerly), then reused:
//! leaf values are overwritten with [`Graph::set_leaf`], recomputed with
//! [`Graph::forward`], and differentiated with [`Graph::backward`] from any
//! scalar root. Buffers are allocated at construction and reused, so the
//! steady-state cost of an evaluation is pure arithmetic.

use super::array::DenseArray;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Affine { input: usize, weight: usize, bias: usize },
    Relu(usize),
    Tanh(usize),
    Mean(usize),
    Sum(usize),
    LogSumExp(usize),
    SoftmaxCrossEntropy { logits: usize, label: usize },
}

/// A static compute graph with reverse-mode gradients.
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<DenseArray>,
    grads: Vec<DenseArray>,
    /// Set when a leaf or label changed after the last forward pass.
    stale: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { ops: Vec::new(), values: Vec::new(), grads: Vec::new(), stale: false }
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    /// Current value of a node. Stale until [`Graph::forward`] if leaves changed.
    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` root with respect to this node.
    pub fn grad(&self, id: NodeId) -> &DenseArray {
        &self.grads[id.0]
    }

    /// Creates a leaf node (input or parameter) holding `value`.
    pub fn leaf(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Overwrites a leaf's value; the shape is fixed at creation.
    pub fn set_leaf(&mut self, id: NodeId, data: &[f64]) -> Result<()> {
        match self.ops[id.0] {
            Op::Leaf => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "set_leaf on non-leaf node {}",
                    id.0
                )))
            }
        }
        self.values[id.0].copy_from_slice(data)?;
        self.stale = true;
        Ok(())
    }

    /// Matrix product of two rank-2 nodes: `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", sa, sb),
            });
        }
        let value = DenseArray::zeros(&[sa[0], sb[1]]);
        Ok(self.push_computed(Op::MatMul(a.0, b.0), value))
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.matched_shape("add", a, b)?;
        Ok(self.push_computed(Op::Add(a.0, b.0), DenseArray::zeros(&shape)))
    }

    /// Element-wise product; shapes must match exactly.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.matched_shape("mul", a, b)?;
        Ok(self.push_computed(Op::Mul(a.0, b.0), DenseArray::zeros(&shape)))
    }

    /// Affine map `W x + b` for a vector input `(in,)`, or row-wise
    /// `X W^T + b` for a batch input `(n,in)`. `weight` is `(out,in)`,
    /// `bias` is `(out,)`.
    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if sw.len() != 2 || sb.len() != 1 || sb[0] != sw[0] {
            return Err(Error::ShapeMismatch {
                op: "affine",
                details: format!("weight {:?}, bias {:?}", sw, sb),
            });
        }
        let out_shape = match si.len() {
            1 if si[0] == sw[1] => vec![sw[0]],
            2 if si[1] == sw[1] => vec![si[0], sw[0]],
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "affine",
                    details: format!("input {:?} vs weight {:?}", si, sw),
                })
            }
        };
        let value = DenseArray::zeros(&out_shape);
        Ok(self.push_computed(Op::Affine { input: input.0, weight: weight.0, bias: bias.0 }, value))
    }

    /// Rectified linear unit, with subgradient 0 at 0.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = DenseArray::zeros(self.shape(x));
        Ok(self.push_computed(Op::Relu(x.0), value))
    }

    /// Hyperbolic tangent.
    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = DenseArray::zeros(self.shape(x));
        Ok(self.push_computed(Op::Tanh(x.0), value))
    }

    /// Mean of all elements, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        if self.values[x.0].is_empty() {
            return Err(Error::InvalidArgument("mean of empty array".into()));
        }
        Ok(self.push_computed(Op::Mean(x.0), DenseArray::scalar(0.0)))
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        Ok(self.push_computed(Op::Sum(x.0), DenseArray::scalar(0.0)))
    }

    /// Log-sum-exp over the last axis: `(c,) -> scalar` or `(n,c) -> (n,)`.
    pub fn logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let value = match s.len() {
            1 if s[0] > 0 => DenseArray::scalar(0.0),
            2 if s[1] > 0 => DenseArray::zeros(&[s[0]]),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "logsumexp",
                    details: format!("need non-empty rank 1 or 2, got {:?}", s),
                })
            }
        };
        Ok(self.push_computed(Op::LogSumExp(x.0), value))
    }

    /// Softmax cross-entropy of a logit vector against an integer label,
    /// producing a scalar. The label can be changed later with
    /// [`Graph::set_label`].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                details: format!("need non-empty rank 1 logits, got {:?}", s),
            });
        }
        if label >= s[0] {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                label, s[0]
            )));
        }
        Ok(self.push_computed(Op::SoftmaxCrossEntropy { logits: logits.0, label }, DenseArray::scalar(0.0)))
    }

    /// Changes the label of an existing cross-entropy node.
    pub fn set_label(&mut self, id: NodeId, label: usize) -> Result<()> {
        let classes = match self.ops[id.0] {
            Op::SoftmaxCrossEntropy { logits, .. } => self.values[logits].len(),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "set_label on non-cross-entropy node {}",
                    id.0
                )))
            }
        };
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                label, classes
            )));
        }
        if let Op::SoftmaxCrossEntropy { label: l, .. } = &mut self.ops[id.0] {
            *l = label;
        }
        self.stale = true;
        Ok(())
    }

    /// Recomputes every non-leaf node in topological (insertion) order.
    pub fn forward(&mut self) {
        for i in 0..self.ops.len() {
            self.compute(i);
        }
        self.stale = false;
    }

    /// Accumulates gradients of the scalar `root` into every node, overwriting
    /// previous gradients. Leaves not reachable from the root keep gradient
    /// zero. Errors if leaf values changed since the last forward pass or if
    /// the root is not a scalar.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.stale {
            return Err(Error::BackwardBeforeForward);
        }
        if self.values[root.0].rank() != 0 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                details: format!("root must be scalar, got {:?}", self.values[root.0].shape()),
            });
        }
        for g in &mut self.grads {
            g.fill_zero();
        }
        self.grads[root.0].data_mut()[0] = 1.0;
        for i in (0..=root.0).rev() {
            self.propagate(i);
        }
        Ok(())
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id.0].shape()
    }

    fn matched_shape(&self, name: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                details: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(self.shape(a).to_vec())
    }

    fn push(&mut self, op: Op, value: DenseArray) -> NodeId {
        let grad = DenseArray::zeros(value.shape());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(grad);
        NodeId(self.ops.len() - 1)
    }

    fn push_computed(&mut self, op: Op, value: DenseArray) -> NodeId {
        let id = self.push(op, value);
        self.compute(id.0);
        id
    }

    /// Computes `values[i]` from its parents (all with index < i).
    fn compute(&mut self, i: usize) {
        let (before, rest) = self.values.split_at_mut(i);
        let out = &mut rest[0];
        match self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (before[a].shape()[0], before[a].shape()[1]);
                let n = before[b].shape()[1];
                let (av, bv, ov) = (before[a].data(), before[b].data(), out.data_mut());
                ov.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..m {
                    for p in 0..k {
                        let alpha = av[r * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        let orow = &mut ov[r * n..(r + 1) * n];
                        for (o, bb) in orow.iter_mut().zip(brow) {
                            *o += alpha * bb;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for ((o, x), y) in out.data_mut().iter_mut().zip(before[a].data()).zip(before[b].data()) {
                    *o = x + y;
                }
            }
            Op::Mul(a, b) => {
                for ((o, x), y) in out.data_mut().iter_mut().zip(before[a].data()).zip(before[b].data()) {
                    *o = x * y;
                }
            }
            Op::Affine { input, weight, bias } => {
                let (wv, bv) = (before[weight].data(), before[bias].data());
                let (dout, din) = (before[weight].shape()[0], before[weight].shape()[1]);
                let xv = before[input].data();
                let rows = xv.len() / din;
                let ov = out.data_mut();
                for r in 0..rows {
                    let xrow = &xv[r * din..(r + 1) * din];
                    let orow = &mut ov[r * dout..(r + 1) * dout];
                    for o in 0..dout {
                        let wrow = &wv[o * din..(o + 1) * din];
                        let mut acc = bv[o];
                        for (x, w) in xrow.iter().zip(wrow) {
                            acc += x * w;
                        }
                        orow[o] = acc;
                    }
                }
            }
            Op::Relu(x) => {
                for (o, v) in out.data_mut().iter_mut().zip(before[x].data()) {
                    *o = if *v > 0.0 { *v } else { 0.0 };
                }
            }
            Op::Tanh(x) => {
                for (o, v) in out.data_mut().iter_mut().zip(before[x].data()) {
                    *o = v.tanh();
                }
            }
            Op::Mean(x) => {
                let v = before[x].data();
                out.data_mut()[0] = v.iter().sum::<f64>() / v.len() as f64;
            }
            Op::Sum(x) => {
                out.data_mut()[0] = before[x].data().iter().sum();
            }
            Op::LogSumExp(x) => {
                let cols = *before[x].shape().last().expect("validated rank >= 1");
                let xv = before[x].data();
                let ov = out.data_mut();
                for (row, o) in xv.chunks_exact(cols).zip(ov.iter_mut()) {
                    *o = logsumexp_row(row);
                }
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                let v = before[logits].data();
                out.data_mut()[0] = logsumexp_row(v) - v[label];
            }
        }
    }

    /// Pushes `grads[i]` into the gradients of node `i`'s parents.
    fn propagate(&mut self, i: usize) {
        let (gbefore, grest) = self.grads.split_at_mut(i);
        let gout = &grest[0];
        let values = &self.values;
        match self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (values[a].shape()[0], values[a].shape()[1]);
                let n = values[b].shape()[1];
                let gy = gout.data();
                {
                    let bv = values[b].data();
                    let ga = gbefore[a].data_mut();
                    for r in 0..m {
                        let gyrow = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut acc = 0.0;
                            for (g, bb) in gyrow.iter().zip(brow) {
                                acc += g * bb;
                            }
                            ga[r * k + p] += acc;
                        }
                    }
                }
                {
                    let av = values[a].data();
                    let gb = gbefore[b].data_mut();
                    for r in 0..m {
                        let gyrow = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let alpha = av[r * k + p];
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (g, gy) in gbrow.iter_mut().zip(gyrow) {
                                *g += alpha * gy;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(gbefore, a, gout.data(), 1.0);
                add_into(gbefore, b, gout.data(), 1.0);
            }
            Op::Mul(a, b) => {
                // Handles a == b (squaring) correctly via sequential accumulation.
                let prod_b: Vec<f64> =
                    gout.data().iter().zip(values[b].data()).map(|(g, v)| g * v).collect();
                let prod_a: Vec<f64> =
                    gout.data().iter().zip(values[a].data()).map(|(g, v)| g * v).collect();
                add_into(gbefore, a, &prod_b, 1.0);
                add_into(gbefore, b, &prod_a, 1.0);
            }
            Op::Affine { input, weight, bias } => {
                let (dout, din) = (values[weight].shape()[0], values[weight].shape()[1]);
                let rows = values[input].len() / din;
                let gy = gout.data();
                {
                    let wv = values[weight].data();
                    let gx = gbefore[input].data_mut();
                    for r in 0..rows {
                        let gyrow = &gy[r * dout..(r + 1) * dout];
                        let gxrow = &mut gx[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let alpha = gyrow[o];
                            let wrow = &wv[o * din..(o + 1) * din];
                            for (g, w) in gxrow.iter_mut().zip(wrow) {
                                *g += alpha * w;
                            }
                        }
                    }
                }
                {
                    let xv = values[input].data();
                    let gw = gbefore[weight].data_mut();
                    for r in 0..rows {
                        let gyrow = &gy[r * dout..(r + 1) * dout];
                        let xrow = &xv[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let alpha = gyrow[o];
                            let gwrow = &mut gw[o * din..(o + 1) * din];
                            for (g, x) in gwrow.iter_mut().zip(xrow) {
                                *g += alpha * x;
                            }
                        }
                    }
                }
                {
                    let gb = gbefore[bias].data_mut();
                    for gyrow in gy.chunks_exact(dout) {
                        for (g, alpha) in gb.iter_mut().zip(gyrow) {
                            *g += alpha;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = values[x].data();
                let gx = gbefore[x].data_mut();
                for ((g, v), gy) in gx.iter_mut().zip(xv).zip(gout.data()) {
                    if *v > 0.0 {
                        *g += gy;
                    }
                }
            }
            Op::Tanh(x) => {
                let yv = values[i].data();
                let gx = gbefore[x].data_mut();
                for ((g, y), gy) in gx.iter_mut().zip(yv).zip(gout.data()) {
                    *g += gy * (1.0 - y * y);
                }
            }
            Op::Mean(x) => {
                let n = values[x].len() as f64;
                let alpha = gout.data()[0] / n;
                for g in gbefore[x].data_mut() {
                    *g += alpha;
                }
            }
            Op::Sum(x) => {
                let alpha = gout.data()[0];
                for g in gbefore[x].data_mut() {
                    *g += alpha;
                }
            }
            Op::LogSumExp(x) => {
                let cols = *values[x].shape().last().expect("validated rank >= 1");
                let xv = values[x].data();
                let gx = gbefore[x].data_mut();
                let mut probs = vec![0.0; cols];
                for (r, gy) in gout.data().iter().enumerate() {
                    softmax_row(&xv[r * cols..(r + 1) * cols], &mut probs);
                    for (g, p) in gx[r * cols..(r + 1) * cols].iter_mut().zip(&probs) {
                        *g += gy * p;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                let xv = values[logits].data();
                let gy = gout.data()[0];
                let mut probs = vec![0.0; xv.len()];
                softmax_row(xv, &mut probs);
                let gx = gbefore[logits].data_mut();
                for (c, (g, p)) in gx.iter_mut().zip(&probs).enumerate() {
                    let indicator = if c == label { 1.0 } else { 0.0 };
                    *g += gy * (p - indicator);
                }
            }
        }
    }
}

fn add_into(grads: &mut [DenseArray], target: usize, src: &[f64], factor: f64) {
    for (g, s) in grads[target].data_mut().iter_mut().zip(src) {
        *g += factor * s;
    }
}

/// Max-shifted log-sum-exp of a non-empty slice.
pub(crate) fn logsumexp_row(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Numerically stable softmax of a non-empty slice into `out`.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_graph() -> (Graph, NodeId, NodeId) {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![1.0, -2.0, 3.0]));
        let y = g.sum(x).unwrap();
        (g, x, y)
    }

    #[test]
    fn shape_mismatch_is_rejected_at_creation() {
        let mut g = Graph::new();
        let a = g.leaf(DenseArray::vector(vec![1.0, 2.0]));
        let b = g.leaf(DenseArray::vector(vec![1.0, 2.0, 3.0]));
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
        let m = g.leaf(DenseArray::matrix(2, 2, vec![1.0; 4]).unwrap());
        assert!(g.matmul(m, m).is_ok());
        let n = g.leaf(DenseArray::matrix(3, 2, vec![1.0; 6]).unwrap());
        assert!(g.matmul(m, n).is_err());
    }

    #[test]
    fn backward_after_stale_leaf_errors() {
        let (mut g, x, y) = simple_graph();
        g.backward(y).unwrap();
        g.set_leaf(x, &[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(g.backward(y), Err(Error::BackwardBeforeForward)));
        g.forward();
        g.backward(y).unwrap();
    }

    #[test]
    fn backward_requires_scalar_root() {
        let (mut g, x, _) = simple_graph();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![1.0, 2.0]));
        let unused = g.leaf(DenseArray::vector(vec![5.0, 5.0]));
        let y = g.sum(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(unused).data(), &[0.0, 0.0]);
        assert_eq!(g.grad(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn sum_and_mean_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let s = g.sum(x).unwrap();
        let m = g.mean(x).unwrap();
        assert_eq!(g.value(s).as_scalar().unwrap(), 10.0);
        assert_eq!(g.value(m).as_scalar().unwrap(), 2.5);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).data(), &[0.25; 4]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn logsumexp_matches_closed_form() {
        // Two equal logits of value ln(1): lse = ln 2.
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![0.0, 0.0]));
        let l = g.logsumexp(x).unwrap();
        assert!((g.value(l).as_scalar().unwrap() - 2.0_f64.ln()).abs() < 1e-15);
        g.backward(l).unwrap();
        assert!((g.grad(x).data()[0] - 0.5).abs() < 1e-15);
        assert!((g.grad(x).data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![1000.0, 1000.0]));
        let l = g.logsumexp(x).unwrap();
        let got = g.value(l).as_scalar().unwrap();
        assert!((got - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn logsumexp_rank2_reduces_rows() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let l = g.logsumexp(x).unwrap();
        let v = g.value(l).data().to_vec();
        assert!((v[0] - 2.0_f64.ln()).abs() < 1e-15);
        assert!((v[1] - (1.0 + 2.0_f64.ln())).abs() < 1e-15);
        let s = g.sum(l).unwrap();
        g.backward(s).unwrap();
        for gv in g.grad(x).data() {
            assert!((gv - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![0.0, 0.0, 0.0, 0.0]));
        let ce = g.softmax_cross_entropy(x, 1).unwrap();
        // Uniform logits over 4 classes: ce = ln 4.
        assert!((g.value(ce).as_scalar().unwrap() - 4.0_f64.ln()).abs() < 1e-15);
        g.backward(ce).unwrap();
        let got = g.grad(x).data();
        for (c, gv) in got.iter().enumerate() {
            let want = if c == 1 { 0.25 - 1.0 } else { 0.25 };
            assert!((gv - want).abs() < 1e-15, "class {c}: {gv} vs {want}");
        }
    }

    #[test]
    fn set_label_validates_and_recomputes() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![2.0, 0.0]));
        let ce = g.softmax_cross_entropy(x, 0).unwrap();
        let loss0 = g.value(ce).as_scalar().unwrap();
        assert!(g.set_label(ce, 5).is_err());
        g.set_label(ce, 1).unwrap();
        assert!(matches!(g.backward(ce), Err(Error::BackwardBeforeForward)));
        g.forward();
        let loss1 = g.value(ce).as_scalar().unwrap();
        assert!(loss1 > loss0, "wrong label must cost more than right label");
        // Difference of the two losses is exactly the logit gap.
        assert!((loss1 - loss0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn affine_matches_manual_computation() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![1.0, 2.0]));
        let w = g.leaf(DenseArray::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let b = g.leaf(DenseArray::vector(vec![0.5, 0.5, 0.5]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 2.5, 3.5]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 2.0]);
        assert_eq!(g.grad(b).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.grad(w).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn affine_batch_input() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let w = g.leaf(DenseArray::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let b = g.leaf(DenseArray::vector(vec![1.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 5.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).data(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).data(), &[2.0]);
        assert_eq!(g.grad(x).data(), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_forward_and_backward() {
        let mut g = Graph::new();
        let a = g.leaf(DenseArray::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.leaf(DenseArray::matrix(2, 1, vec![1.0, -1.0]).unwrap());
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, -1.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(g.grad(b).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_with_shared_operand_squares() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        assert_eq!(g.value(s).as_scalar().unwrap(), 9.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_uses_cached_output() {
        let mut g = Graph::new();
        let x = g.leaf(DenseArray::vector(vec![0.5]));
        let t = g.tanh(x).unwrap();
        let s = g.sum(t).unwrap();
        g.backward(s).unwrap();
        let y = 0.5_f64.tanh();
        assert!((g.grad(x).data()[0] - (1.0 - y * y)).abs() < 1e-15);
    }

    #[test]
    fn repeated_backward_overwrites_gradients() {
        let (mut g, x, y) = simple_graph();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 1.0]);
    }
}
