//! Energy-based view of a classifier and the perceptual manifold distance.
//!
//! A classifier's logits induce an unnormalized log-density over inputs,
//! `log p(x) = logsumexp(logits(x))` up to a constant. Adversarial samples
//! are drawn from a conditional density that rewards the attacked class logit
//! while penalizing perceptual distance from the clean motion:
//! `log p(x~ | x, y) = logit_y(x~) - lambda * d(x, x~)` up to a constant.
//!
//! The distance `d` combines per-frame bone-length deviation with deviation
//! of the frame-difference dynamics at orders 0, 1, and 2. Its gradient is
//! computed analytically (bone terms through unit direction vectors, dynamics
//! terms through the adjoint of the forward-difference operator).

use crate::error::{Error, Result};
use crate::model::Evaluator;
use crate::skeleton::Motion;
use serde::{Deserialize, Serialize};

/// Configuration of the conditional adversarial density.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldDistanceConfig {
    /// Weight of the manifold distance in the conditional log-density.
    pub lambda: f64,
}

impl ManifoldDistanceConfig {
    /// Squared-error exponent of both distance terms (fixed).
    pub const NORM_EXPONENT: u32 = 2;
    /// Frame-difference orders entering the dynamics term (fixed).
    pub const DERIVATIVE_ORDERS: [usize; 3] = [0, 1, 2];

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl Default for ManifoldDistanceConfig {
    fn default() -> Self {
        ManifoldDistanceConfig { lambda: 1e-3 }
    }
}

/// Unnormalized log-density of a motion under the classifier's energy view.
pub fn log_px_unnorm(model: &mut Evaluator, motion: &Motion) -> Result<f64> {
    model.log_px(motion.positions())
}

/// Mean logit of a motion: the pooled statistic whose parameter gradient
/// drives the energy term of BEAT training.
pub fn logit_mean(model: &mut Evaluator, motion: &Motion) -> Result<f64> {
    model.logit_mean(motion.positions())
}

fn check_comparable(x: &Motion, x_tilde: &Motion) -> Result<()> {
    if x.topology().as_ref() != x_tilde.topology().as_ref() || x.frames() != x_tilde.frames() {
        return Err(Error::ShapeMismatch {
            op: "manifold_distance",
            details: "motions must share topology and frame count".into(),
        });
    }
    Ok(())
}

/// Perceptual manifold distance between a clean motion and a perturbed one:
/// mean squared bone-length deviation plus mean squared deviation of the
/// order-0/1/2 frame differences, each normalized by its own element count.
pub fn manifold_distance(x: &Motion, x_tilde: &Motion) -> Result<f64> {
    check_comparable(x, x_tilde)?;
    Ok(distance_flat(x, x_tilde.positions()))
}

/// Gradient of [`manifold_distance`] with respect to the perturbed motion's
/// coordinates, flattened.
pub fn manifold_distance_grad(x: &Motion, x_tilde: &Motion) -> Result<Vec<f64>> {
    check_comparable(x, x_tilde)?;
    let mut out = vec![0.0; x.flat_dim()];
    distance_grad_flat(x, x_tilde.positions(), &mut out);
    Ok(out)
}

/// Conditional adversarial log-density (up to a constant):
/// `logit_label(x~) - lambda * d(x, x~)`.
pub fn log_conditional_adv(
    model: &mut Evaluator,
    x: &Motion,
    x_tilde: &Motion,
    label: usize,
    cfg: &ManifoldDistanceConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_comparable(x, x_tilde)?;
    if label >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.classes()
        )));
    }
    let logits = model.logits(x_tilde.positions())?;
    Ok(logits[label] - cfg.lambda * distance_flat(x, x_tilde.positions()))
}

/// Gradient of [`log_conditional_adv`] with respect to the perturbed motion.
pub fn log_conditional_adv_grad(
    model: &mut Evaluator,
    x: &Motion,
    x_tilde: &Motion,
    label: usize,
    cfg: &ManifoldDistanceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_comparable(x, x_tilde)?;
    let mut out = vec![0.0; x.flat_dim()];
    conditional_grad_flat(model, x, x_tilde.positions(), label, cfg, &mut out)?;
    Ok(out)
}

/// Flat-buffer core of the conditional gradient, reused by the adversary
/// sampler without rebuilding `Motion` values each step. `out` receives
/// `d logit_label / d x~  -  lambda * d d(x, x~) / d x~`.
pub(crate) fn conditional_grad_flat(
    model: &mut Evaluator,
    x: &Motion,
    x_tilde: &[f64],
    label: usize,
    cfg: &ManifoldDistanceConfig,
    out: &mut [f64],
) -> Result<()> {
    let classes = model.classes();
    if label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut onehot = vec![0.0; classes];
    onehot[label] = 1.0;
    model.input_grad_vjp(x_tilde, &onehot, out)?;
    if cfg.lambda != 0.0 {
        let mut dist_grad = vec![0.0; x.flat_dim()];
        distance_grad_flat(x, x_tilde, &mut dist_grad);
        for (o, g) in out.iter_mut().zip(&dist_grad) {
            *o -= cfg.lambda * g;
        }
    }
    Ok(())
}

/// Distance over a flat perturbed buffer (same layout as `x.positions()`).
pub(crate) fn distance_flat(x: &Motion, x_tilde: &[f64]) -> f64 {
    let topo = x.topology();
    let (m, j) = (x.frames(), x.joint_count());
    let j3 = j * 3;
    let bones = topo.bones();
    let mut total = 0.0;

    // Bone-length term: mean squared deviation over frames and bones.
    if !bones.is_empty() {
        let mut acc = 0.0;
        for f in 0..m {
            for &(a, b) in bones {
                let la = bone_len(x.positions(), f, a, b, j3);
                let lb = bone_len(x_tilde, f, a, b, j3);
                let diff = la - lb;
                acc += diff * diff;
            }
        }
        total += acc / (m * bones.len()) as f64;
    }

    // Dynamics term: mean squared deviation of frame differences at each
    // order, normalized by that order's row count times the joint count.
    let mut dx = x.positions().to_vec();
    let mut dt = x_tilde.to_vec();
    for order in 0..=2 {
        if order > 0 {
            forward_difference(&mut dx, j3);
            forward_difference(&mut dt, j3);
        }
        let rows = m - order;
        let mut acc = 0.0;
        for (a, b) in dx.iter().zip(&dt) {
            let diff = a - b;
            acc += diff * diff;
        }
        total += acc / (rows * j) as f64;
    }
    total
}

/// Analytic gradient of [`distance_flat`] with respect to `x_tilde`,
/// accumulated into `out` (which is zeroed first).
pub(crate) fn distance_grad_flat(x: &Motion, x_tilde: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let topo = x.topology();
    let (m, j) = (x.frames(), x.joint_count());
    let j3 = j * 3;
    let bones = topo.bones();

    // Bone term: d/dp of |p_a - p_b| is the unit direction (zero-length bones
    // contribute a zero subgradient).
    if !bones.is_empty() {
        let scale = 2.0 / (m * bones.len()) as f64;
        for f in 0..m {
            for &(a, b) in bones {
                let la = bone_len(x.positions(), f, a, b, j3);
                let lb = bone_len(x_tilde, f, a, b, j3);
                if lb == 0.0 {
                    continue;
                }
                let coeff = -scale * (la - lb) / lb;
                let (ia, ib) = (f * j3 + a * 3, f * j3 + b * 3);
                for d in 0..3 {
                    let dir = x_tilde[ia + d] - x_tilde[ib + d];
                    out[ia + d] += coeff * dir;
                    out[ib + d] -= coeff * dir;
                }
            }
        }
    }

    // Dynamics terms: push -2 (q - q~) / (rows * j) through the adjoint of
    // the repeated forward-difference operator.
    let mut dx = x.positions().to_vec();
    let mut dt = x_tilde.to_vec();
    for order in 0..=2 {
        if order > 0 {
            forward_difference(&mut dx, j3);
            forward_difference(&mut dt, j3);
        }
        let rows = m - order;
        let scale = 2.0 / (rows * j) as f64;
        let mut w: Vec<f64> = dx.iter().zip(&dt).map(|(a, b)| -scale * (a - b)).collect();
        for _ in 0..order {
            w = difference_adjoint(&w, j3);
        }
        debug_assert_eq!(w.len(), out.len());
        for (o, g) in out.iter_mut().zip(&w) {
            *o += g;
        }
    }
}

fn bone_len(buf: &[f64], frame: usize, a: usize, b: usize, j3: usize) -> f64 {
    let (ia, ib) = (frame * j3 + a * 3, frame * j3 + b * 3);
    let mut acc = 0.0;
    for d in 0..3 {
        let diff = buf[ia + d] - buf[ib + d];
        acc += diff * diff;
    }
    acc.sqrt()
}

/// In-place forward difference along the frame axis: `v` shrinks by one row.
fn forward_difference(v: &mut Vec<f64>, j3: usize) {
    let rows = v.len() / j3;
    for r in 0..rows - 1 {
        for c in 0..j3 {
            v[r * j3 + c] = v[(r + 1) * j3 + c] - v[r * j3 + c];
        }
    }
    v.truncate((rows - 1) * j3);
}

/// Adjoint of [`forward_difference`]: maps a `(rows, j3)` cotangent to
/// `(rows + 1, j3)` via `w_{r-1} - w_r` with zero padding outside the range.
fn difference_adjoint(w: &[f64], j3: usize) -> Vec<f64> {
    let rows = w.len() / j3;
    let mut out = vec![0.0; (rows + 1) * j3];
    for r in 0..rows + 1 {
        for c in 0..j3 {
            let prev = if r > 0 { w[(r - 1) * j3 + c] } else { 0.0 };
            let cur = if r < rows { w[r * j3 + c] } else { 0.0 };
            out[r * j3 + c] = prev - cur;
        }
    }
    out
}
