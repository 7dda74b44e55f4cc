//! Evaluation-time attacks against motion classifiers.
//!
//! Four attacks share one result type:
//! - [`attack_iter_l2`]: white-box iterated gradient ascent with
//!   l2-normalized steps (the primary robustness probe);
//! - [`attack_linf_per_joint`]: sign-gradient ascent inside anatomical
//!   per-joint boxes, tighter near the hip and looser toward the feet;
//! - [`attack_decision`]: label-only boundary walk that never touches
//!   gradients or probabilities, seeded from a differently-classified
//!   motion;
//! - [`attack_eot_l2`]: the l2 attack with gradients averaged over random
//!   interpolations toward the clean motion, for averaging defenses.
//!
//! Attacks are untargeted: success means the prediction left the true
//! class. All iterates respect the global coordinate clamp of the samplers.

use crate::error::{Error, Result};
use crate::model::ModelEval;
use crate::rng::Rng;
use crate::sampler::MOTION_CLAMP;
use crate::skeleton::{BudgetClass, Dataset, Motion};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Which attack to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    IterL2,
    LinfPerJoint,
    Decision,
    EotL2,
}

/// Per-joint box budgets keyed by anatomical class. Joints classed `Other`
/// use the hip budget, the most conservative one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointBudgets {
    pub hip: f64,
    pub knee: f64,
    pub ankle: f64,
    pub foot: f64,
}

impl Default for JointBudgets {
    fn default() -> Self {
        JointBudgets { hip: 0.01, knee: 0.05, ankle: 0.15, foot: 0.25 }
    }
}

impl JointBudgets {
    pub fn for_class(&self, class: BudgetClass) -> f64 {
        match class {
            BudgetClass::Hip | BudgetClass::Other => self.hip,
            BudgetClass::Knee => self.knee,
            BudgetClass::Ankle => self.ankle,
            BudgetClass::Foot => self.foot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("hip", self.hip), ("knee", self.knee), ("ankle", self.ankle), ("foot", self.foot)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} budget must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Attack hyperparameters. `step_size` is an absolute step length for the
/// gradient attacks and a fraction of the current distance for the decision
/// attack.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub iterations: usize,
    pub step_size: f64,
    pub budgets: JointBudgets,
    /// Gradient draws averaged per step of the interpolation attack.
    pub eot_draws: usize,
    /// Lower end of the random interpolation interval `[value, 1]`; at 1 the
    /// attack degrades to plain [`attack_iter_l2`].
    pub eot_interpolation: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::IterL2,
            iterations: 100,
            step_size: 0.005,
            budgets: JointBudgets::default(),
            eot_draws: 8,
            eot_interpolation: 0.5,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Label-only boundary walk with relative steps.
    pub fn decision_default() -> Self {
        AttackConfig {
            kind: AttackKind::Decision,
            iterations: 200,
            step_size: 0.1,
            ..AttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step_size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        if self.eot_draws == 0 {
            return Err(Error::InvalidArgument("eot_draws must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eot_interpolation) {
            return Err(Error::InvalidArgument(format!(
                "eot_interpolation must lie in [0, 1], got {}",
                self.eot_interpolation
            )));
        }
        self.budgets.validate()
    }
}

/// Outcome of one attack on one motion.
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub adversarial: Motion,
    /// Whether the final iterate is classified away from the true label.
    pub success: bool,
    /// Iterations actually executed (attacks stop at first success).
    pub iterations_used: usize,
    /// Cross-entropy of the final iterate for the gradient attacks; final
    /// l2 distance to the clean motion for the decision attack.
    pub final_loss: f64,
}

/// Dispatch by `cfg.kind`. The seed pool is only consulted by the decision
/// attack; the gradient attacks ignore the randomness source.
pub fn run_attack(
    model: &mut ModelEval,
    motion: &Motion,
    label: usize,
    pool: Option<&Dataset>,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::IterL2 => attack_iter_l2(model, motion, label, cfg),
        AttackKind::LinfPerJoint => attack_linf_per_joint(model, motion, label, cfg),
        AttackKind::Decision => attack_decision(model, motion, label, pool, cfg, rng),
        AttackKind::EotL2 => attack_eot_l2(model, motion, label, cfg, rng),
    }
}

fn check_input(model: &ModelEval, motion: &Motion, label: usize) -> Result<()> {
    if motion.flat_dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "attack",
            details: format!(
                "motion has {} coordinates, model expects {}",
                motion.flat_dim(),
                model.input_dim()
            ),
        });
    }
    if label >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.classes()
        )));
    }
    Ok(())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Iterated gradient ascent on the model's loss with l2-normalized steps.
/// Deterministic: consumes no randomness.
pub fn attack_iter_l2(
    model: &mut ModelEval,
    motion: &Motion,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, motion, label)?;
    let mut tilde = motion.positions().to_vec();
    let mut success = false;
    let mut used = 0;
    for it in 1..=cfg.iterations {
        let grad = model.loss_input_grad(&tilde, label)?;
        let norm = l2_norm(&grad);
        if !norm.is_finite() {
            return Err(Error::NonFinite("attack gradient"));
        }
        if norm < 1e-12 {
            // Flat loss surface: no direction to follow.
            used = it - 1;
            break;
        }
        for (t, g) in tilde.iter_mut().zip(&grad) {
            *t = (*t + cfg.step_size * g / norm).clamp(-MOTION_CLAMP, MOTION_CLAMP);
        }
        used = it;
        if model.predict(&tilde)? != label {
            success = true;
            break;
        }
    }
    let final_loss = model.ce(&tilde, label)?;
    Ok(AttackResult { adversarial: motion.with_positions(tilde)?, success, iterations_used: used, final_loss })
}

/// Largest position whose recomputed offset from `center` still rounds to
/// at most `budget`. Naively clamping the offset and re-adding it to the
/// center can overshoot by one ulp, which would break the exact budget
/// guarantee checked at evaluation time.
fn box_hi(center: f64, budget: f64) -> f64 {
    let mut p = center + budget;
    while p - center > budget {
        p = p.next_down();
    }
    p
}

/// Mirror image of [`box_hi`] on the low side.
fn box_lo(center: f64, budget: f64) -> f64 {
    let mut p = center - budget;
    while center - p > budget {
        p = p.next_up();
    }
    p
}

/// Sign-gradient ascent constrained to per-joint boxes: every iterate is
/// clamped so that the recomputed per-coordinate offset from the clean
/// motion never exceeds that joint's budget, not even in the last bit.
pub fn attack_linf_per_joint(
    model: &mut ModelEval,
    motion: &Motion,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, motion, label)?;
    let clean = motion.positions();
    let classes = motion.topology().budget_classes().to_vec();
    let j3 = motion.joint_count() * 3;
    let budget_at = |i: usize| cfg.budgets.for_class(classes[(i % j3) / 3]);
    let lo: Vec<f64> = clean.iter().enumerate().map(|(i, c)| box_lo(*c, budget_at(i))).collect();
    let hi: Vec<f64> = clean.iter().enumerate().map(|(i, c)| box_hi(*c, budget_at(i))).collect();
    let mut tilde = clean.to_vec();
    let mut success = false;
    let mut used = 0;
    for it in 1..=cfg.iterations {
        let grad = model.loss_input_grad(&tilde, label)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("attack gradient"));
        }
        for (i, t) in tilde.iter_mut().enumerate() {
            let stepped = *t + cfg.step_size * grad[i].signum();
            *t = stepped.clamp(lo[i], hi[i]).clamp(-MOTION_CLAMP, MOTION_CLAMP);
        }
        used = it;
        if model.predict(&tilde)? != label {
            success = true;
            break;
        }
    }
    let final_loss = model.ce(&tilde, label)?;
    Ok(AttackResult { adversarial: motion.with_positions(tilde)?, success, iterations_used: used, final_loss })
}

/// Binary search along the segment from `origin` to a misclassified point,
/// returning the closest-to-origin point still classified away from `label`.
/// Precondition: `adv` is misclassified.
fn bisect_to_boundary(
    model: &mut ModelEval,
    origin: &[f64],
    adv: &[f64],
    label: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut point = vec![0.0; origin.len()];
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        for (p, (o, a)) in point.iter_mut().zip(origin.iter().zip(adv)) {
            *p = o + mid * (a - o);
        }
        if model.predict(&point)? != label {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    for (p, (o, a)) in point.iter_mut().zip(origin.iter().zip(adv)) {
        *p = o + hi * (a - o);
    }
    Ok(point)
}

/// Label-only boundary walk. Needs a seed pool containing at least one
/// motion the model classifies away from `label`; starts from the nearest
/// such motion, bisects to the decision boundary, then repeatedly proposes
/// an orthogonal-plus-inward step and keeps refinements that stay
/// misclassified while getting strictly closer to the clean motion. Only
/// `predict` is ever consulted, so the attack transfers to models whose
/// gradients are masked or useless.
pub fn attack_decision(
    model: &mut ModelEval,
    motion: &Motion,
    label: usize,
    pool: Option<&Dataset>,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, motion, label)?;
    let pool = pool.ok_or_else(|| {
        Error::InvalidArgument("the decision attack needs a seed pool of motions".into())
    })?;

    // Nearest motion the model already classifies away from the label.
    let mut seed: Option<(f64, &Motion)> = None;
    for sample in pool.samples() {
        if model.predict(sample.motion.positions())? == label {
            continue;
        }
        let dist = motion.l2_to(&sample.motion);
        if seed.map_or(true, |(best, _)| dist < best) {
            seed = Some((dist, &sample.motion));
        }
    }
    let (_, seed) = seed.ok_or_else(|| {
        Error::InvalidArgument(
            "the seed pool contains no motion classified away from the attacked label".into(),
        )
    })?;

    let origin = motion.positions();
    let mut best = bisect_to_boundary(model, origin, seed.positions(), label, 20)?;
    let mut best_dist = l2_norm(&diff(&best, origin));
    let mut candidate = vec![0.0; origin.len()];
    let mut used = 0;
    for it in 1..=cfg.iterations {
        used = it;
        if best_dist < 1e-9 {
            break;
        }
        // Unit direction from the current boundary point back to the origin.
        let inward: Vec<f64> =
            best.iter().zip(origin).map(|(b, o)| (o - b) / best_dist).collect();
        // Random direction orthogonal to it.
        let mut orth: Vec<f64> = (0..origin.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dot: f64 = orth.iter().zip(&inward).map(|(a, b)| a * b).sum();
        for (u, d) in orth.iter_mut().zip(&inward) {
            *u -= dot * d;
        }
        let onorm = l2_norm(&orth);
        if onorm < 1e-12 {
            continue;
        }
        let scale = cfg.step_size * best_dist;
        for (c, ((b, u), d)) in
            candidate.iter_mut().zip(best.iter().zip(&orth).zip(&inward))
        {
            *c = (b + scale * (u / onorm) + scale * d).clamp(-MOTION_CLAMP, MOTION_CLAMP);
        }
        if model.predict(&candidate)? != label {
            let refined = bisect_to_boundary(model, origin, &candidate, label, 10)?;
            let dist = l2_norm(&diff(&refined, origin));
            if dist < best_dist {
                best = refined;
                best_dist = dist;
            }
        }
    }
    let success = model.predict(&best)? != label;
    Ok(AttackResult {
        adversarial: motion.with_positions(best)?,
        success,
        iterations_used: used,
        final_loss: best_dist,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// The l2 attack with each step's gradient averaged over random
/// interpolations between the clean motion and the current iterate,
/// countering defenses that average over input randomization. With one draw
/// and interpolation 1 the iterates match [`attack_iter_l2`] exactly.
pub fn attack_eot_l2(
    model: &mut ModelEval,
    motion: &Motion,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, motion, label)?;
    let clean = motion.positions();
    let mut tilde = clean.to_vec();
    let mut point = vec![0.0; clean.len()];
    let mut acc = vec![0.0; clean.len()];
    let mut success = false;
    let mut used = 0;
    for it in 1..=cfg.iterations {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..cfg.eot_draws {
            let u: f64 = rng.random();
            let t = cfg.eot_interpolation + (1.0 - cfg.eot_interpolation) * u;
            for (p, (c, x)) in point.iter_mut().zip(clean.iter().zip(&tilde)) {
                *p = c + t * (x - c);
            }
            let grad = model.loss_input_grad(&point, label)?;
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g / cfg.eot_draws as f64;
            }
        }
        let norm = l2_norm(&acc);
        if !norm.is_finite() {
            return Err(Error::NonFinite("attack gradient"));
        }
        if norm < 1e-12 {
            used = it - 1;
            break;
        }
        for (t, g) in tilde.iter_mut().zip(&acc) {
            *t = (*t + cfg.step_size * g / norm).clamp(-MOTION_CLAMP, MOTION_CLAMP);
        }
        used = it;
        if model.predict(&tilde)? != label {
            success = true;
            break;
        }
    }
    let final_loss = model.ce(&tilde, label)?;
    Ok(AttackResult { adversarial: motion.with_positions(tilde)?, success, iterations_used: used, final_loss })
}
