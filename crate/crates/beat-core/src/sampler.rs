//! Stochastic-gradient samplers used by BEAT training.
//!
//! Three samplers live here:
//! - plain SGLD over motion space, the shared primitive ([`sgld_step`]);
//! - a persistent-chain negative sampler with a replay buffer
//!   ([`PcdBuffer`], [`sample_negatives`]) that ascends the model's
//!   unnormalized log-density;
//! - an adversary sampler ([`sample_adversary`]) that ascends the
//!   conditional adversarial density of [`crate::energy`];
//! - SG-AHMC ([`SgahmcState`]), the adaptively preconditioned sampler that
//!   draws appended-head parameters from their posterior.
//!
//! All motion-space samplers clamp coordinates to `[-MOTION_CLAMP,
//! MOTION_CLAMP]` after every step so chains cannot escape to infinity.

use crate::autodiff::ParamVector;
use crate::energy::{conditional_grad_flat, ManifoldDistanceConfig};
use crate::error::{Error, Result};
use crate::model::Evaluator;
use crate::rng::Rng;
use crate::skeleton::Motion;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Coordinate bound enforced on every sampled motion.
pub const MOTION_CLAMP: f64 = 5.0;

/// Floor applied to the SG-AHMC preconditioner so updates stay finite. The
/// floor also caps the injected noise along near-flat parameter directions
/// (the noise variance scales with 1/C), so it doubles as a stability knob:
/// too small a floor turns every flat direction into a violent random walk.
const PRECOND_FLOOR: f64 = 1e-4;

/// Step size and noise scale of the motion-space Langevin sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldConfig {
    /// Langevin step size (the drift uses half its square).
    pub step: f64,
    /// Scale multiplying the per-step unit Gaussian noise.
    pub noise_std: f64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig { step: 0.01, noise_std: 0.005 }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sgld step must be finite and non-negative, got {}",
                self.step
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sgld noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// One Langevin step in place: `x += (step^2 / 2) * grad + step * noise_std * z`
/// with `z` standard normal per coordinate. `grad` must be the ascent
/// gradient of the target log-density. With `step == 0` the point is
/// unchanged and no randomness is consumed.
pub fn sgld_step(point: &mut [f64], grad: &[f64], cfg: &SgldConfig, rng: &mut Rng) -> Result<()> {
    cfg.validate()?;
    if point.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            op: "sgld_step",
            details: format!("point has {} coordinates, grad has {}", point.len(), grad.len()),
        });
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sgld gradient"));
    }
    if cfg.step == 0.0 {
        return Ok(());
    }
    let drift = 0.5 * cfg.step * cfg.step;
    let noise = cfg.step * cfg.noise_std;
    for (x, g) in point.iter_mut().zip(grad) {
        *x += drift * g;
        if noise > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            *x += noise * z;
        }
    }
    Ok(())
}

fn clamp_coords(point: &mut [f64]) {
    for v in point.iter_mut() {
        *v = v.clamp(-MOTION_CLAMP, MOTION_CLAMP);
    }
}

fn uniform_start(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Replay buffer of persistent negative chains. Entries start as uniform
/// noise in `[-1, 1]` and are overwritten by the end states of later chains.
#[derive(Clone, Debug)]
pub struct PcdBuffer {
    dim: usize,
    reinit_prob: f64,
    entries: Vec<Vec<f64>>,
}

impl PcdBuffer {
    pub fn new(capacity: usize, dim: usize, reinit_prob: f64, rng: &mut Rng) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "pcd buffer needs capacity >= 1 and dim >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&reinit_prob) {
            return Err(Error::InvalidArgument(format!(
                "reinit_prob must lie in [0, 1], got {reinit_prob}"
            )));
        }
        let entries = (0..capacity).map(|_| uniform_start(dim, rng)).collect();
        Ok(PcdBuffer { dim, reinit_prob, entries })
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Current chain states, mostly useful for inspection and rendering.
    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

/// Draw `count` negative samples by running `steps` SGLD steps per chain on
/// the model's unnormalized log-density. Each chain either restarts from
/// fresh uniform noise (with the buffer's reinit probability) or continues a
/// randomly chosen stored chain; its end state replaces that buffer slot.
/// Chains whose gradient turns non-finite restart from fresh noise.
pub fn sample_negatives(
    model: &mut Evaluator,
    buffer: &mut PcdBuffer,
    count: usize,
    steps: usize,
    cfg: &SgldConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if model.input_dim() != buffer.dim {
        return Err(Error::ShapeMismatch {
            op: "sample_negatives",
            details: format!(
                "model expects {} inputs, buffer holds {}-dim chains",
                model.input_dim(),
                buffer.dim
            ),
        });
    }
    let mut out = Vec::with_capacity(count);
    let mut grad = vec![0.0; buffer.dim];
    for _ in 0..count {
        let reinit = rng.random::<f64>() < buffer.reinit_prob;
        let slot = rng.random_range(0..buffer.entries.len());
        let mut x =
            if reinit { uniform_start(buffer.dim, rng) } else { buffer.entries[slot].clone() };
        let mut taken = 0;
        while taken < steps {
            model.input_grad_lse(&x, &mut grad)?;
            if !grad.iter().all(|v| v.is_finite()) {
                x = uniform_start(buffer.dim, rng);
                taken = 0;
                continue;
            }
            sgld_step(&mut x, &grad, cfg, rng)?;
            clamp_coords(&mut x);
            taken += 1;
        }
        buffer.entries[slot] = x.clone();
        out.push(x);
    }
    Ok(out)
}

/// Draw one adversarial motion for `(x, label)`: start from `x` plus uniform
/// noise in `[-budget, budget]`, then ascend the conditional adversarial
/// log-density for `steps` SGLD steps. With `budget == 0` and `steps == 0`
/// the clean motion is returned unchanged.
#[allow(clippy::too_many_arguments)]
pub fn sample_adversary(
    model: &mut Evaluator,
    x: &Motion,
    label: usize,
    budget: f64,
    steps: usize,
    sgld: &SgldConfig,
    dist: &ManifoldDistanceConfig,
    rng: &mut Rng,
) -> Result<Motion> {
    sgld.validate()?;
    dist.validate()?;
    if !budget.is_finite() || budget < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "adversary budget must be finite and non-negative, got {budget}"
        )));
    }
    let mut tilde = x.positions().to_vec();
    if budget > 0.0 {
        for v in tilde.iter_mut() {
            *v += rng.random_range(-budget..budget);
        }
        clamp_coords(&mut tilde);
    }
    let mut grad = vec![0.0; tilde.len()];
    for _ in 0..steps {
        conditional_grad_flat(model, x, &tilde, label, dist, &mut grad)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("adversary gradient"));
        }
        sgld_step(&mut tilde, &grad, sgld, rng)?;
        clamp_coords(&mut tilde);
    }
    x.with_positions(tilde)
}

/// SG-AHMC hyperparameters. `burn_in` counts sampler steps during which the
/// adaptation horizon keeps growing; past it the horizon is frozen and only
/// the preconditioner continues to track the squared gradients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgahmcConfig {
    /// Base step scale; drift uses its square, noise its cube.
    pub step: f64,
    /// Friction constant trading noise against drift.
    pub friction: f64,
    /// Sampler steps taken per gradient refresh.
    pub steps_per_round: usize,
    /// Steps during which the adaptation horizon may grow.
    pub burn_in: usize,
}

impl Default for SgahmcConfig {
    fn default() -> Self {
        SgahmcConfig { step: 0.01, friction: 1e-5, steps_per_round: 30, burn_in: 1000 }
    }
}

impl SgahmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sgahmc step must be finite and positive, got {}",
                self.step
            )));
        }
        if !self.friction.is_finite() || self.friction < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sgahmc friction must be finite and non-negative, got {}",
                self.friction
            )));
        }
        if self.steps_per_round == 0 {
            return Err(Error::InvalidArgument("sgahmc steps_per_round must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adaptive preconditioner state of the SG-AHMC parameter sampler. One state
/// belongs to one sampled parameter vector and must be stepped with
/// descent-convention gradients (positive gradient moves the parameter down).
#[derive(Clone, Debug)]
pub struct SgahmcState {
    cfg: SgahmcConfig,
    /// Per-scalar preconditioner `C`, an EMA of squared gradients.
    precond: ParamVector,
    /// Per-scalar adaptation horizon `tau` controlling the EMA rate.
    horizon: ParamVector,
    taken: usize,
}

impl SgahmcState {
    /// Fresh state for parameters shaped like `template`; preconditioner and
    /// horizon start at one.
    pub fn new(template: &ParamVector, cfg: SgahmcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SgahmcState {
            cfg,
            precond: template.filled_like(1.0),
            horizon: template.filled_like(1.0),
            taken: 0,
        })
    }

    pub fn config(&self) -> &SgahmcConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.taken
    }

    /// One sampler step in place. Per scalar with gradient `h` and
    /// preconditioner `C`:
    ///
    /// `theta -= step^2 * h / sqrt(C)` plus Gaussian noise of variance
    /// `max(2 * friction * step^3 / C - step^4, 0)`; then the horizon adapts
    /// (during burn-in) and `C` moves toward `h^2` at rate `1 / tau`.
    ///
    /// The parameter update always uses the preconditioner from before the
    /// adaptation, and one unit normal is drawn per scalar regardless of the
    /// noise variance so randomness consumption does not depend on values.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, rng: &mut Rng) -> Result<()> {
        if !params.same_layout(&self.precond) || !params.same_layout(grad) {
            return Err(Error::ShapeMismatch {
                op: "sgahmc_step",
                details: "params, gradient, and sampler state must share one layout".into(),
            });
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("sgahmc gradient"));
        }
        let sigma = self.cfg.step;
        let s2 = sigma * sigma;
        let s3 = s2 * sigma;
        let s4 = s2 * s2;
        let friction = self.cfg.friction;
        let adapt_horizon = self.taken < self.cfg.burn_in;
        let names: Vec<String> = self.precond.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let g = grad.get(name).expect("layout checked");
            let p = params.get_mut(name).expect("layout checked");
            let c_block = self.precond.get_mut(name).expect("layout checked");
            let t_block = self.horizon.get_mut(name).expect("layout checked");
            let (gd, pd) = (g.data(), p.data_mut());
            let (cd, td) = (c_block.data_mut(), t_block.data_mut());
            for i in 0..gd.len() {
                let h = gd[i];
                let c = cd[i];
                let z: f64 = rng.sample(StandardNormal);
                let var = (2.0 * friction * s3 / c - s4).max(0.0);
                pd[i] += -s2 * h / c.sqrt() + var.sqrt() * z;
                let h2 = h * h;
                if adapt_horizon {
                    td[i] = (td[i] * (1.0 - h2 / c) + 1.0).max(1.0);
                }
                let rate = 1.0 / td[i];
                cd[i] = ((1.0 - rate) * c + rate * h2).max(PRECOND_FLOOR);
            }
        }
        self.taken += 1;
        if !params.all_finite() {
            return Err(Error::NonFinite("sgahmc parameters"));
        }
        Ok(())
    }
}
