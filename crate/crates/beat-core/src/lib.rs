//! BEAT: Bayesian energy-based adversarial training for skeletal-motion
//! classifiers.
//!
//! The crate provides, bottom-up:
//!
//! - [`autodiff`]: dense arrays, a small reverse-mode compute graph, named
//!   parameter vectors with digests, and gradient checking;
//! - [`skeleton`]: motion and topology types, a synthetic motion generator,
//!   and file I/O;
//! - [`model`]: the base classifier, appended ensemble heads with a skip
//!   connection, Bayesian model averaging, and checkpointing;
//! - [`energy`]: the energy-based view of a classifier and the
//!   perceptual manifold distance with its gradient;
//! - [`sampler`]: Langevin (SGLD) sampling, persistent contrastive-divergence
//!   buffers, and the adaptive stochastic-gradient HMC parameter sampler;
//! - [`train`]: standard, adversarial, randomized-smoothing, and BEAT
//!   training loops;
//! - [`attack`]: white-box, per-joint-budget, decision-boundary, and
//!   expectation-over-transformation attacks;
//! - [`metrics`]: accuracy, attack success rate, perceptual deviation
//!   measures, and expected-gradient analysis.
//!
//! Everything is deterministic given a seed; see [`rng`].

pub mod attack;
pub mod autodiff;
pub mod energy;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
