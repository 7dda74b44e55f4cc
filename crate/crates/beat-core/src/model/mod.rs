//! Classifier models: the base MLP, appended BEAT heads with a skip
//! connection, the Bayesian ensemble, and checkpointing.

mod checkpoint;
mod eval;
mod types;

pub use checkpoint::{
    load_base, load_ensemble, save_base, save_ensemble, CheckpointMeta, CHECKPOINT_FORMAT_VERSION,
};
pub use eval::{EnsembleEval, Evaluator, ModelEval};
pub use types::{argmax, AppendedHead, Architecture, BaseClassifier, BeatEnsemble, ModelRef};
