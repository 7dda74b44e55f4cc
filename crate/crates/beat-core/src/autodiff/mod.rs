//! Reverse-mode autodiff: dense arrays, compute graphs, parameter vectors,
//! and finite-difference gradient checking.

mod array;
mod gradcheck;
mod graph;
mod params;

pub use array::DenseArray;
pub use gradcheck::{grad_check, MAX_STEP, MIN_STEP};
pub use graph::{Graph, NodeId};
pub use params::{to_hex, ParamVector, PARAM_FORMAT_VERSION};

#[allow(unused_imports)]
pub(crate) use graph::{logsumexp_row, softmax_row};
