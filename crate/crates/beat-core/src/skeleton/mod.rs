//! Skeletal-motion data: topology, motion sequences, labeled datasets,
//! kinematic feature extraction, and temporal filtering.

mod io;
mod synth;
mod types;

pub use io::{load_dataset, load_topology, save_dataset, save_topology, DATASET_FORMAT_VERSION};
pub use synth::{synth_generate, GeneratorConfig};
pub use types::{
    bone_lengths, frame_derivative, temporal_gaussian_filter, BudgetClass, Dataset, LabeledSample,
    Motion, SkeletonTopology, Split,
};
