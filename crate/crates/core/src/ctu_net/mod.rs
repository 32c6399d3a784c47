//! Three-path video classifier: a 3-D residual CNN (slow path), a factorized
//! space-time transformer over strided frames (fast path) and a spectral
//! branch whose descriptor gates the fusion of the other two.

pub mod checkpoint;
mod config;
mod gradcheck;
mod model;
pub mod ops;
mod params;

use std::path::PathBuf;

pub use config::{Ablation, FastConfig, FreqConfig, InputShape, ModelConfig, SlowConfig};
pub use gradcheck::{cross_entropy_loss, gradient_check, gradient_check_model, GradCheckReport, LossFn};
pub use model::{
    stack_clips, BnUpdate, CtuNet, ForwardOptions, ForwardPass, PathFeatures, Prediction, BN_MOMENTUM,
};
pub use ops::{attention, classify, fuse};
pub use params::ParamStore;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("gate error: {0}")]
    Gate(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
