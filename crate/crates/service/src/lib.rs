//! Command-line tools, HTTP API and persistent case store for the
//! classify → report → grade → score workflow.

pub mod api;
pub mod classifier;
pub mod cli;
pub mod plot;
pub mod store;
pub mod workflow;

use std::path::PathBuf;

use autous_agent::assessment::AssessmentError;
use autous_agent::diagnosis::DiagnosisError;
use autous_core::ctu_net::ModelError;
use autous_core::train_eval::TrainError;
use autous_core::video_data::DataError;

pub use api::{router, AppState, ServiceConfig};
pub use classifier::Classifier;
pub use store::{RecordStore, StoreError, Versioned};
pub use workflow::{CaseStatus, DiagnosisCase};

pub const ENV_LLM_ENDPOINT: &str = "AUTOUS_LLM_ENDPOINT";
pub const ENV_LLM_TOKEN: &str = "AUTOUS_LLM_TOKEN";
pub const ENV_STORE_DIR: &str = "AUTOUS_STORE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("case {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Workflow(#[from] workflow::WorkflowError),
    #[error("payload exceeds {limit} bytes")]
    PayloadTooLarge { limit: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.into(),
            source,
        }
    }
}
