//! Desk-scale training, evaluation metrics, ablation sweeps and report files.

mod metrics;
mod report;
mod train;

use std::path::PathBuf;

pub use metrics::{argmax, auc_one_vs_rest, compute_metrics, MetricsReport};
pub use report::{
    emit_report, loss_curve_csv, metrics_table, percent, radar_data, write_loss_curve, EmittedReport, RadarData,
    RadarSeries, RadarValue,
};
pub use train::{
    evaluate, evaluate_samples, load_split, predict_probs, run_ablations, train, train_samples, AblationRow,
    AblationTable, LossPoint, Optimizer, TrainOutcome, TrainSpec,
};

use crate::ctu_net::ModelError;
use crate::video_data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,
    #[error("training diverged at epoch {epoch}, step {step}; recent losses {recent:?}")]
    Diverged { epoch: usize, step: usize, recent: Vec<f64> },
    #[error("non-finite gradient for {param} at epoch {epoch}, step {step} (loss {loss})")]
    DivergedParam {
        epoch: usize,
        step: usize,
        param: String,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
