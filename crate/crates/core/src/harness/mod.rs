//! Command-line driver: configuration, checkpoints, experiment runs,
//! metrics reports and correspondence visualizations.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod run;
pub mod viz;

use thiserror::Error;

use crate::contrastive::TrainError;
use crate::geometry::GeometryError;
use crate::lowshot::LowShotError;
use crate::model::ModelError;
use crate::scenegen::SceneError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use cli::{dispatch, USAGE};
pub use config::{apply_override, Classifier, EvalConfig, Paths, RunConfig, Setting, Variant};
pub use metrics::{write_metrics, MetricRow, Report};
pub use run::{classifier_for, evaluate_checkpoint, inference_gate, run_ablation, train_run};
pub use viz::{position_hue, viz_matches, VizSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    LowShot(#[from] LowShotError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Checkpoint(#[from] dope_autodiff::AutodiffError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl HarnessError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
