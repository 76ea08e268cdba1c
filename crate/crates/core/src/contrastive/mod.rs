//! Training pairs, coordinate-consistent augmentation, the
//! correspondence-level NT-Xent loss, the mask loss and the training loop.

pub mod augment;
pub mod batch;
pub mod loss;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, DEFAULT_OCCLUSION_TOL};
use crate::model::ModelError;

pub use augment::{augment, AugmentConfig, Augmented};
pub use batch::{azimuth_gap, build_batch, grid_mask, PairSample, TrainBatch};
pub use loss::{corr_nt_xent_loss, mask_bce_loss, negatives, LossBreakdown, NegativeStrategy};
pub use train::{train, EpochLog, Objective, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no view pair of object {0} produced a correspondence")]
    PairExhausted(usize),
    #[error("batch has no correspondences")]
    NoCorrespondences,
    #[error("correspondence {index} of object {object} has no negatives")]
    NoNegatives { object: usize, index: usize },
    #[error("non-finite loss at step {step}: {dump}")]
    NonFinite { step: usize, dump: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<dope_autodiff::AutodiffError> for TrainError {
    fn from(e: dope_autodiff::AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    MultiView,
    /// Two augmentations of one view.
    SingleViewAugmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_correspondences: usize,
    pub temperature: f64,
    pub strategy: NegativeStrategy,
    pub pair_mode: PairMode,
    pub random_background_remove: bool,
    pub predict_mask: bool,
    pub include_positive_in_denominator: bool,
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub ema: f64,
    pub max_azimuth_gap_deg: f64,
    pub occlusion_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            n_correspondences: 16,
            temperature: 0.2,
            strategy: NegativeStrategy::Both,
            pair_mode: PairMode::MultiView,
            random_background_remove: true,
            predict_mask: true,
            include_positive_in_denominator: true,
            augment: AugmentConfig::default(),
            epochs: 20,
            steps_per_epoch: 100,
            lr0: 1e-3,
            weight_decay: 1e-2,
            ema: 0.99,
            max_azimuth_gap_deg: 45.0,
            occlusion_tol: DEFAULT_OCCLUSION_TOL,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Augmentation settings with the background-removal switch applied.
    pub fn effective_augment(&self) -> AugmentConfig {
        let mut a = self.augment.clone();
        if !self.random_background_remove {
            a.p_background = 0.0;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0) {
            return bad("temperature must satisfy τ > 0");
        }
        if self.n_correspondences == 0 {
            return bad("n_correspondences must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.batch_size < 2 && self.strategy != NegativeStrategy::SecondViewOnly {
            return bad("negatives from other objects need batch_size >= 2");
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return bad("ema must lie in [0, 1]");
        }
        if self.total_steps() == 0 {
            return bad("epochs * steps_per_epoch must be positive");
        }
        if !(self.lr0 >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr0 and weight_decay must be non-negative");
        }
        if !(self.occlusion_tol > 0.0) {
            return bad("occlusion_tol must be positive");
        }
        self.augment.validate().map_err(TrainError::InvalidConfig)
    }
}
