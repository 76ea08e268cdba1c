//! Episodic low-shot evaluation: splits, episodes, the local sum-of-max
//! matching classifier, the global-embedding baseline and confidence
//! intervals.

pub mod episodes;
pub mod eval;
pub mod global;
pub mod local;
pub mod quality;

use thiserror::Error;

use crate::model::ModelError;

pub use episodes::{sample_episodes, Episode, SplitSpec, SplitName, ViewRef};
pub use eval::{
    encode_episode_views, evaluate_global, evaluate_local, evaluate_local_grids, evaluate_with, EvalResult,
};
pub use global::{global_baseline_embed, instance_nt_xent, instance_nt_xent_loss, masked_pool};
pub use quality::{correspondence_consistency, mask_iou, ConsistencySpec};
pub use local::{FOREGROUND_THRESHOLD, argmax_first, classify_query, local_match_score, score_cells, query_cells, QueryCells};

#[derive(Debug, Error)]
pub enum LowShotError {
    #[error("split has {available} categories, episode needs {needed}")]
    InsufficientClasses { available: usize, needed: usize },
    #[error("category {category} has {available} views, episode needs {needed}")]
    InsufficientViews {
        category: usize,
        available: usize,
        needed: usize,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error("no supports to classify against")]
    NoSupports,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

pub type Result<T> = std::result::Result<T, LowShotError>;
