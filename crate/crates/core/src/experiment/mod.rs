//! Cross-validated hyperparameter campaigns: fold plans, grid enumeration,
//! a parallel trial runner and table/figure reports.

pub mod desk;
pub mod folds;
pub mod grid;
pub mod report;
pub mod runner;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use desk::{run_desk_scale, DeskScaleConfig, DeskScaleReport};
pub use folds::{kfold_split, FoldPlan};
pub use grid::{check_ranks, enumerate_grid, Campaign, GridSpec, TrialConfig};
pub use report::{aggregate, emit_report, render_svg, ReportBundle, ReportFiles};
pub use runner::{metrics_lines, run_campaign, MetricsLine, RunOptions, TrialResult, TrialStatus};

use crate::model::{ModelConfig, Role};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot split {n} items into {k} folds")]
    BadK { k: usize, n: usize },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("rank {rank} exceeds {limit} for the model's {role} matrices")]
    RankTooLargeForModel { rank: usize, limit: usize, role: Role },
    #[error("no trial results")]
    EmptyResults,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Campaign description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignManifest {
    pub campaign: Campaign,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Stream records: a `.jsonl` file or a corpus directory.
    pub dataset_dir: PathBuf,
    #[serde(default = "default_divisor")]
    pub scale_divisor: usize,
    /// Overrides for the grid values; missing fields keep their defaults.
    /// The divisor always comes from `scale_divisor`.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Model shape for a freshly initialised base.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Checkpoint to adapt instead of a random base.
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_k() -> usize {
    5
}

fn default_workers() -> usize {
    1
}

fn default_divisor() -> usize {
    32
}

impl CampaignManifest {
    pub fn grid_spec(&self) -> GridSpec {
        let mut g = self.grid.clone().unwrap_or_default();
        g.scale_divisor = self.scale_divisor;
        g
    }
}
