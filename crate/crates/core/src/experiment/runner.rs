use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use super::grid::TrialConfig;
use super::ExperimentError;
use crate::model::Model;
use crate::training::{train, Dataset, EpochMetrics, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Position in the enumerated grid.
    pub task_id: usize,
    pub config: TrialConfig,
    pub status: TrialStatus,
    pub eval_wer: Option<f64>,
    pub eval_loss: Option<f64>,
    pub wall_clock_s: f64,
    pub epoch_metrics: Vec<EpochMetrics>,
    pub error: Option<String>,
}

/// Settings shared by every trial of a campaign.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub max_steps: Option<usize>,
}

fn run_trial(
    task_id: usize,
    config: &TrialConfig,
    base: &Model,
    data: &Dataset,
    plan: &FoldPlan,
    opts: &RunOptions,
) -> TrialResult {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<Vec<EpochMetrics>, String> {
        let train_set = data.subset(&plan.train_indices(config.fold));
        let eval_set = data.subset(&plan.test_indices(config.fold));
        let mut model = base.clone();
        model.inject_lora(&config.lora, config.seed).map_err(|e| e.to_string())?;
        let tc = TrainConfig {
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            seed: config.seed,
            freeze_base: true,
            max_steps: opts.max_steps,
            ..TrainConfig::default()
        };
        train(&mut model, &train_set, &eval_set, &tc).map_err(|e| e.to_string())
    }));
    let wall_clock_s = start.elapsed().as_secs_f64();
    let result = outcome.unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "trial panicked".into());
        Err(format!("internal error: {msg}"))
    });
    match result {
        Ok(metrics) => {
            let last = metrics.last();
            TrialResult {
                task_id,
                config: config.clone(),
                status: TrialStatus::Ok,
                eval_wer: last.map(|m| m.eval_wer),
                eval_loss: last.map(|m| m.eval_loss),
                wall_clock_s,
                epoch_metrics: metrics,
                error: None,
            }
        }
        Err(e) => TrialResult {
            task_id,
            config: config.clone(),
            status: TrialStatus::Failed,
            eval_wer: None,
            eval_loss: None,
            wall_clock_s,
            epoch_metrics: Vec::new(),
            error: Some(e),
        },
    }
}

/// Trains and evaluates every trial on a pool of `workers` threads. Each
/// trial adapts its own copy of `base` on the complement of its fold and is
/// scored on the fold. Results come back in trial order regardless of
/// scheduling; a failing trial is recorded and the rest continue.
pub fn run_campaign(
    configs: &[TrialConfig],
    base: &Model,
    data: &Dataset,
    plan: &FoldPlan,
    workers: usize,
    opts: &RunOptions,
) -> Result<Vec<TrialResult>, ExperimentError> {
    if workers == 0 {
        return Err(ExperimentError::BadGrid("workers must be at least 1".into()));
    }
    if plan.n != data.len() {
        return Err(ExperimentError::BadGrid(format!("fold plan covers {} items, dataset has {}", plan.n, data.len())));
    }
    if let Some(t) = configs.iter().find(|t| t.fold >= plan.k) {
        return Err(ExperimentError::BadGrid(format!("trial fold {} outside k = {}", t.fold, plan.k)));
    }
    super::grid::check_ranks(configs, &base.config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::BadGrid(e.to_string()))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| run_trial(i, c, base, data, plan, opts))
            .collect()
    }))
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub task_id: usize,
    pub fold: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs_total: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_wer: f64,
    pub wall_clock_s: f64,
}

pub fn metrics_lines(results: &[TrialResult]) -> Vec<MetricsLine> {
    results
        .iter()
        .flat_map(|r| {
            r.epoch_metrics.iter().map(move |m| MetricsLine {
                task_id: r.task_id,
                fold: r.config.fold,
                batch: r.config.batch_size,
                lr: r.config.learning_rate,
                epochs_total: r.config.epochs,
                epoch: m.epoch,
                train_loss: m.train_loss,
                eval_loss: m.eval_loss,
                eval_wer: m.eval_wer,
                wall_clock_s: m.wall_clock_s,
            })
        })
        .collect()
}
