//! End-to-end runs: co-train, score, select, retrain on the selection, and
//! evaluate on held-out samples. Sweeps repeat a run over one varied knob.

use serde::{Deserialize, Serialize};

use crate::analysis::{Report, SweepRow};
use crate::error::{invalid, Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::selector::{
    build_knn, compute_difficulty, select, DifficultyTable, SelectOptions, SelectionResult,
    DEFAULT_GAMMA, DEFAULT_K,
};
use crate::stage1::{train_stage1, Stage1Output, TrainConfig};
use crate::toy_model::{train_plain, TokenSample, ToyBigramModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            lr: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub m: usize,
    pub k: usize,
    pub gamma: f64,
    pub diversity: bool,
    pub easiest: bool,
    pub retrain: RetrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            m: 0,
            k: DEFAULT_K,
            gamma: DEFAULT_GAMMA,
            diversity: true,
            easiest: false,
            retrain: RetrainConfig::default(),
        }
    }
}

/// A token dataset with its paired feature rows.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub samples: &'a [TokenSample],
    pub features: &'a FeatureMatrix,
    pub vocab: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub stage1: Stage1Output,
    pub difficulties: DifficultyTable,
    pub selection: SelectionResult,
    pub retrained: ToyBigramModel,
    pub held_out_loss: f64,
}

/// Ranks a difficulty table, hardest first (or easiest first when asked).
pub fn select_from_table(
    table: &DifficultyTable,
    features: &FeatureMatrix,
    m: usize,
    k: usize,
    gamma: f64,
    diversity: bool,
    easiest: bool,
) -> Result<SelectionResult> {
    let mut work = if easiest {
        table.negated()
    } else {
        table.clone()
    };
    let opts = SelectOptions {
        m,
        gamma,
        diversity,
    };
    if diversity && gamma > 0.0 {
        let index = build_knn(features, k)?;
        select(&mut work, Some(&index), opts)
    } else {
        select(&mut work, None, opts)
    }
}

/// Retrains a fresh uniform model on `indices` and scores it on `held_out`.
pub fn retrain_on(
    data: Dataset<'_>,
    indices: &[usize],
    held_out: &[TokenSample],
    cfg: &RetrainConfig,
    seed: u64,
) -> Result<(ToyBigramModel, f64)> {
    let subset: Vec<TokenSample> = indices.iter().map(|&i| data.samples[i].clone()).collect();
    let (model, eval) = train_plain(
        ToyBigramModel::uniform(data.vocab)?,
        &subset,
        cfg.epochs,
        cfg.batch_size,
        cfg.lr,
        seed,
    )?;
    let loss = eval.mean_loss(held_out)?;
    Ok((model, loss))
}

pub fn run_pipeline(
    data: Dataset<'_>,
    held_out: &[TokenSample],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineRun> {
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let stage1 = train_stage1(
        ToyBigramModel::uniform(data.vocab)?,
        data.samples,
        data.features,
        &train,
    )?;
    let difficulties = compute_difficulty(&stage1.params, data.features)?;
    let selection = select_from_table(
        &difficulties,
        data.features,
        cfg.m,
        cfg.k,
        cfg.gamma,
        cfg.diversity,
        cfg.easiest,
    )?;
    let (retrained, held_out_loss) =
        retrain_on(data, &selection.indices(), held_out, &cfg.retrain, seed)?;
    Ok(PipelineRun {
        stage1,
        difficulties,
        selection,
        retrained,
        held_out_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    PruningSize,
    BatchSize,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::PruningSize => "pruning-size",
            SweepVariable::BatchSize => "batch-size",
        }
    }
}

/// A sweep that stopped early; `partial` holds the rows that completed.
#[derive(Debug, thiserror::Error)]
#[error("sweep aborted after {} completed rows: {source}", partial.rows.len())]
pub struct SweepFailure {
    pub partial: Box<Report>,
    #[source]
    pub source: Error,
}

/// Runs the pipeline once per value.
///
/// Row seeds are `base_seed + j`, where `j` is the position of the value's
/// first occurrence, so repeated values reproduce the same row. For batch
/// size sweeps the accumulation steps are rescaled to keep the overall batch
/// (`batch_size * grad_accum_steps` of `cfg.train`) fixed.
pub fn sweep(
    data: Dataset<'_>,
    held_out: &[TokenSample],
    cfg: &PipelineConfig,
    variable: SweepVariable,
    values: &[usize],
    base_seed: u64,
) -> std::result::Result<Report, SweepFailure> {
    let mut report = Report::new(variable.name());
    if values.is_empty() {
        return Err(SweepFailure {
            partial: Box::new(report),
            source: invalid("sweep needs at least one value"),
        });
    }
    let overall = cfg.train.batch_size * cfg.train.grad_accum_steps;
    for &value in values {
        let first = values.iter().position(|&v| v == value).unwrap_or(0);
        let seed = base_seed + first as u64;
        let mut run_cfg = cfg.clone();
        match variable {
            SweepVariable::PruningSize => run_cfg.m = value,
            SweepVariable::BatchSize => {
                run_cfg.train.batch_size = value;
                run_cfg.train.grad_accum_steps =
                    ((overall as f64 / value.max(1) as f64).round() as usize).max(1);
            }
        }
        match run_pipeline(data, held_out, &run_cfg, seed) {
            Ok(run) => report.rows.push(SweepRow {
                value,
                seed,
                grad_accum_steps: run_cfg.train.grad_accum_steps,
                selected: run.selection.picks.len(),
                held_out_loss: run.held_out_loss,
            }),
            Err(source) => {
                return Err(SweepFailure {
                    partial: Box::new(report),
                    source,
                })
            }
        }
    }
    let losses: Vec<f64> = report.rows.iter().map(|r| r.held_out_loss).collect();
    report.metrics.insert(
        "min_held_out_loss".into(),
        losses.iter().copied().reduce(f64::min),
    );
    report.metrics.insert(
        "max_held_out_loss".into(),
        losses.iter().copied().reduce(f64::max),
    );
    Ok(report)
}
