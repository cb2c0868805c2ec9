use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::entropy::latent_action_entropy;
use super::evaluate::{build_tasks, evaluate, EvalTask, Evaluation, Policy};
use super::metrics::{write_metrics, MetricsRow};
use crate::autodiff::{Graph, ParamStore, Rmsprop};
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::error::{validation, Error, Result};
use crate::maze::{read_dataset, MazeTask, SPLITS};
use crate::planner::{init_params, plan, BoundParams, Mode, PlannerConfig};
use crate::seed;

pub struct Splits {
    pub train: Vec<MazeTask>,
    pub val: Vec<MazeTask>,
    pub test: Vec<MazeTask>,
}

impl Splits {
    /// Reads `train.hvmz`, `val.hvmz` and `test.hvmz` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut parts = SPLITS.iter().map(|s| read_dataset(&dir.join(format!("{s}.hvmz"))).map(|d| d.tasks));
        Ok(Splits {
            train: parts.next().expect("three splits")?,
            val: parts.next().expect("three splits")?,
            test: parts.next().expect("three splits")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub val_sr: f64,
    pub entropy: f64,
    pub seconds: f64,
    pub improved: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_sr: f64,
    /// Parameters of the best epoch.
    pub params: ParamStore<f32>,
    pub epochs: Vec<EpochSummary>,
    pub test: Evaluation,
    pub metrics: Vec<MetricsRow>,
    pub test_metrics: Vec<MetricsRow>,
    pub checkpoint: PathBuf,
}

/// Masked cross-entropy of one maze and its parameter gradients.
pub fn maze_loss_and_grads(
    params: &ParamStore<f32>,
    config: &PlannerConfig,
    task: &MazeTask,
    mode: Mode,
    plan_seed: u64,
) -> Result<(f64, ParamStore<f32>)> {
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, params, config)?;
    let obs = g.constant(task.maze.observation());
    let out = plan(&mut g, obs, &bound, config, mode, plan_seed)?;
    let loss = g.masked_cross_entropy(out.logits, &task.expert, &task.labeled_mask())?;
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Ok((value, params.zeros_like()));
    }
    g.backward(loss)?;
    Ok((value, bound.gradients(&g)))
}

/// File names written under the output directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const TEST_METRICS_FILE: &str = "test_metrics.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

/// Imitation training with full-state supervision.
///
/// Each epoch shuffles the training mazes, and for every batch averages the
/// per-maze masked cross-entropy (planner in train mode) and takes one RMSprop
/// step. After each epoch the planner is evaluated on the validation tasks in
/// eval mode; the epoch with the highest validation success rate (earliest on
/// ties) is checkpointed and evaluated on the test tasks.
pub fn train(
    run_id: &str,
    planner: &PlannerConfig,
    config: &TrainConfig,
    data: &Splits,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    let params = init_params::<f32>(planner, seed::substream(config.seed, "init", 0));
    train_from(params, run_id, planner, config, data, out_dir, progress)
}

/// [`train`] starting from the given parameters instead of a fresh initialisation.
pub fn train_from(
    mut params: ParamStore<f32>,
    run_id: &str,
    planner: &PlannerConfig,
    config: &TrainConfig,
    data: &Splits,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    planner.validate()?;
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(validation!("training needs at least one training and one validation maze"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let started = Instant::now();
    let seconds = || if config.timing { started.elapsed().as_secs_f64() } else { 0.0 };

    let mut optimizer = Rmsprop::new(config.optimizer, &params);
    let buckets = &config.buckets;
    let val_tasks: Vec<EvalTask> = build_tasks(&data.val, buckets, seed::substream(config.seed, "val-tasks", 0));
    let test_tasks: Vec<EvalTask> = build_tasks(&data.test, buckets, seed::substream(config.seed, "test-tasks", 0));
    let entropy_mazes = &data.val[..config.entropy_mazes.min(data.val.len())];

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(usize, f64, ParamStore<f32>, f64, f64)> = None;
    let mut rows = Vec::new();
    let mut epochs = Vec::new();
    let checkpoint = out_dir.join(CHECKPOINT_FILE);

    for epoch in 1..=config.epochs {
        let epoch_seed = seed::substream(config.seed, "epoch", epoch as u64);
        order.shuffle(&mut seed::substream_rng(epoch_seed, "shuffle", 0));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_seed = seed::substream(epoch_seed, "batch", b as u64);
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &k)| {
                    maze_loss_and_grads(&params, planner, &data.train[k], Mode::Train, seed::substream(batch_seed, "maze", pos as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at epoch {epoch}, batch {b} (batch seed {batch_seed:#018x}, mazes {batch:?})"
                    )));
                }
                batch_loss += loss;
                grads.add_scaled(g, scale)?;
            }
            loss_sum += batch_loss;
            optimizer.step(&mut params, &grads)?;
        }
        let loss = loss_sum / data.train.len() as f64;

        let val = evaluate(&data.val, &val_tasks, buckets, &Policy::Planner { params: &params, config: planner })?;
        let val_sr = val.sr.unwrap_or(0.0);
        let entropy = latent_action_entropy(&params, planner, entropy_mazes, seed::substream(epoch_seed, "entropy", 0))?;
        let improved = best.as_ref().is_none_or(|b| val_sr > b.1);
        if improved {
            let meta = CheckpointMeta {
                planner: planner.clone(),
                epoch,
                seed: config.seed,
                optimizer: config.optimizer,
                val_sr: Some(val_sr),
                records: params.len(),
            };
            save_checkpoint(&checkpoint, &meta, &params)?;
            best = Some((epoch, val_sr, params.clone(), loss, entropy));
        }
        let summary = EpochSummary { epoch, loss, val_sr, entropy, seconds: seconds(), improved };
        rows.push(MetricsRow {
            sr: val.sr,
            optimality: val.optimality,
            entropy: Some(entropy),
            loss: Some(loss),
            seconds: summary.seconds,
            ..MetricsRow::new(run_id, planner, epoch, "val")
        });
        write_metrics(&out_dir.join(METRICS_FILE), &rows)?;
        progress(&summary);
        epochs.push(summary);
    }

    let (best_epoch, best_val_sr, best_params, best_loss, best_entropy) = best.expect("at least one epoch");
    let test = evaluate(&data.test, &test_tasks, buckets, &Policy::Planner { params: &best_params, config: planner })?;
    let test_rows: Vec<MetricsRow> = test
        .buckets
        .iter()
        .map(|b| MetricsRow {
            bucket_lo: Some(b.bucket.lo),
            bucket_hi: Some(b.bucket.hi),
            sr: b.sr,
            optimality: b.optimality,
            entropy: Some(best_entropy),
            loss: Some(best_loss),
            seconds: seconds(),
            ..MetricsRow::new(run_id, planner, best_epoch, "test")
        })
        .collect();
    write_metrics(&out_dir.join(TEST_METRICS_FILE), &test_rows)?;
    Ok(TrainOutcome {
        best_epoch,
        best_val_sr,
        params: best_params,
        epochs,
        test,
        metrics: rows,
        test_metrics: test_rows,
        checkpoint,
    })
}
