//! Imitation training, rollout evaluation, latent-action entropy and
//! feature-map export.

mod config;
mod entropy;
mod evaluate;
mod export;
mod metrics;
mod trainer;

pub use config::{default_buckets, Bucket, DataConfig, RunConfig, TrainConfig};
pub use entropy::{entropy_from_counts, latent_action_entropy};
pub use evaluate::{
    build_tasks, evaluate, planner_action_table, rollout_random, rollout_table, step_cap, BucketResult, EvalTask,
    Evaluation, Outcome, Policy,
};
pub use export::{export_feature_map, FeatureMap};
pub use metrics::{format_metrics, read_metrics, write_metrics, MetricsRow};
pub use trainer::{
    maze_loss_and_grads, train, train_from, EpochSummary, Splits, TrainOutcome, CHECKPOINT_FILE, METRICS_FILE, TEST_METRICS_FILE,
};

#[cfg(test)]
mod tests;
