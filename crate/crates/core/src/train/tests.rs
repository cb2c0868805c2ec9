use super::*;
use crate::autodiff::{ParamStore, RmspropConfig, Tensor};
use crate::error::Error;
use crate::maze::{generate_maze, MazeTask};
use crate::planner::{init_params, PlannerConfig, HEAD_BIAS};

fn mazes(count: usize, m: usize, seed: u64) -> Vec<MazeTask> {
    (0..count).map(|k| MazeTask::new(generate_maze(m, seed * 1000 + k as u64, 0.0).unwrap())).collect()
}

fn tiny_planner() -> PlannerConfig {
    PlannerConfig { hidden_dim: 8, kernel_size: 3, latent_actions: 4, ..PlannerConfig::vin(4) }
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, timing: false, entropy_mazes: 4, ..Default::default() }
}

#[test]
fn entropy_of_degenerate_and_uniform_counts() {
    assert_eq!(entropy_from_counts(&[0, 17, 0]), 0.0);
    assert!((entropy_from_counts(&[5, 5, 5, 5]) - 4f64.ln()).abs() < 1e-12);
    assert_eq!(entropy_from_counts(&[0, 0]), 0.0);
}

#[test]
fn expert_policy_is_perfect_in_every_bucket() {
    let data = mazes(30, 15, 1);
    let buckets = default_buckets();
    let tasks = build_tasks(&data, &buckets, 3);
    let result = evaluate(&data, &tasks, &buckets, &Policy::Expert).unwrap();
    for b in &result.buckets {
        if b.tasks > 0 {
            assert_eq!(b.sr, Some(1.0));
            assert_eq!(b.optimality, Some(1.0));
        }
    }
    assert_eq!(result.sr, Some(1.0));
}

#[test]
fn random_policy_rarely_solves_long_tasks() {
    let data = mazes(60, 15, 2);
    let buckets = vec![Bucket::new(60, 100).unwrap()];
    let tasks = build_tasks(&data, &buckets, 4);
    assert!(tasks.len() >= 10, "only {} long tasks", tasks.len());
    let result = evaluate(&data, &tasks, &buckets, &Policy::Random { seed: 5 }).unwrap();
    assert!(result.buckets[0].sr.unwrap() < 0.25, "{:?}", result.buckets[0]);
    assert_eq!(result.buckets[0].optimality, Some(0.0));
}

#[test]
fn tasks_are_stratified_by_first_matching_bucket() {
    let data = mazes(20, 11, 3);
    let buckets = default_buckets();
    let tasks = build_tasks(&data, &buckets, 9);
    let mut seen = std::collections::HashSet::new();
    for t in &tasks {
        assert_eq!(Bucket::assign(&buckets, t.spl), Some(t.bucket));
        assert_eq!(data[t.maze].spl(t.start), t.spl);
        assert!(seen.insert((t.maze, t.bucket)));
    }
    // Every 11×11 maze has short tasks.
    assert_eq!(tasks.iter().filter(|t| t.bucket == 0).count(), 20);
    assert_eq!(build_tasks(&data, &buckets, 9), tasks);
}

#[test]
fn empty_bucket_is_absent_not_zero() {
    let data = mazes(5, 5, 4);
    let buckets = vec![Bucket::new(1, 30).unwrap(), Bucket::new(500, 600).unwrap()];
    let tasks = build_tasks(&data, &buckets, 1);
    let result = evaluate(&data, &tasks, &buckets, &Policy::Expert).unwrap();
    assert_eq!(result.buckets[1].tasks, 0);
    assert_eq!(result.buckets[1].sr, None);
    assert_eq!(result.buckets[1].optimality, None);
}

#[test]
fn optimality_never_exceeds_success() {
    let data = mazes(20, 9, 5);
    let buckets = default_buckets();
    let tasks = build_tasks(&data, &buckets, 2);
    let config = tiny_planner();
    let params = init_params::<f32>(&config, 1);
    for policy in [Policy::Random { seed: 1 }, Policy::Planner { params: &params, config: &config }] {
        let result = evaluate(&data, &tasks, &buckets, &policy).unwrap();
        for b in result.buckets.iter().filter(|b| b.tasks > 0) {
            assert!(b.optimality.unwrap() <= b.sr.unwrap());
        }
    }
}

#[test]
fn planner_evaluation_is_deterministic() {
    let data = mazes(6, 9, 6);
    let buckets = default_buckets();
    let tasks = build_tasks(&data, &buckets, 2);
    let config = PlannerConfig { hidden_dim: 8, kernel_size: 3, latent_actions: 4, ..PlannerConfig::highway(2, 3, 2, 1.0) };
    let params = init_params::<f32>(&config, 2);
    let policy = Policy::Planner { params: &params, config: &config };
    assert_eq!(evaluate(&data, &tasks, &buckets, &policy).unwrap(), evaluate(&data, &tasks, &buckets, &policy).unwrap());
}

#[test]
fn rollout_detects_loops_and_counts_steps() {
    let task = MazeTask::new(generate_maze(9, 3, 0.0).unwrap());
    let start = (0..4 * 81).find(|&i| task.expert[i] != crate::maze::NO_LABEL).map(|i| crate::maze::AgentState::from_index(i, 9)).unwrap();
    let spinning = vec![crate::maze::LEFT; 4 * 81];
    assert!(!rollout_table(&task, &spinning, start).success);
    let expert = rollout_table(&task, &task.expert, start);
    assert!(expert.success && expert.optimal);
    assert_eq!(expert.steps, task.spl(start) as usize);
}

fn splits(train: usize, val: usize, test: usize) -> Splits {
    Splits { train: mazes(train, 7, 10), val: mazes(val, 7, 11), test: mazes(test, 7, 12) }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(1, 1, 1);
    let planner = tiny_planner();
    let config = TrainConfig {
        optimizer: RmspropConfig { learning_rate: 0.0, ..Default::default() },
        ..tiny_config(1)
    };
    let init = init_params::<f32>(&planner, crate::seed::substream(config.seed, "init", 0));
    let (initial_loss, _) =
        maze_loss_and_grads(&init, &planner, &data.train[0], crate::planner::Mode::Train, 0).unwrap();
    let outcome = train("lr0", &planner, &config, &data, dir.path(), &mut |_| {}).unwrap();
    for ((_, a), (_, b)) in init.iter().zip(outcome.params.iter()) {
        assert_eq!(a, b);
    }
    // Four-layer VIN has no sampling, so the train-mode loss does not depend on the seed.
    assert!((outcome.epochs[0].loss - initial_loss).abs() < 1e-12);
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let data = splits(8, 3, 3);
    let planner = PlannerConfig { hidden_dim: 8, kernel_size: 3, latent_actions: 4, ..PlannerConfig::highway(2, 2, 2, 1.0) };
    let config = tiny_config(2);
    let read = |dir: &std::path::Path| {
        (std::fs::read(dir.join(METRICS_FILE)).unwrap(), std::fs::read(dir.join(TEST_METRICS_FILE)).unwrap(), std::fs::read(dir.join(CHECKPOINT_FILE)).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train("det", &planner, &config, &data, a.path(), &mut |_| {}).unwrap();
    train("det", &planner, &config, &data, b.path(), &mut |_| {}).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn metrics_have_one_row_per_epoch_and_best_epoch_drives_test_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(8, 4, 4);
    let planner = tiny_planner();
    let config = TrainConfig { optimizer: RmspropConfig { learning_rate: 1e-2, ..Default::default() }, ..tiny_config(3) };
    let outcome = train("sel", &planner, &config, &data, dir.path(), &mut |_| {}).unwrap();
    let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows, outcome.metrics);
    let best_sr = rows.iter().map(|r| r.sr.unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let first_best = rows.iter().find(|r| r.sr.unwrap() == best_sr).unwrap().epoch;
    assert_eq!(outcome.best_epoch, first_best);
    let test_rows = read_metrics(&dir.path().join(TEST_METRICS_FILE)).unwrap();
    assert_eq!(test_rows.len(), 3);
    assert!(test_rows.iter().all(|r| r.epoch == first_best && r.split == "test"));
    let (meta, _) = crate::checkpoint::load_checkpoint(&outcome.checkpoint).unwrap();
    assert_eq!(meta.epoch, first_best);
    for r in &rows {
        assert!(r.entropy.unwrap() >= 0.0 && r.seconds == 0.0);
        assert_eq!((r.n, r.n_b, r.n_bb, r.n_p, r.variant.as_str()), (4, 1, 4, 1, "vin"));
    }
}

#[test]
fn non_finite_loss_aborts_with_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(2, 1, 1);
    let planner = tiny_planner();
    let mut params: ParamStore<f32> = init_params(&planner, 0);
    *params.get_mut(HEAD_BIAS).unwrap() = Tensor::full(vec![4, 3], f32::NAN);
    let err = train_from(params, "nan", &planner, &tiny_config(1), &data, dir.path(), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numeric(ref s) if s.contains("batch seed")), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn zero_parameters_give_an_all_zero_feature_map() {
    let planner = tiny_planner();
    let mut params: ParamStore<f32> = init_params(&planner, 0);
    for (_, t) in params.iter_mut() {
        *t = Tensor::zeros(t.shape().to_vec());
    }
    let maze = generate_maze(9, 1, 0.0).unwrap();
    let map = export_feature_map(&params, &planner, &maze).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
    assert!(map.to_gray().iter().all(|&v| v == 0));
}

#[test]
fn feature_map_normalises_to_full_gray_range() {
    let map = FeatureMap { m: 2, values: vec![-1.0, 0.0, 0.5, 3.0] };
    assert_eq!(map.to_gray(), vec![0, 64, 96, 255]);
    assert_eq!(map.argmax(), (1, 1));
    let dir = tempfile::tempdir().unwrap();
    map.write_pgm(&dir.path().join("m.pgm")).unwrap();
    map.write_csv(&dir.path().join("m.csv")).unwrap();
    let pgm = std::fs::read(dir.path().join("m.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(&pgm[pgm.len() - 4..], &[0, 64, 96, 255]);
    assert_eq!(std::fs::read_to_string(dir.path().join("m.csv")).unwrap(), "-1,0\n0.5,3\n");
}

#[test]
fn metrics_rows_round_trip_with_blank_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let row = MetricsRow { sr: Some(0.5), ..MetricsRow::new("r", &PlannerConfig::highway(3, 2, 2, 0.5), 1, "val") };
    write_metrics(&path, std::slice::from_ref(&row)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("run_id,variant,N,N_b,N_B,N_p,epsilon,epoch,split,bucket_lo,bucket_hi,sr,optimality,entropy,loss,seconds\n"));
    assert!(text.contains("r,highway,6,2,3,2,0.5,1,val,,,0.5,,,,0"));
    assert_eq!(read_metrics(&path).unwrap(), vec![row]);
}
