use hvin::checkpoint::load_checkpoint;
use hvin::maze::{build_dataset, read_dataset, DatasetSpec};
use hvin::planner::PlannerConfig;
use hvin::seed;
use hvin::train::{build_tasks, default_buckets, evaluate, read_metrics, train, Policy, Splits, TrainConfig, METRICS_FILE};

#[test]
fn generate_train_reload_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = DatasetSpec { ratios: [4, 1, 1], ..DatasetSpec::new(30, 9, 5) };
    build_dataset(&data, &spec).unwrap();
    let header = read_dataset(&data.join("val.hvmz")).unwrap().header;
    assert_eq!((header.count, header.first_index, header.m), (5, 20, 9));

    let splits = Splits::load(&data).unwrap();
    let planner = PlannerConfig { hidden_dim: 8, latent_actions: 4, kernel_size: 3, ..PlannerConfig::highway(3, 2, 2, 0.5) };
    let config = TrainConfig { epochs: 2, batch_size: 8, timing: false, entropy_mazes: 4, ..Default::default() };
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let outcome = train("pipeline", &planner, &config, &splits, &out, &mut |_| {}).unwrap();
    assert_eq!(read_metrics(&out.join(METRICS_FILE)).unwrap().len(), 2);

    let (meta, params) = load_checkpoint(&outcome.checkpoint).unwrap();
    assert_eq!(meta.planner, planner);
    assert_eq!(meta.epoch, outcome.best_epoch);
    assert_eq!(params, outcome.params);

    // Re-evaluating the reloaded checkpoint on the same tasks reproduces the test result.
    let buckets = default_buckets();
    let tasks = build_tasks(&splits.test, &buckets, seed::substream(config.seed, "test-tasks", 0));
    let again = evaluate(&splits.test, &tasks, &buckets, &Policy::Planner { params: &params, config: &meta.planner }).unwrap();
    assert_eq!(again, outcome.test);
}
