use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hvin::checkpoint::load_checkpoint;
use hvin::gradcheck::{gradcheck, parse_depth_spec, GradcheckSpec};
use hvin::maze::{build_dataset, read_dataset, DatasetSpec, MazeTask, SPLITS};
use hvin::planner::{Mode, Variant};
use hvin::seed;
use hvin::tabular::{convergence_check, TabularCheck};
use hvin::train::{
    build_tasks, evaluate, export_feature_map, format_metrics, train, Bucket, MetricsRow, Policy,
    RunConfig, Splits, CHECKPOINT_FILE, METRICS_FILE, TEST_METRICS_FILE,
};
use hvin::{Error, Result};

/// Exit code for a check that ran cleanly but did not pass.
const CHECK_FAILED: u8 = 1;

#[derive(Parser)]
#[command(name = "hvin", version, about = "Highway value iteration networks: data, training, evaluation and checks")]
struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled maze datasets (train/val/test split files).
    Generate(GenerateArgs),
    /// Train a planner from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the expert) on a dataset, per bucket.
    Eval(EvalArgs),
    /// Check tabular highway value iteration against the value-iteration oracle.
    TabularCheck(TabularArgs),
    /// Compare planner gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the final latent value map of one maze as CSV and PGM.
    ExportMap(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    size: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of dead ends opened up after carving.
    #[arg(long, default_value_t = 0.0)]
    braid: f64,
    /// Relative train:val:test sizes.
    #[arg(long, default_value = "8:1:1")]
    ratios: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; not needed with --expert.
    #[arg(long, required_unless_present = "expert")]
    checkpoint: Option<PathBuf>,
    /// A dataset file, or a directory holding `test.hvmz`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "1:30,30:60,60:100")]
    buckets: String,
    /// Roll out the shortest-path labels instead of a planner.
    #[arg(long)]
    expert: bool,
    /// Task-sampling seed (default: the checkpoint's training seed, else 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "eval")]
    run_id: String,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TabularArgs {
    #[arg(long, default_value_t = 100)]
    mdps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the filter max (ablation); also searches for a counterexample.
    #[arg(long)]
    no_max: bool,
    /// Apply the softmax over depths outside the softmax over policies.
    #[arg(long)]
    swap_smax: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    Eval,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "vin")]
    variant: String,
    #[arg(long, default_value_t = 7)]
    size: usize,
    /// `N` (vin), `N_BxN_b` (skip) or `N_BxN_bxN_p` (highway).
    #[arg(long, default_value = "4")]
    depth_spec: String,
    #[arg(long, value_enum, default_value = "eval")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 4)]
    latent_actions: usize,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A dataset file, or a directory holding `test.hvmz`.
    #[arg(long)]
    dataset: PathBuf,
    /// Maze index within the dataset file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output prefix; `.csv` and `.pgm` are appended.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("thread pool configured once");
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TabularCheck(a) => cmd_tabular_check(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportMap(a) => cmd_export_map(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_ratios(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Validation(format!("ratios `{s}` must be three integers like 8:1:1")))?;
    parts.try_into().map_err(|_| Error::Validation(format!("ratios `{s}` must have exactly three parts")))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_tasks(dataset: &Path) -> Result<Vec<MazeTask>> {
    let file = if dataset.is_dir() { dataset.join("test.hvmz") } else { dataset.to_path_buf() };
    Ok(read_dataset(&file)?.tasks)
}

fn cmd_generate(a: GenerateArgs) -> Result<bool> {
    let spec = DatasetSpec { braid: a.braid, ratios: parse_ratios(&a.ratios)?, ..DatasetSpec::new(a.count, a.size, a.seed) };
    for path in build_dataset(&a.out, &spec)? {
        let header = read_dataset(&path)?.header;
        println!("{}\t{} mazes", path.display(), header.count);
    }
    Ok(true)
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let config = RunConfig::from_json(&text)?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let echo = config.output_dir.join("effective_config.json");
    fs::write(&echo, config.to_json() + "\n").map_err(|e| Error::io(&echo, e))?;
    eprintln!("effective config written to {}", echo.display());

    if SPLITS.iter().any(|s| !config.data.dir.join(format!("{s}.hvmz")).exists()) {
        eprintln!("dataset missing under {}; generating", config.data.dir.display());
        build_dataset(&config.data.dir, &config.data.spec())?;
    }
    let splits = Splits::load(&config.data.dir)?;
    if splits.train.first().is_some_and(|t| t.maze.m != config.data.size) {
        return Err(Error::Validation(format!(
            "dataset under {} does not have maze size {}",
            config.data.dir.display(),
            config.data.size
        )));
    }
    let outcome = train(&config.run_id, &config.planner, &config.training, &splits, &config.output_dir, &mut |e| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val SR {:.4}  entropy {:.4}{}",
            e.epoch,
            e.loss,
            e.val_sr,
            e.entropy,
            if e.improved { "  *" } else { "" }
        )
    })?;
    println!("best epoch {} (val SR {:.4})", outcome.best_epoch, outcome.best_val_sr);
    for b in &outcome.test.buckets {
        println!("test {}: SR {} optimality {} ({} tasks)", b.bucket, fmt_opt(b.sr), fmt_opt(b.optimality), b.tasks);
    }
    for f in [METRICS_FILE, TEST_METRICS_FILE, CHECKPOINT_FILE] {
        println!("wrote {}", config.output_dir.join(f).display());
    }
    Ok(true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_eval(a: EvalArgs) -> Result<bool> {
    let buckets = Bucket::parse_list(&a.buckets)?;
    let loaded = match &a.checkpoint {
        Some(p) if !a.expert => Some(load_checkpoint(p)?),
        _ => None,
    };
    let tasks = load_tasks(&a.dataset)?;
    let seed_value = a.seed.or(loaded.as_ref().map(|(meta, _)| meta.seed)).unwrap_or(0);
    let eval_tasks = build_tasks(&tasks, &buckets, seed::substream(seed_value, "test-tasks", 0));
    let (policy, config, epoch, label) = match &loaded {
        Some((meta, params)) => (Policy::Planner { params, config: &meta.planner }, meta.planner.clone(), meta.epoch, "test"),
        None => (Policy::Expert, hvin::planner::PlannerConfig::default(), 0, "expert"),
    };
    let result = evaluate(&tasks, &eval_tasks, &buckets, &policy)?;
    let rows: Vec<MetricsRow> = result
        .buckets
        .iter()
        .map(|b| MetricsRow {
            bucket_lo: Some(b.bucket.lo),
            bucket_hi: Some(b.bucket.hi),
            sr: b.sr,
            optimality: b.optimality,
            ..MetricsRow::new(&a.run_id, &config, epoch, label)
        })
        .collect();
    write_output(a.out.as_deref(), &format_metrics(&rows)?)?;
    Ok(true)
}

fn cmd_tabular_check(a: TabularArgs) -> Result<bool> {
    let check = TabularCheck {
        mdps: a.mdps,
        seed: a.seed,
        use_filter_max: !a.no_max,
        swap_order: a.swap_smax,
        ..Default::default()
    };
    let report = convergence_check(&check)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_output(a.out.as_deref(), &(json + "\n"))?;
    eprintln!("{}/{} converged, max gap {:.3e}", report.converged, report.total, report.max_gap);
    Ok(true)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let variant: Variant = a.variant.parse()?;
    let mut planner = parse_depth_spec(variant, &a.depth_spec)?;
    planner.epsilon = a.epsilon;
    planner.latent_actions = a.latent_actions;
    if let Some(h) = a.hidden {
        planner.hidden_dim = h;
    }
    let mode = match a.mode {
        ModeArg::Train => Mode::Train,
        ModeArg::Eval => Mode::Eval,
    };
    let spec = GradcheckSpec { seed: a.seed, tolerance: a.tolerance, ..GradcheckSpec::new(planner, a.size, mode) };
    let report = gradcheck(&spec, None)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!(
        "{}: max relative error {:.3e} at {} (tolerance {:.0e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.worst_parameter,
        report.tolerance
    );
    Ok(report.passed)
}

fn cmd_export_map(a: ExportArgs) -> Result<bool> {
    let (meta, params) = load_checkpoint(&a.checkpoint)?;
    let tasks = load_tasks(&a.dataset)?;
    let task = tasks
        .get(a.index)
        .ok_or_else(|| Error::Validation(format!("maze index {} out of range ({} mazes)", a.index, tasks.len())))?;
    let map = export_feature_map(&params, &meta.planner, &task.maze)?;
    let csv = a.out.with_extension("csv");
    let pgm = a.out.with_extension("pgm");
    map.write_csv(&csv)?;
    map.write_pgm(&pgm)?;
    let (i, j) = map.argmax();
    let goal = task.maze.goal;
    println!("wrote {} and {}; peak at ({i}, {j}), goal at ({}, {})", csv.display(), pgm.display(), goal.0, goal.1);
    Ok(true)
}
