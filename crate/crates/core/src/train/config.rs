use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::RmspropConfig;
use crate::error::{validation, Error, Result};
use crate::maze::DatasetSpec;
use crate::planner::PlannerConfig;

/// Inclusive shortest-path-length range. A task belongs to the first bucket
/// of a list that contains its length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: u16,
    pub hi: u16,
}

impl Bucket {
    pub fn new(lo: u16, hi: u16) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(validation!("bucket {}:{} must satisfy 1 ≤ lo ≤ hi", lo, hi));
        }
        Ok(Bucket { lo, hi })
    }

    pub fn contains(&self, spl: u16) -> bool {
        self.lo <= spl && spl <= self.hi
    }

    /// Index of the first bucket containing `spl`.
    pub fn assign(buckets: &[Bucket], spl: u16) -> Option<usize> {
        buckets.iter().position(|b| b.contains(spl))
    }

    pub fn parse_list(s: &str) -> Result<Vec<Bucket>> {
        let buckets = s.split(',').map(str::parse).collect::<Result<Vec<Bucket>>>()?;
        if buckets.is_empty() {
            return Err(validation!("at least one bucket is required"));
        }
        Ok(buckets)
    }

    pub fn format_list(buckets: &[Bucket]) -> String {
        buckets.iter().map(Bucket::to_string).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s.trim().split_once(':').ok_or_else(|| validation!("bucket `{}` must look like lo:hi", s))?;
        let parse = |x: &str| x.trim().parse::<u16>().map_err(|_| validation!("bucket `{}` has a non-integer bound", s));
        Bucket::new(parse(lo)?, parse(hi)?)
    }
}

pub fn default_buckets() -> Vec<Bucket> {
    vec![Bucket { lo: 1, hi: 30 }, Bucket { lo: 30, hi: 60 }, Bucket { lo: 60, hi: 100 }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmspropConfig,
    pub seed: u64,
    pub buckets: Vec<Bucket>,
    /// Validation mazes used for the latent-action entropy metric.
    pub entropy_mazes: usize,
    /// Record wall-clock seconds in the metrics; off gives byte-identical reruns.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            optimizer: RmspropConfig::default(),
            seed: 0,
            buckets: default_buckets(),
            entropy_mazes: 64,
            timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(validation!("epochs and batch_size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(validation!("learning_rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&o.decay) || !(o.eps > 0.0) {
            return Err(validation!("RMSprop decay must lie in [0, 1) and eps must be positive"));
        }
        if self.buckets.is_empty() {
            return Err(validation!("at least one evaluation bucket is required"));
        }
        for b in &self.buckets {
            Bucket::new(b.lo, b.hi)?;
        }
        Ok(())
    }
}

/// Dataset location plus the parameters used to generate it when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    pub braid: f64,
    pub ratios: [u32; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: PathBuf::from("data"), size: 15, count: 3000, seed: 0, braid: 0.0, ratios: [4, 1, 1] }
    }
}

impl DataConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec { count: self.count, m: self.size, seed: self.seed, braid: self.braid, ratios: self.ratios }
    }
}

/// Everything one training run needs, as read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,
    pub planner: PlannerConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            planner: PlannerConfig::default(),
            training: TrainConfig::default(),
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs/run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| validation!("invalid run config: {}", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.training.validate()?;
        if self.run_id.is_empty() || self.run_id.contains(',') {
            return Err(validation!("run_id must be nonempty and contain no commas"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
