use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::csv_error;
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;

/// One row of a metrics CSV. Empty optional fields are written as blanks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub variant: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_b")]
    pub n_b: usize,
    #[serde(rename = "N_B")]
    pub n_bb: usize,
    #[serde(rename = "N_p")]
    pub n_p: usize,
    pub epsilon: f64,
    pub epoch: usize,
    pub split: String,
    pub bucket_lo: Option<u16>,
    pub bucket_hi: Option<u16>,
    pub sr: Option<f64>,
    pub optimality: Option<f64>,
    pub entropy: Option<f64>,
    pub loss: Option<f64>,
    pub seconds: f64,
}

impl MetricsRow {
    /// A row with the architecture columns filled in and every metric blank.
    pub fn new(run_id: &str, config: &PlannerConfig, epoch: usize, split: &str) -> Self {
        let (n_bb, n_b) = config.block_layout();
        let n_p = match config.variant {
            crate::planner::Variant::Highway => config.parallel_paths,
            _ => 1,
        };
        MetricsRow {
            run_id: run_id.into(),
            variant: config.variant.as_str().into(),
            n: config.total_depth(),
            n_b,
            n_bb,
            n_p,
            epsilon: config.epsilon,
            epoch,
            split: split.into(),
            bucket_lo: None,
            bucket_hi: None,
            sr: None,
            optimality: None,
            entropy: None,
            loss: None,
            seconds: 0.0,
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let text = format_metrics(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders rows as CSV text with a header line.
pub fn format_metrics(rows: &[MetricsRow]) -> Result<String> {
    let fail = |e: csv::Error| Error::Validation(format!("cannot render metrics row: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    if rows.is_empty() {
        w.write_record([
            "run_id", "variant", "N", "N_b", "N_B", "N_p", "epsilon", "epoch", "split", "bucket_lo", "bucket_hi", "sr",
            "optimality", "entropy", "loss", "seconds",
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("cannot render metrics: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}
