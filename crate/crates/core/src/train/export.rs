use std::fs;
use std::path::Path;

use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::maze::Maze;
use crate::planner::{plan, BoundParams, Mode, PlannerConfig};

/// Final latent value map of the planner on one maze.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub m: usize,
    pub values: Vec<f32>,
}

pub fn export_feature_map(params: &ParamStore<f32>, config: &PlannerConfig, maze: &Maze) -> Result<FeatureMap> {
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, params, config)?;
    let obs = g.constant(maze.observation());
    let out = plan(&mut g, obs, &bound, config, Mode::Eval, 0)?;
    Ok(FeatureMap { m: maze.m, values: g.value(out.value).data().to_vec() })
}

impl FeatureMap {
    /// Min-max scaling to `0..=255`; a constant map becomes all zeros.
    pub fn to_gray(&self) -> Vec<u8> {
        let lo = self.values.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = self.values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect()
    }

    pub fn argmax(&self) -> (usize, usize) {
        let best = (1..self.values.len()).fold(0, |b, i| if self.values[i] > self.values[b] { i } else { b });
        (best / self.m, best % self.m)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
        for row in self.values.chunks(self.m) {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Binary (P5) 8-bit greyscale image.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.m, self.m).into_bytes();
        bytes.extend(self.to_gray());
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}
