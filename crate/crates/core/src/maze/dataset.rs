use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_maze, Maze, MazeTask};
use crate::error::{validation, Error, Result};
use crate::seed;

const MAGIC: &[u8] = b"HVMZ1\n";
pub const FORMAT_VERSION: u32 = 1;
/// File stems of the three dataset splits, in index order.
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub braid: f64,
    pub split: String,
    /// Index of this file's first maze in the generator's global sequence.
    pub first_index: usize,
    pub generator: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub tasks: Vec<MazeTask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub m: usize,
    pub seed: u64,
    pub braid: f64,
    /// Relative train/val/test sizes.
    pub ratios: [u32; 3],
}

impl DatasetSpec {
    pub fn new(count: usize, m: usize, seed: u64) -> Self {
        DatasetSpec { count, m, seed, braid: 0.0, ratios: [8, 1, 1] }
    }
}

/// Train and val sizes are rounded down; test takes the remainder.
pub fn split_counts(count: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(validation!("split ratios must not all be zero"));
    }
    let train = (count as u64 * ratios[0] as u64 / total) as usize;
    let val = (count as u64 * ratios[1] as u64 / total) as usize;
    Ok([train, val, count - train - val])
}

/// Generates `spec.count` labelled mazes and writes `train.hvmz`, `val.hvmz`
/// and `test.hvmz` under `dir`. Maze `k` is seeded by `substream(seed, "maze", k)`.
pub fn build_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Vec<PathBuf>> {
    if spec.count == 0 {
        return Err(validation!("dataset count must be at least 1"));
    }
    let counts = split_counts(spec.count, spec.ratios)?;
    // Validate size and braid once up front rather than per worker.
    generate_maze(spec.m, 0, spec.braid)?;
    let tasks: Vec<MazeTask> = (0..spec.count)
        .into_par_iter()
        .map(|k| generate_maze(spec.m, seed::substream(spec.seed, "maze", k as u64), spec.braid).map(MazeTask::new))
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    let mut start = 0;
    for (split, &n) in SPLITS.iter().zip(&counts) {
        let header = DatasetHeader {
            version: FORMAT_VERSION,
            m: spec.m,
            count: n,
            seed: spec.seed,
            braid: spec.braid,
            split: split.to_string(),
            first_index: start,
            generator: "recursive-backtracker".into(),
        };
        let path = dir.join(format!("{split}.hvmz"));
        write_dataset(&path, &header, &tasks[start..start + n])?;
        paths.push(path);
        start += n;
    }
    Ok(paths)
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, tasks: &[MazeTask]) -> Result<()> {
    if header.count != tasks.len() {
        return Err(validation!("header announces {} records but {} were given", header.count, tasks.len()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(serde_json::to_string(header).expect("header serializes").as_bytes());
    buf.push(b'\n');
    for task in tasks {
        if task.maze.m != header.m {
            return Err(validation!("maze of size {} in a dataset of size {}", task.maze.m, header.m));
        }
        encode_record(task, &mut buf);
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn encode_record(task: &MazeTask, buf: &mut Vec<u8>) {
    let m = task.maze.m;
    let mut bits = vec![0u8; (m * m).div_ceil(8)];
    for (c, &b) in task.maze.obstacle.iter().enumerate() {
        if b {
            bits[c / 8] |= 1 << (c % 8);
        }
    }
    buf.extend_from_slice(&bits);
    buf.extend_from_slice(&(task.maze.goal.0 as u16).to_le_bytes());
    buf.extend_from_slice(&(task.maze.goal.1 as u16).to_le_bytes());
    for &d in &task.spl {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&task.expert);
}

fn record_len(m: usize) -> usize {
    (m * m).div_ceil(8) + 4 + 2 * 4 * m * m + 4 * m * m
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format(path, reason);
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing HVMZ1 magic".into()))?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header".into()))?;
    let header: DatasetHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("invalid header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let m = header.m;
    if m == 0 || m > 127 {
        return Err(bad(format!("invalid maze size {m}")));
    }
    let body = &rest[nl + 1..];
    let len = record_len(m);
    if body.len() != len * header.count {
        return Err(bad(format!("expected {} record bytes, found {}", len * header.count, body.len())));
    }
    let tasks = body
        .chunks_exact(len)
        .enumerate()
        .map(|(k, rec)| decode_record(rec, m).map_err(|r| bad(format!("record {k}: {r}"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Dataset { header, tasks })
}

fn decode_record(rec: &[u8], m: usize) -> std::result::Result<MazeTask, String> {
    let nb = (m * m).div_ceil(8);
    let obstacle: Vec<bool> = (0..m * m).map(|c| rec[c / 8] >> (c % 8) & 1 == 1).collect();
    let u16_at = |off: usize| u16::from_le_bytes([rec[off], rec[off + 1]]);
    let goal = (u16_at(nb) as usize, u16_at(nb + 2) as usize);
    let n = 4 * m * m;
    let spl: Vec<u16> = (0..n).map(|s| u16_at(nb + 4 + 2 * s)).collect();
    let expert = rec[nb + 4 + 2 * n..].to_vec();
    if expert.iter().any(|&e| e > 2 && e != super::NO_LABEL) {
        return Err("expert label out of range".into());
    }
    let maze: Maze = Maze::new(m, obstacle, goal).map_err(|e| e.to_string())?;
    Ok(MazeTask { maze, spl, expert })
}
