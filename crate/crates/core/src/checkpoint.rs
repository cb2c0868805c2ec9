//! Binary checkpoint files: a text header, one JSON metadata line, then one
//! record per parameter (name, shape, little-endian `f32` data, row-major).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, RmspropConfig, Tensor};
use crate::error::{validation, Error, Result};
use crate::planner::{init_params, PlannerConfig};

const HEADER: &[u8] = b"HVINCKPT v1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub planner: PlannerConfig,
    pub epoch: usize,
    pub seed: u64,
    pub optimizer: RmspropConfig,
    /// Validation success rate that selected this checkpoint, if any.
    pub val_sr: Option<f64>,
    pub records: usize,
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamStore<f32>) -> Result<()> {
    if meta.records != params.len() {
        return Err(validation!("metadata announces {} records but {} parameters were given", meta.records, params.len()));
    }
    let mut buf = Vec::from(HEADER);
    buf.extend_from_slice(serde_json::to_string(meta).expect("metadata serializes").as_bytes());
    buf.push(b'\n');
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("unexpected end of file")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

/// Loads a checkpoint and checks that its parameter names and shapes match
/// the architecture described by its own metadata.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamStore<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format(path, reason);
    let rest = bytes.strip_prefix(HEADER).ok_or_else(|| bad("missing HVINCKPT v1 header".into()))?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated metadata".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("invalid metadata: {e}")))?;
    meta.planner.validate().map_err(|e| bad(format!("invalid planner config: {e}")))?;
    let mut r = Reader { bytes: &rest[nl + 1..], pos: 0 };
    let mut params = ParamStore::new();
    for k in 0..meta.records {
        let record = (|| -> std::result::Result<(String, Tensor<f32>), String> {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "name is not UTF-8")?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or("shape overflows")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
            Ok((name, Tensor::new(shape, data).map_err(|e| e.to_string())?))
        })()
        .map_err(|e| bad(format!("record {k}: {e}")))?;
        params.insert(record.0, record.1);
    }
    if r.pos != r.bytes.len() {
        return Err(bad(format!("{} trailing bytes", r.bytes.len() - r.pos)));
    }
    let template = init_params::<f32>(&meta.planner, 0);
    let layout = |p: &ParamStore<f32>| p.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
    if layout(&template) != layout(&params) {
        return Err(bad("parameter names or shapes do not match the recorded planner config".into()));
    }
    Ok((meta, params))
}
