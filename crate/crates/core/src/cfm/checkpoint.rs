//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFMR" | u32 version | u32 header_len | header (JSON) |
//! 6 × (u64 rows | u64 cols | rows·cols × f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::estimator::{EstimatorDims, Mlp, TENSOR_NAMES};
use super::guidance::GuidanceConfig;
use super::path::PathConfig;
use super::{AnalysisConfig, FlowModel, MelNorm};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFMR";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: EstimatorDims,
    path: PathConfig,
    guidance: GuidanceConfig,
    norm: MelNorm,
    analysis: AnalysisConfig,
    tensors: Vec<String>,
}

pub fn write_checkpoint<W: Write>(model: &FlowModel, mut w: W) -> Result<()> {
    let header = Header {
        dims: model.estimator.dims,
        path: model.path,
        guidance: model.guidance,
        norm: model.norm,
        analysis: model.analysis,
        tensors: TENSOR_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.estimator.tensors() {
        w.write_all(&(t.nrows() as u64).to_le_bytes())?;
        w.write_all(&(t.ncols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<FlowModel> {
    if read_exact::<_, 4>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not a model checkpoint".into(),
        ));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if len > MAX_HEADER {
        return Err(Error::Checkpoint(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.tensors != TENSOR_NAMES {
        return Err(Error::Checkpoint(format!(
            "unexpected tensor list {:?}",
            header.tensors
        )));
    }
    let mut tensors = Vec::with_capacity(6);
    for (shape, name) in header.dims.shapes().into_iter().zip(TENSOR_NAMES) {
        let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        if (rows, cols) != shape {
            return Err(Error::Shape(format!(
                "tensor {name} stored as {rows}x{cols}, header implies {shape:?}"
            )));
        }
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor {name}: {e}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Array2::from_shape_vec(shape, data).expect("length matches shape"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let model = FlowModel {
        estimator: Mlp::from_tensors(header.dims, tensors)?,
        path: header.path,
        guidance: header.guidance,
        norm: header.norm,
        analysis: header.analysis,
    };
    if !model.estimator.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FlowModel> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
