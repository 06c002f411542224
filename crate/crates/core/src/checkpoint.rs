//! Checkpoint container: a structured text header (config, tensor names,
//! shapes, byte offsets) followed by little-endian 32-bit float tensor data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{ModelConfig, ModelParams, ParamSet};
use crate::scalar::Scalar;

const CKPT_MAGIC: &str = "itn-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    version: u64,
    tensors: Vec<TensorMeta>,
}

/// Write parameters as f32 regardless of the in-memory scalar type.
pub fn save_checkpoint<S: Scalar>(
    params: &ModelParams<S>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    params.set.visit(&mut |name, rows, cols, values| {
        tensors.push(TensorMeta {
            name: name.to_string(),
            rows,
            cols,
            offset: data.len(),
        });
        for &v in values {
            let f = v.to_f64().unwrap() as f32;
            data.extend_from_slice(&f.to_le_bytes());
        }
    });
    let header = Header {
        config: params.config.clone(),
        version: params.version,
        tensors,
    };
    let mut f = fs::File::create(path)?;
    writeln!(f, "{CKPT_MAGIC}")?;
    writeln!(
        f,
        "{}",
        serde_json::to_string(&header).map_err(|e| CheckpointError::BadFile(e.to_string()))?
    )?;
    f.write_all(&data)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelParams<S>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: String| CheckpointError::BadFile(m);
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header".into()))?;
    if &bytes[..first_nl] != CKPT_MAGIC.as_bytes() {
        return Err(bad(format!(
            "expected magic {CKPT_MAGIC:?}, got {:?}",
            String::from_utf8_lossy(&bytes[..first_nl.min(32)])
        )));
    }
    let rest = &bytes[first_nl + 1..];
    let second_nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header json".into()))?;
    let header: Header = serde_json::from_slice(&rest[..second_nl])
        .map_err(|e| bad(format!("header json: {e}")))?;
    let data = &rest[second_nl + 1..];

    let mut set: ParamSet<S> = ParamSet::zeros(&header.config);
    let mut flat: Vec<S> = Vec::new();
    {
        let mut idx = 0usize;
        let mut err: Option<String> = None;
        set.visit(&mut |name, rows, cols, values| {
            if err.is_some() {
                return;
            }
            let Some(meta) = header.tensors.get(idx) else {
                err = Some(format!("missing tensor {name} in header"));
                return;
            };
            if meta.name != name || meta.rows != rows || meta.cols != cols {
                err = Some(format!(
                    "tensor mismatch: expected {name} [{rows}x{cols}], header has {} [{}x{}]",
                    meta.name, meta.rows, meta.cols
                ));
                return;
            }
            let n = rows * cols;
            let end = meta.offset + 4 * n;
            if end > data.len() {
                err = Some(format!("tensor {name} overruns data section"));
                return;
            }
            for i in 0..n {
                let o = meta.offset + 4 * i;
                let v = f32::from_le_bytes([data[o], data[o + 1], data[o + 2], data[o + 3]]);
                flat.push(S::from_f64_c(v as f64));
            }
            let _ = values;
            idx += 1;
        });
        if let Some(e) = err {
            return Err(bad(e));
        }
        if idx != header.tensors.len() {
            return Err(bad("extra tensors in header".into()));
        }
    }
    set.assign_from_flat(&flat);
    Ok(ModelParams {
        config: header.config,
        version: header.version,
        set,
    })
}
