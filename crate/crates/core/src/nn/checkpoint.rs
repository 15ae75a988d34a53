//! Model checkpoints: one line of JSON describing the parameters, a newline,
//! then every parameter value as a little-endian `f32`, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, MiniCnn};
use crate::error::{Error, Result};

const FORMAT: &str = "replaceblock-checkpoint/1";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: Architecture,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn encode(model: &MiniCnn) -> Result<Vec<u8>> {
    let params = model.params();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        architecture: model.architecture(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.dims.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for p in &params {
        for v in p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<MiniCnn> {
    let bad = |reason: String| Error::Format {
        format: "checkpoint",
        reason,
    };
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header terminator".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != FORMAT {
        return Err(bad(format!("unknown format tag {:?}", header.format)));
    }
    let mut model = MiniCnn::new(header.architecture, 0)?;
    let mut body = &bytes[split + 1..];
    let params = model.params_mut();
    if params.len() != header.params.len() {
        return Err(bad(format!(
            "header lists {} parameters, architecture has {}",
            header.params.len(),
            params.len()
        )));
    }
    for (p, entry) in params.into_iter().zip(&header.params) {
        if p.name != entry.name || p.dims != entry.shape {
            return Err(bad(format!(
                "parameter {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, p.name, p.dims
            )));
        }
        let len = p.values.len() * 4;
        if body.len() < len {
            return Err(bad(format!("truncated data for {}", entry.name)));
        }
        for (v, chunk) in p.values.iter_mut().zip(body[..len].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        body = &body[len..];
    }
    if !body.is_empty() {
        return Err(bad(format!("{} trailing bytes", body.len())));
    }
    Ok(model)
}

pub fn save(model: &MiniCnn, path: &Path) -> Result<()> {
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MiniCnn> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
