//! Binary checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `MOLVCKPT` |
//! | 4 | format version (u32) |
//! | 8 | manifest length `L` (u64) |
//! | L | manifest, UTF-8 JSON |
//! | rest | every parameter listed in the manifest, in order, as f32 values |

use std::path::Path;

use diffcore::{Real, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NormStats, TrainState};
use crate::encoder::{is_denoising_branch, param_shapes, EncoderConfig, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOLVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint archive (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("archive truncated")]
    Truncated,
    #[error("{0} trailing bytes after parameter data")]
    TrailingBytes(usize),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("parameter '{name}': expected shape {expected:?}, archive has {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("archive has parameter '{0}' unknown to the encoder config")]
    UnknownParam(String),
    #[error("archive lacks parameter '{0}'")]
    MissingParam(String),
    #[error("parameter '{0}' has non-finite values")]
    NonFinite(String),
    #[error("archive encoder config differs from the run config")]
    ConfigMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    stage: String,
    step: u64,
    seed: u64,
    encoder: EncoderConfig,
    aux_norm: Option<NormStats>,
    target_norm: Option<NormStats>,
    params: Vec<ParamEntry>,
}

/// Decoded archive contents. Parameters are stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form producer tag such as `stage1`, `stage2`, `finetune`.
    pub stage: String,
    pub step: u64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub params: ParamStore<f32>,
    pub aux_norm: Option<NormStats>,
    pub target_norm: Option<NormStats>,
}

impl Checkpoint {
    pub fn from_state<T: Real>(state: &TrainState<T>, stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            step: state.step,
            seed: state.seed,
            encoder: state.encoder.clone(),
            params: state.params.cast(),
            aux_norm: state.aux_norm.clone(),
            target_norm: state.target_norm.clone(),
        }
    }

    /// Training state with fresh optimizer moments.
    pub fn into_state<T: Real>(self) -> TrainState<T> {
        let mut st = TrainState::from_params(self.encoder, self.params.cast(), self.seed);
        st.step = self.step;
        st.aux_norm = self.aux_norm;
        st.target_norm = self.target_norm;
        st
    }

    /// Copy without the stage-1 denoising branch.
    pub fn without_denoising_branch(&self) -> Self {
        Self {
            params: self.params.filtered(|k| !is_denoising_branch(k)),
            ..self.clone()
        }
    }

    /// Shape, completeness and finiteness checks against the embedded
    /// encoder config. Denoising-branch parameters may be absent.
    pub fn validate(&self) -> Result<(), CheckpointError> {
        self.encoder
            .validate()
            .map_err(CheckpointError::Manifest)?;
        let shapes = param_shapes(&self.encoder);
        for (name, t) in self.params.iter() {
            let expected = shapes
                .get(name)
                .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
            if t.shape() != expected.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: expected.clone(),
                    found: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(CheckpointError::NonFinite(name.clone()));
            }
        }
        if let Some(name) = shapes
            .keys()
            .find(|k| !is_denoising_branch(k) && !self.params.contains(k))
        {
            return Err(CheckpointError::MissingParam(name.clone()));
        }
        Ok(())
    }
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let manifest = Manifest {
        stage: ck.stage.clone(),
        step: ck.step,
        seed: ck.seed,
        encoder: ck.encoder.clone(),
        aux_norm: ck.aux_norm.clone(),
        target_norm: ck.target_norm.clone(),
        params: ck
            .params
            .iter()
            .map(|(k, t)| ParamEntry {
                name: k.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 4 * ck.params.numel());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ck.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if buf.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

/// Decodes and validates an archive.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut buf = bytes;
    if take(&mut buf, 8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| CheckpointError::Truncated)?;
    let manifest: Manifest = serde_json::from_slice(take(&mut buf, len)?)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let mut params = ParamStore::new();
    for entry in &manifest.params {
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(CheckpointError::Truncated)?;
        let raw = take(&mut buf, numel)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&entry.shape, data)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if params.contains(&entry.name) {
            return Err(CheckpointError::Manifest(format!(
                "duplicate parameter '{}'",
                entry.name
            )));
        }
        params.insert(entry.name.clone(), t);
    }
    if !buf.is_empty() {
        return Err(CheckpointError::TrailingBytes(buf.len()));
    }
    let ck = Checkpoint {
        stage: manifest.stage,
        step: manifest.step,
        seed: manifest.seed,
        encoder: manifest.encoder,
        params,
        aux_norm: manifest.aux_norm,
        target_norm: manifest.target_norm,
    };
    ck.validate()?;
    Ok(ck)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(ck))?;
    Ok(())
}

/// Reads an archive from disk; when `expected` is given the embedded encoder
/// config must equal it.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&EncoderConfig>,
) -> Result<Checkpoint, CheckpointError> {
    let ck = read_checkpoint(&std::fs::read(path)?)?;
    if expected.is_some_and(|e| *e != ck.encoder) {
        return Err(CheckpointError::ConfigMismatch);
    }
    Ok(ck)
}
