//! Binary model serialization.
//!
//! Layout: magic bytes "EDT1", format version (u32 little-endian), tensor
//! count (u32), then per tensor: name length (u32), UTF-8 name, rank (u32),
//! dims (u64 each, little-endian), raw 32-bit little-endian floats. A
//! trailing u32 CRC-32 covers all preceding bytes.
//!
//! Checkpoints are self-describing: alongside the parameters (stored under
//! their canonical names), `meta.*` tensors record the architecture kind,
//! geometry, flags, stochastic-depth rate, and input standardization, so
//! `load_checkpoint` reconstructs a complete [`Model`] with no side-channel
//! configuration.

use crate::config::{ConfigError, DecoderLayout, DecoderNorm, ModelConfig};
use crate::export::atomic_write;
use crate::model::{
    BaselineVitModel, EditModel, InputStandardization, Model, ModelKind,
};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"EDT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"EDT1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found}, expected {FORMAT_VERSION}")]
    UnsupportedVersion { found: u32 },
    #[error("file is truncated or structurally inconsistent")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor '{name}'")]
    DuplicateTensor { name: String },
    #[error("missing tensor '{name}'")]
    MissingTensor { name: String },
    #[error("unknown tensor '{name}' not used by the declared architecture")]
    UnknownTensor { name: String },
    #[error("tensor '{name}' has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("metadata tensor '{name}' is invalid: {reason}")]
    BadMeta { name: String, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        let record = TensorRecord { name: name.into(), dims, data };
        assert_eq!(
            record.dims.iter().product::<usize>(),
            record.data.len(),
            "tensor '{}' dims/data length mismatch",
            record.name
        );
        record
    }
}

/// Serializes records into the on-disk byte layout, checksum included.
pub fn encode_records(records: &[TensorRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        buf.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(rec.name.as_bytes());
        buf.extend_from_slice(&(rec.dims.len() as u32).to_le_bytes());
        for &dim in &rec.dims {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in &rec.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parses and validates the byte layout: magic, version, structural
/// completeness, then checksum. Tensor content is only decoded after all four
/// checks pass.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<TensorRecord>, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(CheckpointError::BadMagic { found });
    }
    if bytes.len() < 16 {
        // Magic + version + count + trailing checksum do not fit.
        return Err(CheckpointError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_end = bytes.len() - 4;

    // Structural walk: pure length accounting, so a cut-off file reports
    // truncation rather than a checksum failure on arbitrary mid-stream bytes.
    let mut offsets = Vec::with_capacity(count);
    let mut pos = 12usize;
    for _ in 0..count {
        let name_len = read_u32(bytes, &mut pos, payload_end)? as usize;
        let name_start = pos;
        pos = advance(pos, name_len, payload_end)?;
        let rank = read_u32(bytes, &mut pos, payload_end)? as usize;
        let dims_start = pos;
        pos = advance(pos, rank.checked_mul(8).ok_or(CheckpointError::Truncated)?, payload_end)?;
        let mut numel = 1usize;
        for i in 0..rank {
            let dim_bytes = &bytes[dims_start + 8 * i..dims_start + 8 * i + 8];
            let dim = u64::from_le_bytes(dim_bytes.try_into().unwrap());
            let dim = usize::try_from(dim).map_err(|_| CheckpointError::Truncated)?;
            numel = numel.checked_mul(dim).ok_or(CheckpointError::Truncated)?;
        }
        let data_start = pos;
        pos = advance(pos, numel.checked_mul(4).ok_or(CheckpointError::Truncated)?, payload_end)?;
        offsets.push((name_start, name_len, dims_start, rank, data_start, numel));
    }
    if pos != payload_end {
        return Err(CheckpointError::Truncated);
    }

    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..payload_end]);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed });
    }

    let mut records = Vec::with_capacity(count);
    for (name_start, name_len, dims_start, rank, data_start, numel) in offsets {
        let name = std::str::from_utf8(&bytes[name_start..name_start + name_len])
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let dims: Vec<usize> = (0..rank)
            .map(|i| {
                let b = &bytes[dims_start + 8 * i..dims_start + 8 * i + 8];
                u64::from_le_bytes(b.try_into().unwrap()) as usize
            })
            .collect();
        let data: Vec<f32> = (0..numel)
            .map(|i| {
                let b = &bytes[data_start + 4 * i..data_start + 4 * i + 4];
                f32::from_le_bytes(b.try_into().unwrap())
            })
            .collect();
        records.push(TensorRecord { name, dims, data });
    }
    Ok(records)
}

fn read_u32(bytes: &[u8], pos: &mut usize, end: usize) -> Result<u32, CheckpointError> {
    let next = advance(*pos, 4, end)?;
    let v = u32::from_le_bytes(bytes[*pos..next].try_into().unwrap());
    *pos = next;
    Ok(v)
}

fn advance(pos: usize, len: usize, end: usize) -> Result<usize, CheckpointError> {
    let next = pos.checked_add(len).ok_or(CheckpointError::Truncated)?;
    if next > end {
        return Err(CheckpointError::Truncated);
    }
    Ok(next)
}

fn flag(v: bool) -> f32 {
    if v {
        1.0
    } else {
        0.0
    }
}

/// Serializes a model (metadata first, then parameters in canonical order).
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let cfg = model.config();
    let std = model.input_standardization();
    let mut records = vec![
        TensorRecord::new(
            "meta.kind",
            vec![1],
            vec![match model.kind() {
                ModelKind::Edit => 0.0,
                ModelKind::Baseline => 1.0,
            }],
        ),
        TensorRecord::new(
            "meta.geometry",
            vec![8],
            [
                cfg.image_h, cfg.image_w, cfg.channels, cfg.patch, cfg.dim, cfg.heads, cfg.depth,
                cfg.classes,
            ]
            .iter()
            .map(|&v| v as f32)
            .collect(),
        ),
        TensorRecord::new(
            "meta.flags",
            vec![5],
            vec![
                flag(cfg.decoder_layout == DecoderLayout::Qkvo),
                flag(cfg.decoder_includes_cls_in_kv),
                flag(cfg.decoder_norm == DecoderNorm::Post),
                flag(cfg.final_norm),
                flag(cfg.layer_scale),
            ],
        ),
        TensorRecord::new("meta.stochastic_depth_rate", vec![1], vec![cfg.stochastic_depth_rate]),
        TensorRecord::new("meta.input_mean", vec![std.mean.len()], std.mean.clone()),
        TensorRecord::new("meta.input_std", vec![std.std.len()], std.std.clone()),
    ];
    for p in model.named_params() {
        records.push(TensorRecord::new(p.name, p.tensor.shape().to_vec(), p.tensor.data().to_vec()));
    }
    encode_records(&records)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    atomic_write(path, &checkpoint_bytes(model))
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

fn meta_usize(rec: &TensorRecord, i: usize) -> Result<usize, CheckpointError> {
    let v = rec.data[i];
    if v < 0.0 || v.fract() != 0.0 || v > 1e9 {
        return Err(CheckpointError::BadMeta {
            name: rec.name.clone(),
            reason: format!("entry {i} = {v} is not a small non-negative integer"),
        });
    }
    Ok(v as usize)
}

fn meta_bool(rec: &TensorRecord, i: usize) -> Result<bool, CheckpointError> {
    match rec.data[i] {
        v if v == 0.0 => Ok(false),
        v if v == 1.0 => Ok(true),
        v => Err(CheckpointError::BadMeta {
            name: rec.name.clone(),
            reason: format!("entry {i} = {v} is not 0 or 1"),
        }),
    }
}

/// Reconstructs a model from parsed records.
pub fn model_from_records(records: &[TensorRecord]) -> Result<Model, CheckpointError> {
    let mut by_name: HashMap<&str, &TensorRecord> = HashMap::new();
    for rec in records {
        if by_name.insert(rec.name.as_str(), rec).is_some() {
            return Err(CheckpointError::DuplicateTensor { name: rec.name.clone() });
        }
    }
    let meta = |name: &str, len: usize| -> Result<&TensorRecord, CheckpointError> {
        let rec = *by_name
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor { name: name.to_string() })?;
        if rec.dims != [len] {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![len],
                actual: rec.dims.clone(),
            });
        }
        Ok(rec)
    };

    let kind_rec = meta("meta.kind", 1)?;
    let kind = match kind_rec.data[0] {
        v if v == 0.0 => ModelKind::Edit,
        v if v == 1.0 => ModelKind::Baseline,
        v => {
            return Err(CheckpointError::BadMeta {
                name: "meta.kind".to_string(),
                reason: format!("{v} names no architecture"),
            })
        }
    };

    let geo = meta("meta.geometry", 8)?;
    let mut cfg = ModelConfig::new(
        meta_usize(geo, 0)?,
        meta_usize(geo, 1)?,
        meta_usize(geo, 2)?,
        meta_usize(geo, 3)?,
        meta_usize(geo, 4)?,
        meta_usize(geo, 5)?,
        meta_usize(geo, 6)?,
        meta_usize(geo, 7)?,
    );
    let flags = meta("meta.flags", 5)?;
    cfg.decoder_layout =
        if meta_bool(flags, 0)? { DecoderLayout::Qkvo } else { DecoderLayout::KvOnly };
    cfg.decoder_includes_cls_in_kv = meta_bool(flags, 1)?;
    cfg.decoder_norm = if meta_bool(flags, 2)? { DecoderNorm::Post } else { DecoderNorm::Pre };
    cfg.final_norm = meta_bool(flags, 3)?;
    cfg.layer_scale = meta_bool(flags, 4)?;
    cfg.stochastic_depth_rate = meta("meta.stochastic_depth_rate", 1)?.data[0];

    let channels = cfg.channels;
    let standardization = InputStandardization {
        mean: meta("meta.input_mean", channels)?.data.clone(),
        std: meta("meta.input_std", channels)?.data.clone(),
    };

    let mut model = match kind {
        ModelKind::Edit => Model::Edit(EditModel::zeroed(cfg)?),
        ModelKind::Baseline => Model::Baseline(BaselineVitModel::zeroed(cfg)?),
    };
    model.set_input_standardization(standardization);

    let mut consumed: usize = 0;
    for param in model.named_params_mut() {
        let rec = *by_name
            .get(param.name.as_str())
            .ok_or_else(|| CheckpointError::MissingTensor { name: param.name.clone() })?;
        if rec.dims != param.tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: param.name.clone(),
                expected: param.tensor.shape().to_vec(),
                actual: rec.dims.clone(),
            });
        }
        param.tensor.data_mut().copy_from_slice(&rec.data);
        consumed += 1;
    }

    let meta_count = records.iter().filter(|r| r.name.starts_with("meta.")).count();
    if meta_count + consumed != records.len() {
        let param_names: std::collections::HashSet<String> =
            model.named_params().iter().map(|p| p.name.clone()).collect();
        let extra = records
            .iter()
            .find(|r| !r.name.starts_with("meta.") && !param_names.contains(&r.name))
            .expect("count mismatch implies an unmatched record");
        return Err(CheckpointError::UnknownTensor { name: extra.name.clone() });
    }
    Ok(model)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    model_from_records(&decode_records(bytes)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    let bytes = std::fs::read(path)
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    load_checkpoint_bytes(&bytes)
}
