//! Model files: `RETINNCK`, a little-endian u32 format version and u64
//! header length, a JSON header, then every parameter as little-endian
//! f64 in store order. The header carries the SHA-256 of that binary
//! section.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelVariant, Normalization, PassSchedule, ValidationMetrics};
use crate::objective::LossHyper;
use crate::tensor::ParamEntry;

pub const MAGIC: &[u8; 8] = b"RETINNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub schedule: PassSchedule,
    pub hyper: LossHyper,
    pub normalization: Normalization,
    pub validation: Option<ValidationMetrics>,
    pub param_count: usize,
    pub parameters: Vec<ParamLayout>,
    pub binary_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_bytes(model: &ModelVariant) -> Result<Vec<u8>> {
    let mut binary = Vec::with_capacity(model.param_count() * 8);
    let mut parameters = Vec::with_capacity(model.params.len());
    let mut offset = 0;
    for e in model.params.entries() {
        parameters.push(ParamLayout {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset,
        });
        offset += e.values.len();
        for v in &e.values {
            binary.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        architecture: model.architecture.clone(),
        schedule: model.schedule.clone(),
        hyper: model.hyper,
        normalization: model.normalization.clone(),
        validation: model.validation.clone(),
        param_count: offset,
        parameters,
        binary_sha256: sha256_hex(&binary),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + binary.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&binary);
    Ok(out)
}

/// Splits a checkpoint into its header and raw values, verifying magic,
/// version and checksum.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    let binary = &body[hlen..];
    if binary.len() != header.param_count * 8 {
        return Err(Error::Checkpoint(format!(
            "binary section holds {} bytes, header promises {} values",
            binary.len(),
            header.param_count
        )));
    }
    if sha256_hex(binary) != header.binary_sha256 {
        return Err(bad("parameter checksum mismatch"));
    }
    let values = binary
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelVariant> {
    let (header, values) = read_header(bytes)?;
    let mut entries = Vec::with_capacity(header.parameters.len());
    for (i, p) in header.parameters.iter().enumerate() {
        let n: usize = p.shape.iter().product();
        let end = header
            .parameters
            .get(i + 1)
            .map_or(header.param_count, |q| q.offset);
        if end < p.offset || end - p.offset != n {
            return Err(Error::Checkpoint(format!("parameter `{}` has an inconsistent layout", p.name)));
        }
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            values: values[p.offset..end].to_vec(),
        });
    }
    let mut model = ModelVariant::from_entries(header.architecture, header.schedule, entries)?;
    model.hyper = header.hyper;
    model.normalization = header.normalization;
    model.validation = header.validation;
    Ok(model)
}

/// Writes the checkpoint and returns the SHA-256 of the whole file.
pub fn save(model: &ModelVariant, path: &Path) -> Result<String> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<ModelVariant> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
