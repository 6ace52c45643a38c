//! MCNC checkpoint container.
//!
//! Layout: magic `MCNC`, u32 little-endian tensor count, then per tensor a
//! u16 little-endian name length, the UTF-8 name, and the MCNT-encoded
//! tensor. Model parameters use names like `sgn2.block7.conv1.weight`
//! (`conv0` is the transposed conv entering a decoder block, `block10`
//! the final 1x1 conv) and `adapter1.{weight,bias}`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::io::{decode_mcnt, encode_mcnt, McntPayload};
use crate::tensor::{Scalar, Tensor};

use super::McnModel;

const MAGIC: &[u8; 4] = b"MCNC";

/// A named tensor as stored in a checkpoint.
pub type NamedEntry = (String, Vec<usize>, Vec<f32>);

/// Serialize named f32 tensors into the MCNC container format.
pub fn encode_named_tensors(entries: &[NamedEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Parameter("too many tensors for one checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, shape, values) in entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Parameter(format!("name '{name}' too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_mcnt(shape, &McntPayload::F32(values.clone()))?);
    }
    Ok(out)
}

pub fn decode_named_tensors(bytes: &[u8], origin: &str) -> Result<Vec<NamedEntry>> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected MCNC"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        if bytes.len() < pos + 2 {
            return Err(bad("truncated name length"));
        }
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if bytes.len() < pos + name_len {
            return Err(bad("truncated name"));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        pos += name_len;
        let (shape, payload, consumed) = decode_mcnt(&bytes[pos..], origin)?;
        pos += consumed;
        let values = match payload {
            McntPayload::F32(v) => v,
            McntPayload::U16(_) => return Err(bad("checkpoint tensors must be f32")),
        };
        entries.push((name, shape, values));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(entries)
}

pub fn write_named_tensors(path: &Path, entries: &[NamedEntry]) -> Result<()> {
    fs::write(path, encode_named_tensors(entries)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<NamedEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_named_tensors(&bytes, &path.display().to_string())
}

fn to_entry<T: Scalar>(name: &str, tensor: &Tensor<T>) -> NamedEntry {
    let values: Vec<f32> = tensor
        .data()
        .iter()
        .map(|&v| Scalar::to_f64(v) as f32)
        .collect();
    (name.to_string(), tensor.shape().to_vec(), values)
}

/// Write a model's parameters as a checkpoint.
pub fn save_checkpoint<T: Scalar>(path: &Path, model: &McnModel<T>) -> Result<()> {
    let entries: Vec<NamedEntry> = model
        .named_params()
        .iter()
        .map(|(name, t)| to_entry(name, t))
        .collect();
    write_named_tensors(path, &entries)
}

/// Load a checkpoint into an existing model. Names and shapes must match
/// the model exactly.
pub fn load_checkpoint<T: Scalar>(path: &Path, model: &McnModel<T>) -> Result<()> {
    let entries = read_named_tensors(path)?;
    model.load_entries(&entries)
}
