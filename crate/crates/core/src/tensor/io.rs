//! MCNT binary tensor container.
//!
//! Layout: magic `MCNT`, version u16 = 1, dtype u8 (0 = f32 little-endian,
//! 1 = u16 little-endian), rank u8, rank x u32 little-endian extents, then
//! the row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"MCNT";
const VERSION: u16 = 1;

/// Payload of an MCNT file.
#[derive(Debug, Clone, PartialEq)]
pub enum McntPayload {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

pub fn encode_mcnt(shape: &[usize], payload: &McntPayload) -> Result<Vec<u8>> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Parameter(format!("rank {} too large", shape.len())));
    }
    let numel: usize = shape.iter().product();
    let count = match payload {
        McntPayload::F32(v) => v.len(),
        McntPayload::U16(v) => v.len(),
    };
    if numel != count {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} implies {numel} elements, payload has {count}"
        )));
    }
    let mut out = Vec::with_capacity(4 + 2 + 1 + 1 + 4 * shape.len() + 4 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match payload {
        McntPayload::F32(_) => 0,
        McntPayload::U16(_) => 1,
    });
    out.push(shape.len() as u8);
    for &e in shape {
        let e = u32::try_from(e)
            .map_err(|_| Error::Parameter(format!("extent {e} exceeds u32::MAX")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    match payload {
        McntPayload::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        McntPayload::U16(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decode one MCNT record from `bytes`, returning (shape, payload, consumed).
pub fn decode_mcnt(bytes: &[u8], origin: &str) -> Result<(Vec<usize>, McntPayload, usize)> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected MCNT"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    let rank = bytes[7] as usize;
    let mut pos = 8;
    if bytes.len() < pos + 4 * rank {
        return Err(bad("truncated extents"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let numel: usize = shape.iter().product();
    let payload = match dtype {
        0 => {
            if bytes.len() < pos + 4 * numel {
                return Err(bad("truncated f32 payload"));
            }
            let mut v = Vec::with_capacity(numel);
            for i in 0..numel {
                let o = pos + 4 * i;
                v.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
            }
            pos += 4 * numel;
            McntPayload::F32(v)
        }
        1 => {
            if bytes.len() < pos + 2 * numel {
                return Err(bad("truncated u16 payload"));
            }
            let mut v = Vec::with_capacity(numel);
            for i in 0..numel {
                let o = pos + 2 * i;
                v.push(u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()));
            }
            pos += 2 * numel;
            McntPayload::U16(v)
        }
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };
    Ok((shape, payload, pos))
}

pub fn write_mcnt(path: &Path, shape: &[usize], payload: &McntPayload) -> Result<()> {
    let bytes = encode_mcnt(shape, payload)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_mcnt(path: &Path) -> Result<(Vec<usize>, McntPayload)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (shape, payload, consumed) = decode_mcnt(&bytes, &path.display().to_string())?;
    if consumed != bytes.len() {
        return Err(Error::format(
            path.display().to_string(),
            "trailing bytes after payload",
        ));
    }
    Ok((shape, payload))
}

/// Save a tensor as an f32 MCNT file (values are narrowed if `T` is f64).
pub fn save_tensor<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let data: Vec<f32> = tensor
        .data()
        .iter()
        .map(|&v| Scalar::to_f64(v) as f32)
        .collect();
    write_mcnt(path, tensor.shape(), &McntPayload::F32(data))
}

/// Load an f32 MCNT file as a tensor.
pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (shape, payload) = read_mcnt(path)?;
    match payload {
        McntPayload::F32(v) => Tensor::from_vec(
            &shape,
            v.into_iter().map(|x| T::from_f64(x as f64)).collect(),
        ),
        McntPayload::U16(_) => Err(Error::format(
            path.display().to_string(),
            "expected f32 tensor, found u16 payload",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_and_u16() {
        let dir = std::env::temp_dir().join(format!("mcnt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let p = dir.join("a.mcnt");
        let shape = [2usize, 3, 4];
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        write_mcnt(&p, &shape, &McntPayload::F32(data.clone())).unwrap();
        let (s, payload) = read_mcnt(&p).unwrap();
        assert_eq!(s, shape.to_vec());
        assert_eq!(payload, McntPayload::F32(data));

        let p = dir.join("b.mcnt");
        let raw: Vec<u16> = vec![0, 512, 16383, 65535];
        write_mcnt(&p, &[2, 2], &McntPayload::U16(raw.clone())).unwrap();
        let (s, payload) = read_mcnt(&p).unwrap();
        assert_eq!(s, vec![2, 2]);
        assert_eq!(payload, McntPayload::U16(raw));

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic_and_missing_file() {
        let err = decode_mcnt(b"NOPE\x01\x00\x00\x00", "buf").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let err = read_mcnt(Path::new("/nonexistent/never.mcnt")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn rejects_truncated_payload() {
        let full = encode_mcnt(&[4], &McntPayload::F32(vec![1.0; 4])).unwrap();
        let err = decode_mcnt(&full[..full.len() - 2], "buf").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
