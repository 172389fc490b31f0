//! Tensor wire/file encoding.
//!
//! Layout, all integers little-endian:
//!   rank: u32, extents: u64 per dimension, format tag: u8,
//!   payload: f32 little-endian values.
//!
//! The same encoding is used inside collective frames and in checkpoint
//! files. FP64 tensors are in-process only and cannot be encoded.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{NumFormat, Tensor};

const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 31;

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    if t.format() == NumFormat::Fp64 {
        return Err(Error::Domain("FP64 tensors are not encodable".into()));
    }
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &extent in t.shape() {
        w.write_all(&(extent as u64).to_le_bytes())?;
    }
    w.write_all(&[t.format().tag()])?;
    for &v in t.as_f32() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let rank = u32::from_le_bytes(u32b);
    if rank > MAX_RANK {
        return Err(Error::Protocol(format!("tensor rank {rank} exceeds limit")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut total: u64 = 1;
    for _ in 0..rank {
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let extent = u64::from_le_bytes(u64b);
        total = total.saturating_mul(extent.max(1));
        if total > MAX_ELEMENTS {
            return Err(Error::Protocol("tensor payload exceeds size limit".into()));
        }
        shape.push(extent as usize);
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let format = NumFormat::from_tag(tag[0])?;
    if format == NumFormat::Fp64 {
        return Err(Error::Protocol("FP64 payloads are not supported".into()));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut f32b = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut f32b)?;
        data.push(f32::from_le_bytes(f32b));
    }
    Tensor::from_f32(shape, data, format)
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(16 + t.len() * 4);
    write_tensor(&mut buf, t)?;
    Ok(buf)
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Protocol(format!(
            "{} trailing bytes after tensor payload",
            cursor.len()
        )));
    }
    Ok(t)
}

/// SHA-256 over the encoded bytes of a named tensor list, as a hex string.
/// Used to compare parameter sets across ranks and runs.
pub fn hash_tensors(named: &[(String, Tensor)]) -> Result<String> {
    let mut hasher = Sha256::new();
    for (name, t) in named {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(tensor_to_bytes(t)?);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    format: NumFormat,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    entries: Vec<ManifestEntry>,
}

/// Write named tensors as a single container: a length-prefixed JSON
/// manifest (names, shapes, formats) followed by the tensor payloads in
/// manifest order.
pub fn write_container(w: &mut impl Write, named: &[(String, Tensor)]) -> Result<()> {
    let manifest = Manifest {
        version: 1,
        entries: named
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                format: t.format(),
            })
            .collect(),
    };
    let manifest_json = serde_json::to_vec(&manifest)?;
    w.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    w.write_all(&manifest_json)?;
    for (_, t) in named {
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let manifest_len = u32::from_le_bytes(u32b) as usize;
    if manifest_len > (1 << 24) {
        return Err(Error::Protocol("manifest length exceeds limit".into()));
    }
    let mut manifest_json = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_json)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_json)?;
    if manifest.version != 1 {
        return Err(Error::Protocol(format!(
            "unsupported container version {}",
            manifest.version
        )));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in manifest.entries {
        let t = read_tensor(r)?;
        if t.shape() != entry.shape.as_slice() || t.format() != entry.format {
            return Err(Error::Protocol(format!(
                "tensor '{}' does not match its manifest entry",
                entry.name
            )));
        }
        out.push((entry.name, t));
    }
    Ok(out)
}
