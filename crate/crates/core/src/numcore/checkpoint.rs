//! Self-describing checkpoint container.
//!
//! Layout: `SPNM` magic, format version, header length, JSON header, then
//! every parameter's values as raw little-endian doubles in header order.
//! The header carries a SHA-256 digest over the digest-less header plus the
//! data section, so any corruption or manual edit fails loudly at load time.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPNM";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    digest: String,
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in doubles.
    offset: usize,
    len: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_of(header_without_digest: &[u8], data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(header_without_digest);
    hasher.update(data);
    hex(&hasher.finalize())
}

/// Write all parameters plus caller metadata (config echo, label set, …).
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut params = Vec::with_capacity(store.len());
    let mut offset = 0;
    let mut data = Vec::with_capacity(store.num_values() * 8);
    for (_, p) in store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            len: p.value.len(),
        });
        offset += p.value.len();
        for v in p.value.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut header = Header {
        digest: String::new(),
        meta,
        params,
    };
    let undigested = serde_json::to_vec(&header)?;
    header.digest = digest_of(&undigested, &data);
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&data);
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Read back parameters and metadata, verifying the stored digest.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let mut header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
    let data = &bytes[16 + header_len..];

    let stored = std::mem::take(&mut header.digest);
    let undigested = serde_json::to_vec(&header)?;
    let computed = digest_of(&undigested, data);
    if stored != computed {
        return Err(Error::DigestMismatch { stored, computed });
    }

    let mut tensors = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        let start = entry.offset * 8;
        let end = start + entry.len * 8;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` points past the data section",
                entry.name
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), Tensor::from_vec(&entry.shape, values)?));
    }
    Ok((tensors, header.meta))
}
