//! Model checkpoints.
//!
//! Layout: `b"STTDCKPT"`, `u32` format version, `u32` header length, a JSON
//! header (kind, model configuration, free-form metadata, and the parameter
//! manifest of names and extents), then every parameter's entries in manifest
//! order as little-endian `f32`. Compressed models store their cores as
//! ordinary parameters (`item.core.<k>`) and carry the embedding mode and
//! factorized shape in the model configuration.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"STTDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// `teacher` or `student`.
    pub kind: String,
    pub model: ModelConfig,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    model: ModelConfig,
    meta: BTreeMap<String, String>,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(ck.params.len());
    for (name, p) in ck.params.iter() {
        if !p.value().all_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        manifest.push(ManifestEntry {
            name: name.to_owned(),
            shape: p.value().shape().to_vec(),
        });
    }
    let header = Header {
        kind: ck.kind.clone(),
        model: ck.model.clone(),
        meta: ck.meta.clone(),
        params: manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * ck.params.total_entries());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in ck.params.iter() {
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if buf.len() < 16 || &buf[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    let body = buf.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    header.model.validate()?;
    let mut pos = 16 + hlen;
    let mut params = ParamStore::new();
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        let bytes = buf
            .get(pos..pos + 4 * n)
            .ok_or_else(|| bad(&format!("truncated payload for {}", entry.name)))?;
        pos += 4 * n;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}", entry.name)));
        }
        params.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    if pos != buf.len() {
        return Err(bad(&format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(Checkpoint {
        kind: header.kind,
        model: header.model,
        meta: header.meta,
        params,
    })
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.partial", name.to_string_lossy()));
    let res = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
