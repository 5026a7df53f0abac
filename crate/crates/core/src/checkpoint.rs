//! Single-file archive of named f64 tensors, integer counters and a JSON
//! manifest, protected by a SHA-256 trailer.
//!
//! Layout: `MAGIC | u64 LE header length | header JSON | f64 LE data | sha256`.
//! The digest covers every byte before it.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FASRCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    manifest: serde_json::Value,
    tensors: Vec<Entry>,
    counters: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in f64 elements.
    offset: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub step: u64,
    pub manifest: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
    pub counters: BTreeMap<String, u64>,
}

impl Archive {
    pub fn new(step: u64, manifest: serde_json::Value) -> Self {
        Archive {
            step,
            manifest,
            ..Default::default()
        }
    }

    /// Adds the current values of `params` under their names. Duplicate
    /// names are rejected, since loading goes by name.
    pub fn insert_params(&mut self, params: &[Param]) -> Result<()> {
        for p in params {
            if self.tensors.contains_key(p.name()) {
                return Err(Error::Checkpoint(format!("duplicate tensor name '{}'", p.name())));
            }
            self.tensors.insert(p.name().to_string(), p.value().clone());
        }
        Ok(())
    }

    /// Copies archived values into `params`. Every name and shape is
    /// checked before anything is written, so a failed load changes nothing.
    /// Extra tensors in the archive are ignored.
    pub fn load_params(&self, params: &[Param]) -> Result<()> {
        let mut missing = Vec::new();
        for p in params {
            match self.tensors.get(p.name()) {
                None => missing.push(p.name().to_string()),
                Some(t) if t.shape() != p.value().shape() => {
                    return Err(Error::Checkpoint(format!(
                        "tensor '{}' has shape {:?}, model expects {:?}",
                        p.name(),
                        t.shape(),
                        p.value().shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "archive lacks {} tensor(s): {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        for p in params {
            p.set(self.tensors[p.name()].clone());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            version: FORMAT_VERSION,
            step: self.step,
            manifest: self.manifest.clone(),
            tensors,
            counters: self.counters.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * offset + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch; the archive is corrupt or truncated"));
        }
        let len_at = MAGIC.len();
        let header_len = u64::from_le_bytes(body[len_at..len_at + 8].try_into().expect("8 bytes")) as usize;
        let header_end = (len_at + 8)
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("header length exceeds archive"))?;
        let header: Header = serde_json::from_slice(&body[len_at + 8..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {}", e)))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {})",
                header.version, FORMAT_VERSION
            )));
        }
        let data = &body[header_end..];
        if data.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let total = data.len() / 8;
        let mut tensors = BTreeMap::new();
        let mut seen = HashSet::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset.checked_add(n).is_none_or(|end| end > total) {
                return Err(Error::Checkpoint(format!("tensor '{}' runs past the data section", e.name)));
            }
            if !seen.insert(e.name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate tensor name '{}'", e.name)));
            }
            let values = data[8 * e.offset..8 * (e.offset + n)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(e.name, Tensor::new(&e.shape, values)?);
        }
        Ok(Archive {
            step: header.step,
            manifest: header.manifest,
            tensors,
            counters: header.counters,
        })
    }

    /// Writes to a temporary sibling and renames it over `path`, so readers
    /// never observe a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = temp_sibling(path);
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()
        };
        if let Err(e) = write() {
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(&tmp, e));
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {}", path.display(), m)),
            e => e,
        })
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}
