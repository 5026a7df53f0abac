//! `prepare`: bicubic LR images for an HR directory.

use std::collections::BTreeMap;
use std::path::Path;

use fasrgan::data::{list_png, Image, ImagePair};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io, CliResult};
use crate::run::{to_json, write_atomic};

const INDEX: &str = "checksums.json";

/// Hashes of the HR source and LR output recorded per stem.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    hr_sha256: String,
    lr_sha256: String,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{:02x}", b)).collect())
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct PrepareSummary {
    pub written: usize,
    pub skipped: usize,
}

/// Writes `<out_dir>/X<scale>/<stem>.png` for each HR PNG, skipping
/// outputs whose recorded HR and LR checksums still match.
pub fn prepare(hr_dir: &Path, out_dir: &Path, scale: usize) -> CliResult<PrepareSummary> {
    let files = list_png(hr_dir)?;
    let dest = out_dir.join(format!("X{}", scale));
    std::fs::create_dir_all(&dest).map_err(|e| io(&dest, e))?;
    let index_path = dest.join(INDEX);
    let mut index: BTreeMap<String, Entry> = match std::fs::read(&index_path) {
        Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let mut summary = PrepareSummary::default();
    for hr_path in files {
        let stem = hr_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let lr_path = dest.join(format!("{}.png", stem));
        let hr_sum = sha256_file(&hr_path)?;
        if let Some(entry) = index.get(&stem) {
            if entry.hr_sha256 == hr_sum && lr_path.is_file() && sha256_file(&lr_path)? == entry.lr_sha256 {
                summary.skipped += 1;
                continue;
            }
        }
        let hr = Image::load_png(&hr_path)?;
        let pair = ImagePair::from_hr(&hr, scale, stem.clone())?;
        pair.lr.save_png(&lr_path)?;
        index.insert(
            stem,
            Entry {
                hr_sha256: hr_sum,
                lr_sha256: sha256_file(&lr_path)?,
            },
        );
        summary.written += 1;
    }
    write_atomic(&index_path, &to_json(&index)?)?;
    Ok(summary)
}
