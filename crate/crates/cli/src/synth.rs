//! `synth`: write the procedural HR corpus as PNG files.

use std::path::{Path, PathBuf};

use fasrgan::data::synthetic;

use crate::error::{io, usage, CliResult};

pub fn synth(out: &Path, count: usize, size: usize, seed: u64) -> CliResult<Vec<PathBuf>> {
    if count == 0 || size == 0 {
        return Err(usage("count and size must be positive"));
    }
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    synthetic::corpus(count, size, seed)
        .into_iter()
        .map(|(id, img)| {
            let path = out.join(format!("{}.png", id));
            img.save_png(&path)?;
            Ok(path)
        })
        .collect()
}
