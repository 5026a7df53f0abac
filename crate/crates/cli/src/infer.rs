//! `infer`: upscale an image or a directory with a trained generator.

use std::path::{Path, PathBuf};

use fasrgan::data::{list_png, Image};
use fasrgan::infer::{upscale, upscale_tiled, TileOptions};
use fasrgan::model::GeneratorPath;
use fasrgan::trainer::load_generator;

use crate::error::{io, usage, CliResult};

pub struct InferOptions {
    pub scale: Option<usize>,
    /// `None` processes each image in one pass.
    pub tiles: Option<TileOptions>,
}

fn run_one(gen: &GeneratorPath, input: &Path, output: &Path, opts: &InferOptions) -> CliResult {
    let lr = Image::load_png(input)?;
    let sr = match opts.tiles {
        Some(t) => upscale_tiled(gen, &lr, t)?,
        None => upscale(gen, &lr)?,
    };
    sr.save_png(output)?;
    Ok(())
}

/// Returns the written paths.
pub fn infer(checkpoint: &Path, input: &Path, out: &Path, opts: &InferOptions) -> CliResult<Vec<PathBuf>> {
    let (_, model) = load_generator(checkpoint)?;
    let gen = &model.generator;
    if let Some(s) = opts.scale {
        if s != gen.scale() {
            return Err(usage(format!(
                "checkpoint upscales by {}, but --scale {} was requested",
                gen.scale(),
                s
            )));
        }
    }
    if input.is_dir() {
        std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let mut written = Vec::new();
        for path in list_png(input)? {
            let dest = out.join(path.file_name().expect("listed file has a name"));
            run_one(gen, &path, &dest, opts)?;
            written.push(dest);
        }
        if written.is_empty() {
            return Err(usage(format!("no PNG images in {}", input.display())));
        }
        Ok(written)
    } else if input.is_file() {
        let dest = if out.is_dir() {
            out.join(input.file_name().expect("file has a name"))
        } else {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            }
            out.to_path_buf()
        };
        run_one(gen, input, &dest, opts)?;
        Ok(vec![dest])
    } else {
        Err(usage(format!("{}: no such file or directory", input.display())))
    }
}
