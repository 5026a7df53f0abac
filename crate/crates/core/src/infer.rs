//! Whole-image and tiled super-resolution with a trained generator.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::GeneratorPath;

/// Tile side and overlap, both in LR pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileOptions {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileOptions {
    fn default() -> Self {
        TileOptions { tile: 128, overlap: 16 }
    }
}

fn check_channels(gen: &GeneratorPath, lr: &Image) -> Result<()> {
    if lr.channels() != gen.channels() {
        return Err(Error::Config(format!(
            "generator takes {}-channel images, input has {}",
            gen.channels(),
            lr.channels()
        )));
    }
    Ok(())
}

/// Upscales in one pass and clamps to `[0, 1]`.
pub fn upscale(gen: &GeneratorPath, lr: &Image) -> Result<Image> {
    check_channels(gen, lr)?;
    let out = gen.infer(&lr.to_tensor())?;
    Ok(Image::from_tensor(&out, 0)?.clamped())
}

/// Tile origins along an axis of length `n`; the last tile is flush with
/// the end.
fn origins(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut v: Vec<usize> = (0..).map(|k| k * step).take_while(|&s| s + tile < n).collect();
    v.push(n - tile);
    v.dedup();
    v
}

/// Blend weight of output sample `i` of a tile spanning `len` samples;
/// ramps linearly over `ramp` samples at edges shared with a neighbour.
fn weight(i: usize, len: usize, ramp: usize, ramp_start: bool, ramp_end: bool) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    let mut w: f64 = 1.0;
    if ramp_start {
        w = w.min((i as f64 + 0.5) / ramp as f64);
    }
    if ramp_end {
        w = w.min(((len - i) as f64 - 0.5) / ramp as f64);
    }
    w
}

/// Upscales overlapping tiles and blends them linearly across the
/// overlaps, bounding peak memory by the tile size. Output is clamped to
/// `[0, 1]`.
pub fn upscale_tiled(gen: &GeneratorPath, lr: &Image, opts: TileOptions) -> Result<Image> {
    check_channels(gen, lr)?;
    if opts.tile == 0 || opts.overlap >= opts.tile {
        return Err(Error::Config(format!(
            "tile {} must be positive and larger than overlap {}",
            opts.tile, opts.overlap
        )));
    }
    let (h, w, c) = (lr.height(), lr.width(), lr.channels());
    if h <= opts.tile && w <= opts.tile {
        return upscale(gen, lr);
    }
    let r = gen.scale();
    let (oh, ow) = (h * r, w * r);
    let mut acc = vec![0.0; oh * ow * c];
    let mut norm = vec![0.0; oh * ow];
    let ramp = opts.overlap * r;
    for &ty in &origins(h, opts.tile, opts.overlap) {
        for &tx in &origins(w, opts.tile, opts.overlap) {
            let (th, tw) = (opts.tile.min(h), opts.tile.min(w));
            let patch = lr.crop(ty, tx, th, tw)?;
            let out = Image::from_tensor(&gen.infer(&patch.to_tensor())?, 0)?;
            let (ph, pw) = (th * r, tw * r);
            for y in 0..ph {
                let wy = weight(y, ph, ramp, ty > 0, ty + th < h);
                for x in 0..pw {
                    let wgt = wy * weight(x, pw, ramp, tx > 0, tx + tw < w);
                    let (gy, gx) = (ty * r + y, tx * r + x);
                    norm[gy * ow + gx] += wgt;
                    for ch in 0..c {
                        acc[(gy * ow + gx) * c + ch] += wgt * out.get(y, x, ch);
                    }
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, v)| v / norm[i / c])
        .collect();
    Ok(Image::new(oh, ow, c, data)?.clamped())
}
