//! Full-reference image metrics and directory evaluation reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::data::{list_png, Image};
use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// BT.601 studio-swing luma on the `[0, 1]` scale. Single-channel images
/// are returned unchanged.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => Ok(Image::from_fn(img.height(), img.width(), 1, |y, x, _| {
            (65.481 * img.get(y, x, 0) + 128.553 * img.get(y, x, 1) + 24.966 * img.get(y, x, 2) + 16.0) / 255.0
        })),
        c => Err(Error::Shape(format!("luma needs 1 or 3 channels, got {}", c))),
    }
}

/// The plane a metric is computed on, after removing `border` pixels from
/// every side.
fn plane(img: &Image, on_y: bool, border: usize) -> Result<Image> {
    let p = if on_y { rgb_to_y(img)? } else { img.clone() };
    if 2 * border >= p.height() || 2 * border >= p.width() {
        return Err(Error::DegenerateInput(format!(
            "border crop {} leaves nothing of a {}x{} image",
            border,
            p.height(),
            p.width()
        )));
    }
    p.crop(border, border, p.height() - 2 * border, p.width() - 2 * border)
}

fn planes(a: &Image, b: &Image, on_y: bool, border: usize) -> Result<(Image, Image)> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::Shape(format!(
            "images differ in shape: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok((plane(a, on_y, border)?, plane(b, on_y, border)?))
}

fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// `10·log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, on_y: bool, border_crop: usize) -> Result<f64> {
    let (pa, pb) = planes(a, b, on_y, border_crop)?;
    let m = mse(&pa, &pb);
    Ok(if m == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    })
}

pub fn rmse(a: &Image, b: &Image, on_y: bool, border_crop: usize) -> Result<f64> {
    let (pa, pb) = planes(a, b, on_y, border_crop)?;
    Ok(mse(&pa, &pb).sqrt())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering over valid window positions.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let n = mu_a.len();
    let mut sum = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / n as f64
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ 1.5), data range 1,
/// averaged over valid window positions and then over channels.
pub fn ssim(a: &Image, b: &Image, on_y: bool, border_crop: usize) -> Result<f64> {
    let (pa, pb) = planes(a, b, on_y, border_crop)?;
    let (h, w, c) = (pa.height(), pa.width(), pa.channels());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::DegenerateInput(format!(
            "SSIM needs at least {0}x{0} pixels, got {1}x{2}",
            SSIM_WINDOW, h, w
        )));
    }
    let channel = |img: &Image, ch: usize| -> Vec<f64> { img.data().iter().skip(ch).step_by(c).copied().collect() };
    let total: f64 = (0..c).map(|ch| ssim_plane(&channel(&pa, ch), &channel(&pb, ch), h, w)).sum();
    Ok(total / c as f64)
}

/// A program that prints a perceptual score for the image path given as
/// its last argument; the last line of stdout is parsed as a number.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalScorer {
    /// Splits a whitespace-separated command line.
    pub fn parse(command: &str) -> Result<ExternalScorer> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty scorer command".into()))?;
        Ok(ExternalScorer {
            program,
            args: parts.collect(),
        })
    }

    pub fn score(&self, image: &Path) -> Result<f64> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(image)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        let fail = |why: String| Error::Config(format!("scorer '{}' on {}: {}", self.program, image.display(), why));
        if !out.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        last.trim()
            .parse::<f64>()
            .map_err(|_| fail(format!("could not parse '{}' as a number", last.trim())))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub border_crop: usize,
    /// RMSE on RGB instead of luma.
    pub rmse_rgb: bool,
    /// Upscaling factor of the evaluated images, echoed in the report.
    pub scale: Option<usize>,
    pub scorer: Option<ExternalScorer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub psnr_y: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub perceptual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub psnr_y: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub perceptual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Sr,
    Hr,
}

/// An image present on one side only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Omission {
    pub id: String,
    pub missing: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub images: Vec<ImageRecord>,
    pub aggregates: Aggregates,
    pub omissions: Vec<Omission>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

impl EvalReport {
    /// Builds a report from per-image records, sorted by id.
    pub fn from_records(mut images: Vec<ImageRecord>, omissions: Vec<Omission>, options: EvalOptions) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::DegenerateInput("no image pairs to evaluate".into()));
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let perceptual = if images.iter().all(|r| r.perceptual.is_some()) {
            Some(mean(images.iter().filter_map(|r| r.perceptual)))
        } else {
            None
        };
        let aggregates = Aggregates {
            count: images.len(),
            psnr_y: mean(images.iter().map(|r| r.psnr_y)),
            rmse: mean(images.iter().map(|r| r.rmse)),
            ssim: mean(images.iter().map(|r| r.ssim)),
            perceptual,
        };
        Ok(EvalReport {
            options,
            images,
            aggregates,
            omissions,
        })
    }

    /// Fixed-width text table with one row per image and a mean row.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let width = self.images.iter().map(|r| r.id.len()).max().unwrap_or(0).max(4);
        let mut s = format!(
            "{:<width$}  {:>9}  {:>8}  {:>8}  {:>10}\n",
            "id", "psnr_y", "rmse", "ssim", "perceptual"
        );
        let row = |id: &str, p: f64, r: f64, q: f64, x: Option<f64>| {
            format!(
                "{:<width$}  {:>9.4}  {:>8.5}  {:>8.5}  {:>10}\n",
                id,
                p,
                r,
                q,
                cell(x)
            )
        };
        for r in &self.images {
            s += &row(&r.id, r.psnr_y, r.rmse, r.ssim, r.perceptual);
        }
        let a = &self.aggregates;
        s += &row("mean", a.psnr_y, a.rmse, a.ssim, a.perceptual);
        for o in &self.omissions {
            let side = match o.missing {
                Side::Sr => "SR",
                Side::Hr => "HR",
            };
            s += &format!("omitted {}: no {} image\n", o.id, side);
        }
        s
    }

    /// `id,rmse,perceptual` rows for perception-distortion plots; the
    /// perceptual column is empty without a scorer.
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("id,rmse,perceptual\n");
        for r in &self.images {
            let p = r.perceptual.map(|v| v.to_string()).unwrap_or_default();
            s += &format!("{},{},{}\n", r.id, r.rmse, p);
        }
        s
    }
}

/// Metrics of one SR/HR pair.
pub fn evaluate_pair(id: &str, sr: &Image, hr: &Image, options: &EvalOptions) -> Result<ImageRecord> {
    let b = options.border_crop;
    Ok(ImageRecord {
        id: id.to_string(),
        psnr_y: psnr(sr, hr, true, b)?,
        rmse: rmse(sr, hr, !options.rmse_rgb, b)?,
        ssim: ssim(sr, hr, true, b)?,
        perceptual: None,
    })
}

fn pngs_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_png(dir)?
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (stem, p)
        })
        .collect())
}

/// Scores every SR image against the HR image with the same file stem.
/// Stems present on one side only are reported as omissions.
pub fn evaluate_dir(sr_dir: &Path, hr_dir: &Path, options: &EvalOptions) -> Result<EvalReport> {
    let sr = pngs_by_stem(sr_dir)?;
    let hr = pngs_by_stem(hr_dir)?;
    let mut omissions: Vec<Omission> = Vec::new();
    omissions.extend(hr.keys().filter(|k| !sr.contains_key(*k)).map(|id| Omission {
        id: id.clone(),
        missing: Side::Sr,
    }));
    omissions.extend(sr.keys().filter(|k| !hr.contains_key(*k)).map(|id| Omission {
        id: id.clone(),
        missing: Side::Hr,
    }));
    omissions.sort_by(|a, b| a.id.cmp(&b.id));
    let mut records = Vec::new();
    for (id, sr_path) in &sr {
        let Some(hr_path) = hr.get(id) else { continue };
        let a = Image::load_png(sr_path)?;
        let b = Image::load_png(hr_path)?;
        let mut rec = evaluate_pair(id, &a, &b, options).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("{}: {}", id, m)),
            e => e,
        })?;
        if let Some(s) = &options.scorer {
            rec.perceptual = Some(s.score(sr_path)?);
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no file stems in common between {} and {}",
            sr_dir.display(),
            hr_dir.display()
        )));
    }
    EvalReport::from_records(records, omissions, options.clone())
}
