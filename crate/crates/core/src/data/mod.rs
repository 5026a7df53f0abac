//! HR corpus ingestion, bicubic LR synthesis, patch sampling and batching.

pub mod augment;
pub mod bicubic;
pub mod image;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

pub use self::augment::{augment, augment_with, Dihedral};
pub use self::bicubic::bicubic_downscale;
pub use self::image::Image;

/// Aligned LR/HR images at integer scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub lr: Image,
    pub hr: Image,
    pub scale: usize,
    pub id: String,
}

impl ImagePair {
    pub fn new(lr: Image, hr: Image, scale: usize, id: impl Into<String>) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
            return Err(Error::Shape(format!(
                "HR {}x{} is not {}x the LR {}x{}",
                hr.height(),
                hr.width(),
                scale,
                lr.height(),
                lr.width()
            )));
        }
        if hr.channels() != lr.channels() {
            return Err(Error::Shape(format!(
                "channel counts differ: LR {} vs HR {}",
                lr.channels(),
                hr.channels()
            )));
        }
        Ok(ImagePair {
            lr,
            hr,
            scale,
            id: id.into(),
        })
    }

    /// Builds the pair by center-cropping `hr` to a multiple of `scale` and
    /// bicubic-downscaling it.
    pub fn from_hr(hr: &Image, scale: usize, id: impl Into<String>) -> Result<Self> {
        let hr = hr.crop_to_multiple(scale)?;
        let lr = bicubic_downscale(&hr, scale)?;
        ImagePair::new(lr, hr, scale, id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub hr_dir: PathBuf,
    /// Root of pre-generated LR images, laid out as `<lr_dir>/X<scale>/<stem>.png`.
    pub lr_dir: Option<PathBuf>,
    pub scale: usize,
    pub patch_size_lr: usize,
    pub batch_size: usize,
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            hr_dir: PathBuf::from("data/hr"),
            lr_dir: None,
            scale: 4,
            patch_size_lr: 48,
            batch_size: 16,
            augment: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::Config(format!("scale must be ≥ 2, got {}", self.scale)));
        }
        if self.patch_size_lr == 0 || self.batch_size == 0 {
            return Err(Error::Config("patch_size_lr and batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Crops the LR window at `(top, left)` and the exactly corresponding HR
/// window at `(scale·top, scale·left)`.
pub fn crop_pair(pair: &ImagePair, top: usize, left: usize, patch_size_lr: usize) -> Result<ImagePair> {
    let r = pair.scale;
    let lr = pair.lr.crop(top, left, patch_size_lr, patch_size_lr)?;
    let hr = pair
        .hr
        .crop(top * r, left * r, patch_size_lr * r, patch_size_lr * r)?;
    ImagePair::new(lr, hr, r, pair.id.clone())
}

/// Draws a uniformly random aligned patch.
pub fn random_patch(pair: &ImagePair, patch_size_lr: usize, rng: &mut Rng) -> Result<ImagePair> {
    let (h, w) = pair.lr.dims();
    if patch_size_lr == 0 || patch_size_lr > h || patch_size_lr > w {
        return Err(Error::DegenerateInput(format!(
            "patch {} does not fit LR image {}x{} ({})",
            patch_size_lr, h, w, pair.id
        )));
    }
    let top = rng.random_range(0..=h - patch_size_lr);
    let left = rng.random_range(0..=w - patch_size_lr);
    crop_pair(pair, top, left, patch_size_lr)
}

/// A stack of aligned patches as NCHW tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn from_pairs(pairs: &[ImagePair]) -> Result<Batch> {
        let lr: Vec<Image> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<Image> = pairs.iter().map(|p| p.hr.clone()).collect();
        Ok(Batch {
            lr: Image::images_to_tensor(&lr)?,
            hr: Image::images_to_tensor(&hr)?,
            ids: pairs.iter().map(|p| p.id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sampling parameters of a batch stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchSpec {
    pub patch_size_lr: usize,
    pub batch_size: usize,
    pub augment: bool,
}

impl From<&DatasetConfig> for BatchSpec {
    fn from(c: &DatasetConfig) -> Self {
        BatchSpec {
            patch_size_lr: c.patch_size_lr,
            batch_size: c.batch_size,
            augment: c.augment,
        }
    }
}

// Separate ChaCha streams keep the epoch permutations and the per-item
// crop/augment draws independent of each other.
const ITEM_STREAM_BASE: u64 = 1 << 40;

/// Full-size training pairs.
#[derive(Clone, Debug)]
pub struct Corpus {
    pairs: Vec<ImagePair>,
    scale: usize,
}

impl Corpus {
    pub fn new(pairs: Vec<ImagePair>) -> Result<Corpus> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::Config("corpus is empty".into()))?;
        let scale = first.scale;
        if let Some(p) = pairs.iter().find(|p| p.scale != scale) {
            return Err(Error::Config(format!(
                "mixed scales in corpus: {} has {} but expected {}",
                p.id, p.scale, scale
            )));
        }
        Ok(Corpus { pairs, scale })
    }

    /// Degrades each HR image with [`bicubic_downscale`].
    pub fn from_hr_images(images: Vec<(String, Image)>, scale: usize) -> Result<Corpus> {
        let pairs = images
            .into_iter()
            .map(|(id, hr)| ImagePair::from_hr(&hr, scale, id))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(pairs)
    }

    /// Loads `<hr_dir>/*.png`, using pre-generated LR images when
    /// `lr_dir` is set and synthesising them otherwise.
    pub fn load(config: &DatasetConfig) -> Result<Corpus> {
        config.validate()?;
        let files = list_png(&config.hr_dir)?;
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no PNG images in {}",
                config.hr_dir.display()
            )));
        }
        let mut pairs = Vec::with_capacity(files.len());
        for path in files {
            let id = stem(&path);
            let hr = Image::load_png(&path)?.crop_to_multiple(config.scale)?;
            let pair = match &config.lr_dir {
                Some(dir) => {
                    let lr_path = dir.join(format!("X{}", config.scale)).join(format!("{}.png", id));
                    let lr = Image::load_png(&lr_path)?;
                    ImagePair::new(lr, hr, config.scale, id)?
                }
                None => ImagePair::from_hr(&hr, config.scale, id)?,
            };
            pairs.push(pair);
        }
        let corpus = Corpus::new(pairs)?;
        corpus.check_patch_fits(config.patch_size_lr)?;
        Ok(corpus)
    }

    pub fn check_patch_fits(&self, patch_size_lr: usize) -> Result<()> {
        let need = patch_size_lr * self.scale;
        let small: Vec<&str> = self
            .pairs
            .iter()
            .filter(|p| p.hr.height().min(p.hr.width()) < need)
            .map(|p| p.id.as_str())
            .collect();
        if small.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "HR patch of {} px does not fit images: {}",
                need,
                small.join(", ")
            )))
        }
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Image index of global item `item` in the stream: items walk through a
    /// fresh permutation of the corpus every epoch, so a batch larger than the
    /// corpus revisits images.
    fn image_index(&self, seed: u64, item: u64) -> usize {
        let n = self.pairs.len() as u64;
        let epoch = item / n;
        let mut perm: Vec<usize> = (0..self.pairs.len()).collect();
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        perm.shuffle(&mut rng);
        perm[(item % n) as usize]
    }

    /// Patch number `item` of the stream seeded by `seed`.
    pub fn item_at(&self, spec: &BatchSpec, seed: u64, item: u64) -> Result<ImagePair> {
        let pair = &self.pairs[self.image_index(seed, item)];
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(ITEM_STREAM_BASE + item);
        let patch = random_patch(pair, spec.patch_size_lr, &mut rng)?;
        Ok(if spec.augment {
            augment(&patch, &mut rng)
        } else {
            patch
        })
    }

    /// Batch number `index` of the stream seeded by `seed`. The stream is a
    /// pure function of `(seed, index)`, which makes resuming trivial.
    pub fn batch_at(&self, spec: &BatchSpec, seed: u64, index: u64) -> Result<Batch> {
        let first = index * spec.batch_size as u64;
        let pairs = (0..spec.batch_size as u64)
            .map(|i| self.item_at(spec, seed, first + i))
            .collect::<Result<Vec<_>>>()?;
        Batch::from_pairs(&pairs)
    }

    pub fn batches(&self, spec: BatchSpec, seed: u64) -> BatchIterator<'_> {
        BatchIterator {
            corpus: self,
            spec,
            seed,
            next: 0,
        }
    }
}

/// Endless, seed-deterministic stream of training batches.
pub struct BatchIterator<'a> {
    corpus: &'a Corpus,
    spec: BatchSpec,
    seed: u64,
    next: u64,
}

impl BatchIterator<'_> {
    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn seek(&mut self, index: u64) {
        self.next = index;
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = self.corpus.batch_at(&self.spec, self.seed, self.next);
        self.next += 1;
        Some(b)
    }
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

const LOSSY_EXTENSIONS: &[&str] = &["jpg", "jpeg", "webp", "jxl", "avif", "heic"];

/// Sorted `*.png` files of `dir`. Lossy formats are refused outright since
/// they cannot serve as ground truth.
pub fn list_png(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if ext == "png" {
            out.push(path);
        } else if LOSSY_EXTENSIONS.contains(&ext.as_str()) {
            return Err(Error::Config(format!(
                "lossy image {} cannot be used as ground truth; convert to PNG",
                path.display()
            )));
        }
    }
    out.sort();
    Ok(out)
}
