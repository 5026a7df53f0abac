use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A float image in height × width × channels layout, values nominally in
/// `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn clamped(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::DegenerateInput(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{} image",
                height, width, top, left, self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        }))
    }

    /// Center crop to the largest region whose sides are multiples of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Image> {
        let h = self.height / m * m;
        let w = self.width / m * m;
        if h == 0 || w == 0 {
            return Err(Error::DegenerateInput(format!(
                "{}x{} image is smaller than factor {}",
                self.height, self.width, m
            )));
        }
        if (h, w) == self.dims() {
            return Ok(self.clone());
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.get(y, x, ch);
                }
            }
        }
        Tensor::new(&[1, c, h, w], out).expect("sizes agree")
    }

    /// Extracts batch item `index` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Image> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return Err(Error::Shape(format!("batch index {} out of {}", index, n)));
        }
        let d = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        Ok(Image::from_fn(h, w, c, |y, x, ch| d[(ch * h + y) * w + x]))
    }

    pub fn images_to_tensor(images: &[Image]) -> Result<Tensor> {
        let parts: Vec<Tensor> = images.iter().map(Image::to_tensor).collect();
        Tensor::stack_batch(&parts)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::L16);
        if gray {
            let buf = img.to_luma8();
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::new(h as usize, w as usize, 1, data)
        } else {
            let buf = img.to_rgb8();
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::new(h as usize, w as usize, 3, data)
        }
    }

    /// Writes an 8-bit PNG after clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            c => {
                return Err(Error::Config(format!(
                    "cannot write a {}-channel image as PNG",
                    c
                )))
            }
        };
        res.expect("buffer sized to image")
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}
