//! Frozen feature maps for the perceptual loss.

use std::collections::HashMap;
use std::path::Path;

use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Init, LEAKY_SLOPE};
use crate::param::{Module, Param};
use crate::tensor::Tensor;
use crate::Rng;

/// A fixed map from images to feature tensors. Implementations hold no
/// trainable state: their parameters are never handed to an optimizer.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn features(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

/// Returns the image unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn name(&self) -> &str {
        "identity"
    }

    fn features(&self, _g: &mut Graph, x: Var) -> Result<Var> {
        Ok(x)
    }
}

/// Two random 3×3 convolutions with a leaky rectifier between them; the
/// output is taken before the second activation.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures {
    convs: [Conv2d; 2],
}

impl RandomConvFeatures {
    pub fn new(channels: usize, width: usize, rng: &mut Rng) -> Self {
        RandomConvFeatures {
            convs: [
                Conv2d::conv3("percep.conv1", channels, width, Init::DEFAULT, rng),
                Conv2d::conv3("percep.conv2", width, width, Init::DEFAULT, rng),
            ],
        }
    }

    pub fn convs(&self) -> &[Conv2d; 2] {
        &self.convs
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn name(&self) -> &str {
        "random-conv"
    }

    fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.convs[0].forward(g, x)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        self.convs[1].forward(g, y)
    }
}

/// Positions of the convolutions in the torchvision `vgg19().features`
/// sequence; `None` marks a max-pool. The last conv is conv5_4.
const VGG19_LAYOUT: [Option<(usize, usize, usize)>; 20] = [
    Some((0, 3, 64)),
    Some((2, 64, 64)),
    None,
    Some((5, 64, 128)),
    Some((7, 128, 128)),
    None,
    Some((10, 128, 256)),
    Some((12, 256, 256)),
    Some((14, 256, 256)),
    Some((16, 256, 256)),
    None,
    Some((19, 256, 512)),
    Some((21, 512, 512)),
    Some((23, 512, 512)),
    Some((25, 512, 512)),
    None,
    Some((28, 512, 512)),
    Some((30, 512, 512)),
    Some((32, 512, 512)),
    Some((34, 512, 512)),
];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG19 up to conv5_4, pre-activation, on ImageNet-normalised RGB input.
#[derive(Clone, Debug)]
pub struct Vgg19Features {
    convs: Vec<Conv2d>,
}

impl Vgg19Features {
    /// Random weights with the real architecture; for shape checks and
    /// benchmarks only.
    pub fn random(rng: &mut Rng) -> Self {
        let convs = VGG19_LAYOUT
            .iter()
            .flatten()
            .map(|&(idx, cin, cout)| {
                Conv2d::conv3(&format!("features.{}", idx), cin, cout, Init::DEFAULT, rng)
            })
            .collect();
        Vgg19Features { convs }
    }

    /// Loads `features.<i>.weight` / `features.<i>.bias` tensors (F32 or
    /// F64) from a safetensors file, e.g. one exported from torchvision.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
        let mut convs = Vec::new();
        for &(idx, cin, cout) in VGG19_LAYOUT.iter().flatten() {
            let w = read_tensor(&st, &format!("features.{}.weight", idx), &[cout, cin, 3, 3])?;
            let b = read_tensor(&st, &format!("features.{}.bias", idx), &[cout])?;
            convs.push(Conv2d {
                weight: Param::new(format!("features.{}.weight", idx), w),
                bias: Param::new(format!("features.{}.bias", idx), b),
                stride: 1,
                pad: 1,
            });
        }
        Ok(Vgg19Features { convs })
    }

    /// Writes the weights in the layout [`Vgg19Features::load`] reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bufs: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for p in self.params() {
            let v = p.value();
            let bytes = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
            bufs.push((p.name().to_string(), v.shape().to_vec(), bytes));
        }
        let views = bufs
            .iter()
            .map(|(n, s, b)| {
                safetensors::tensor::TensorView::new(Dtype::F64, s.clone(), b).map(|v| (n.clone(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let out = safetensors::serialize(views, None::<HashMap<String, String>>)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn read_tensor(st: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Tensor> {
    let view = st
        .tensor(name)
        .map_err(|e| Error::Checkpoint(format!("tensor '{}': {}", name, e)))?;
    if view.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "tensor '{}' has shape {:?}, expected {:?}",
            name,
            view.shape(),
            shape
        )));
    }
    let data: Vec<f64> = match view.dtype() {
        Dtype::F32 => view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has unsupported dtype {:?}",
                name, other
            )))
        }
    };
    Tensor::new(shape, data)
}

impl Module for Vgg19Features {
    fn params(&self) -> Vec<Param> {
        self.convs.iter().flat_map(Module::params).collect()
    }
}

impl FeatureExtractor for Vgg19Features {
    fn name(&self) -> &str {
        "vgg19-54"
    }

    fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN
            .iter()
            .zip(&IMAGENET_STD)
            .map(|(m, s)| -m / s)
            .collect();
        let mut y = g.channel_affine(x, &scale, &shift)?;
        let mut convs = self.convs.iter();
        let last = VGG19_LAYOUT.len() - 1;
        for (i, layer) in VGG19_LAYOUT.iter().enumerate() {
            match layer {
                Some(_) => {
                    let conv = convs.next().expect("one conv per layout entry");
                    y = conv.forward(g, y)?;
                    if i != last {
                        y = g.leaky_relu(y, 0.0);
                    }
                }
                None => y = g.max_pool2(y)?,
            }
        }
        Ok(y)
    }
}

/// Resolves an extractor by name: `identity`, `random-conv[:<seed>]`, or
/// `vgg19-54:<path to safetensors>`.
pub fn from_spec(spec: &str, channels: usize) -> Result<Box<dyn FeatureExtractor>> {
    use rand::SeedableRng;
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    match (kind, arg) {
        ("identity", None) => Ok(Box::new(IdentityFeatures)),
        ("random-conv", arg) => {
            let seed = match arg {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad random-conv seed '{}'", s)))?,
                None => 0,
            };
            Ok(Box::new(RandomConvFeatures::new(channels, 8, &mut Rng::seed_from_u64(seed))))
        }
        ("vgg19-54", Some(path)) => {
            if channels != 3 {
                return Err(Error::Config("vgg19-54 features need RGB input".into()));
            }
            Ok(Box::new(Vgg19Features::load(Path::new(path))?))
        }
        _ => Err(Error::Config(format!(
            "unknown perceptual extractor '{}'; expected identity, random-conv[:seed] or vgg19-54:<path>",
            spec
        ))),
    }
}
