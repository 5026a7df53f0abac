//! RRDB generator: shallow conv, residual-in-residual dense trunk with a
//! global skip, nearest-neighbour ×2 upsampling stages and a two-conv
//! reconstruction head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Init, LEAKY_SLOPE};
use crate::param::{Module, Param};
use crate::Rng;

/// Init scale of every convolution inside the dense blocks.
pub const TRUNK_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrdbConfig {
    pub num_features: usize,
    pub growth: usize,
    pub num_blocks: usize,
    pub residual_scale: f64,
}

impl Default for RrdbConfig {
    fn default() -> Self {
        RrdbConfig {
            num_features: 64,
            growth: 32,
            num_blocks: 23,
            residual_scale: 0.2,
        }
    }
}

impl RrdbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("num_blocks must be ≥ 1".into()));
        }
        self.validate_widths()
    }

    fn validate_widths(&self) -> Result<()> {
        if self.num_features == 0 || self.growth == 0 {
            return Err(Error::Config("num_features and growth must be ≥ 1".into()));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return Err(Error::Config(format!(
                "residual_scale must lie in (0, 1], got {}",
                self.residual_scale
            )));
        }
        Ok(())
    }
}

/// Five densely connected convolutions with a scaled residual.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub convs: [Conv2d; 5],
    pub residual_scale: f64,
}

impl DenseBlock {
    pub fn new(name: &str, nf: usize, gc: usize, residual_scale: f64, rng: &mut Rng) -> Self {
        let init = Init {
            scale: TRUNK_INIT_SCALE,
        };
        let convs = std::array::from_fn(|i| {
            let cout = if i == 4 { nf } else { gc };
            Conv2d::conv3(&format!("{}.conv{}", name, i + 1), nf + i * gc, cout, init, rng)
        });
        DenseBlock {
            convs,
            residual_scale,
        }
    }

    pub fn deep_clone(&self) -> DenseBlock {
        DenseBlock {
            convs: std::array::from_fn(|i| self.convs[i].deep_clone()),
            residual_scale: self.residual_scale,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for conv in &self.convs[..4] {
            let input = if feats.len() == 1 { x } else { g.concat(&feats)? };
            let y = conv.forward(g, input)?;
            feats.push(g.leaky_relu(y, LEAKY_SLOPE));
        }
        let cat = g.concat(&feats)?;
        let y = self.convs[4].forward(g, cat)?;
        let y = g.scale(y, self.residual_scale);
        g.add(x, y)
    }
}

impl Module for DenseBlock {
    fn params(&self) -> Vec<Param> {
        self.convs.iter().flat_map(Module::params).collect()
    }
}

/// Residual-in-residual dense block: three dense blocks wrapped in one more
/// scaled residual.
#[derive(Clone, Debug)]
pub struct Rrdb {
    pub blocks: [DenseBlock; 3],
    pub residual_scale: f64,
}

impl Rrdb {
    pub fn new(name: &str, config: &RrdbConfig, rng: &mut Rng) -> Self {
        let blocks = std::array::from_fn(|i| {
            DenseBlock::new(
                &format!("{}.rdb{}", name, i + 1),
                config.num_features,
                config.growth,
                config.residual_scale,
                rng,
            )
        });
        Rrdb {
            blocks,
            residual_scale: config.residual_scale,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(g, y)?;
        }
        let y = g.scale(y, self.residual_scale);
        g.add(x, y)
    }

    pub fn deep_clone(&self) -> Rrdb {
        Rrdb {
            blocks: std::array::from_fn(|i| self.blocks[i].deep_clone()),
            residual_scale: self.residual_scale,
        }
    }

    pub fn zero(&self) {
        for b in &self.blocks {
            for c in &b.convs {
                c.zero();
            }
        }
    }
}

impl Module for Rrdb {
    fn params(&self) -> Vec<Param> {
        self.blocks.iter().flat_map(Module::params).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub scale: usize,
    pub trunk: RrdbConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            channels: 3,
            scale: 4,
            trunk: RrdbConfig::default(),
        }
    }
}

/// Number of ×2 stages for a power-of-two `scale ≥ 2`.
pub fn upsample_stages(scale: usize) -> Result<usize> {
    if scale < 2 || !scale.is_power_of_two() {
        return Err(Error::UnsupportedScale(scale));
    }
    Ok(scale.trailing_zeros() as usize)
}

/// One ×2 stage: nearest-neighbour enlargement, conv, leaky rectifier.
pub fn upsample_x2(g: &mut Graph, conv: &Conv2d, x: Var) -> Result<Var> {
    let up = g.upsample2x(x)?;
    let y = conv.forward(g, up)?;
    Ok(g.leaky_relu(y, LEAKY_SLOPE))
}

#[derive(Clone, Debug)]
pub struct GeneratorNet {
    config: GeneratorConfig,
    /// Absent when a shared extractor supplies the shallow features.
    pub shallow: Option<Conv2d>,
    pub trunk: Vec<Rrdb>,
    pub trunk_conv: Option<Conv2d>,
    pub upsample: Vec<Conv2d>,
    pub hr_conv: Conv2d,
    pub last: Conv2d,
}

impl GeneratorNet {
    /// Full generator with its own shallow conv.
    pub fn new(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.trunk.validate()?;
        Self::build(config, true, rng)
    }

    /// Generator body that consumes `num_features`-channel features produced
    /// elsewhere (the shared extractor).
    pub fn without_shallow(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.trunk.validate()?;
        Self::build(config, false, rng)
    }

    /// Like [`GeneratorNet::new`] but accepts an empty trunk, in which case
    /// the trunk conv and global skip are omitted as well.
    pub fn new_allow_empty_trunk(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.trunk.validate_widths()?;
        Self::build(config, true, rng)
    }

    fn build(config: GeneratorConfig, with_shallow: bool, rng: &mut Rng) -> Result<Self> {
        let stages = upsample_stages(config.scale)?;
        if config.channels == 0 {
            return Err(Error::Config("channels must be ≥ 1".into()));
        }
        let nf = config.trunk.num_features;
        let shallow = with_shallow
            .then(|| Conv2d::conv3("gen.shallow", config.channels, nf, Init::DEFAULT, rng));
        let trunk: Vec<Rrdb> = (0..config.trunk.num_blocks)
            .map(|i| Rrdb::new(&format!("gen.trunk.{}", i), &config.trunk, rng))
            .collect();
        let trunk_conv = (!trunk.is_empty())
            .then(|| Conv2d::conv3("gen.trunk_conv", nf, nf, Init::DEFAULT, rng));
        let upsample = (0..stages)
            .map(|i| Conv2d::conv3(&format!("gen.upsample.{}", i), nf, nf, Init::DEFAULT, rng))
            .collect();
        let hr_conv = Conv2d::conv3("gen.head.hr_conv", nf, nf, Init::DEFAULT, rng);
        let last = Conv2d::conv3("gen.head.last", nf, config.channels, Init::DEFAULT, rng);
        Ok(GeneratorNet {
            config,
            shallow,
            trunk,
            trunk_conv,
            upsample,
            hr_conv,
            last,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Channels expected on input: image channels, or feature channels when
    /// the shallow conv is external.
    pub fn input_channels(&self) -> usize {
        match self.shallow {
            Some(_) => self.config.channels,
            None => self.config.trunk.num_features,
        }
    }

    /// Maps an LR image batch (or shallow features) to SR at `scale`×.
    /// No clamping is applied.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.input_channels() {
            return Err(Error::Config(format!(
                "generator expects {} input channels, got {}",
                self.input_channels(),
                c
            )));
        }
        let feat = match &self.shallow {
            Some(conv) => conv.forward(g, x)?,
            None => x,
        };
        let mut feat = match &self.trunk_conv {
            Some(tc) => {
                let mut t = feat;
                for block in &self.trunk {
                    t = block.forward(g, t)?;
                }
                let t = tc.forward(g, t)?;
                g.add(feat, t)?
            }
            None => feat,
        };
        for conv in &self.upsample {
            feat = upsample_x2(g, conv, feat)?;
        }
        let y = self.hr_conv.forward(g, feat)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        self.last.forward(g, y)
    }

    /// Zeroes every convolution inside the trunk blocks.
    pub fn zero_trunk(&self) {
        for b in &self.trunk {
            b.zero();
        }
    }
}

impl Module for GeneratorNet {
    fn params(&self) -> Vec<Param> {
        let mut p = Vec::new();
        if let Some(c) = &self.shallow {
            p.extend(c.params());
        }
        for b in &self.trunk {
            p.extend(b.params());
        }
        if let Some(c) = &self.trunk_conv {
            p.extend(c.params());
        }
        for c in &self.upsample {
            p.extend(c.params());
        }
        p.extend(self.hr_conv.params());
        p.extend(self.last.params());
        p
    }
}
