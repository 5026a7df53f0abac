//! Discriminators: the Unet-style fine-grained discriminator (image logit
//! plus per-pixel score map) and the VGG-style plain discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Init, Linear, LEAKY_SLOPE};
use crate::param::{Module, Param};
use crate::Rng;

/// Channel width of stage `i` for base width `base`: doubles per stage and
/// stops growing after the fourth.
pub fn stage_channels(base: usize, i: usize) -> usize {
    base << i.min(3)
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineGrainedConfig {
    /// Channels of the input: image channels, or feature channels when fed
    /// by the shared extractor.
    pub in_channels: usize,
    /// Channels of the score map (the image channel count).
    pub mask_channels: usize,
    /// Predict one map channel and repeat it across `mask_channels`.
    pub single_channel_mask: bool,
    pub base_channels: usize,
    /// Number of pooling stages.
    pub depth: usize,
    pub fc_hidden: usize,
    /// `[height, width]` the score head is built for.
    pub input_size: [usize; 2],
}

impl Default for FineGrainedConfig {
    fn default() -> Self {
        FineGrainedConfig {
            in_channels: 3,
            mask_channels: 3,
            single_channel_mask: false,
            base_channels: 64,
            depth: 4,
            fc_hidden: 100,
            input_size: [192, 192],
        }
    }
}

impl FineGrainedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.mask_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("discriminator channel counts must be ≥ 1".into()));
        }
        if self.depth == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("discriminator depth and fc_hidden must be ≥ 1".into()));
        }
        if self.input_size.contains(&0) {
            return Err(Error::Config("discriminator input_size must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size after padding to a multiple of `2^depth`.
    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        let m = 1 << self.depth;
        (round_up(h, m), round_up(w, m))
    }

    fn bottleneck_features(&self) -> usize {
        let (h, w) = self.padded_size(self.input_size[0], self.input_size[1]);
        stage_channels(self.base_channels, self.depth) * (h >> self.depth) * (w >> self.depth)
    }
}

#[derive(Clone, Debug)]
struct ConvPair {
    a: Conv2d,
    b: Conv2d,
}

impl ConvPair {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.a.forward(g, x)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        let y = self.b.forward(g, y)?;
        Ok(g.leaky_relu(y, LEAKY_SLOPE))
    }

    fn params(&self) -> Vec<Param> {
        let mut p = self.a.params();
        p.extend(self.b.params());
        p
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv2d,
    merge: Conv2d,
}

/// Two fully connected layers producing one logit per image.
#[derive(Clone, Debug)]
pub struct ScoreHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ScoreHead {
    fn new(features: usize, hidden: usize, rng: &mut Rng) -> Self {
        ScoreHead {
            fc1: Linear::new("disc.score_head.fc1", features, hidden, Init::DEFAULT, rng),
            fc2: Linear::new("disc.score_head.fc2", hidden, 1, Init::DEFAULT, rng),
        }
    }

    /// `[N, ...]` features to `[N]` logits.
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let flat = g.flatten(x)?;
        let h = self.fc1.forward(g, flat)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let y = self.fc2.forward(g, h)?;
        g.reshape(y, &[n])
    }

    fn params(&self) -> Vec<Param> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }
}

/// Output of a discriminator pass.
#[derive(Clone, Copy, Debug)]
pub struct DiscOutput {
    /// Pre-sigmoid image logits, shape `[N]`. `None` when the input size
    /// differs from the one the score head was built for.
    pub logit: Option<Var>,
    /// Score map in `(0, 1)` with the input's spatial size and
    /// `mask_channels` channels.
    pub mask: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct FineGrainedDiscriminator {
    config: FineGrainedConfig,
    encoder: Vec<ConvPair>,
    decoder: Vec<DecoderStage>,
    pub score_head: ScoreHead,
    pub mask_head: Conv2d,
}

impl FineGrainedDiscriminator {
    pub fn new(config: FineGrainedConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let base = config.base_channels;
        let mut encoder = Vec::with_capacity(config.depth + 1);
        let mut cin = config.in_channels;
        for l in 0..=config.depth {
            let c = stage_channels(base, l);
            encoder.push(ConvPair {
                a: Conv2d::conv3(&format!("disc.encoder.{}.conv1", l), cin, c, Init::DEFAULT, rng),
                b: Conv2d::conv3(&format!("disc.encoder.{}.conv2", l), c, c, Init::DEFAULT, rng),
            });
            cin = c;
        }
        let score_head = ScoreHead::new(config.bottleneck_features(), config.fc_hidden, rng);
        let decoder = (0..config.depth)
            .rev()
            .map(|l| {
                let c = stage_channels(base, l);
                let below = stage_channels(base, l + 1);
                DecoderStage {
                    up: Conv2d::conv3(&format!("disc.decoder.{}.up", l), below, c, Init::DEFAULT, rng),
                    merge: Conv2d::conv3(&format!("disc.decoder.{}.merge", l), 2 * c, c, Init::DEFAULT, rng),
                }
            })
            .collect();
        let mask_out = if config.single_channel_mask {
            1
        } else {
            config.mask_channels
        };
        let mask_head = Conv2d::conv3("disc.mask_head.conv", base, mask_out, Init::DEFAULT, rng);
        Ok(FineGrainedDiscriminator {
            config,
            encoder,
            decoder,
            score_head,
            mask_head,
        })
    }

    pub fn config(&self) -> &FineGrainedConfig {
        &self.config
    }

    /// Runs both heads. Inputs whose sides are not multiples of `2^depth`
    /// are reflection-padded on the bottom/right and the map is cropped back.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<DiscOutput> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Config(format!(
                "fine-grained discriminator expects {} channels, got {}",
                self.config.in_channels, c
            )));
        }
        let (hp, wp) = self.config.padded_size(h, w);
        let mut cur = if (hp, wp) != (h, w) {
            g.pad_reflect(x, hp - h, wp - w)?
        } else {
            x
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        for (l, stage) in self.encoder.iter().enumerate() {
            cur = stage.forward(g, cur)?;
            if l < self.config.depth {
                skips.push(cur);
                cur = g.max_pool2(cur)?;
            }
        }
        let [eh, ew] = self.config.input_size;
        let logit = if self.config.padded_size(eh, ew) == (hp, wp) {
            Some(self.score_head.forward(g, cur)?)
        } else {
            None
        };
        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let up = g.upsample2x(cur)?;
            let up = stage.up.forward(g, up)?;
            let up = g.leaky_relu(up, LEAKY_SLOPE);
            let cat = g.concat(&[skip, up])?;
            let y = stage.merge.forward(g, cat)?;
            cur = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let m = self.mask_head.forward(g, cur)?;
        let mut mask = g.sigmoid(m);
        if self.config.single_channel_mask && self.config.mask_channels > 1 {
            mask = g.concat(&vec![mask; self.config.mask_channels])?;
        }
        if (hp, wp) != (h, w) {
            mask = g.crop(mask, h, w)?;
        }
        Ok(DiscOutput {
            logit,
            mask: Some(mask),
        })
    }
}

impl Module for FineGrainedDiscriminator {
    fn params(&self) -> Vec<Param> {
        let mut p: Vec<Param> = self.encoder.iter().flat_map(ConvPair::params).collect();
        p.extend(self.score_head.params());
        for s in &self.decoder {
            p.extend(s.up.params());
            p.extend(s.merge.params());
        }
        p.extend(self.mask_head.params());
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlainConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of stride-2 downsampling stages.
    pub stages: usize,
    pub fc_hidden: usize,
    pub input_size: [usize; 2],
}

impl Default for PlainConfig {
    fn default() -> Self {
        PlainConfig {
            in_channels: 3,
            base_channels: 64,
            stages: 4,
            fc_hidden: 100,
            input_size: [192, 192],
        }
    }
}

impl PlainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("discriminator widths must be ≥ 1".into()));
        }
        if self.stages == 0 || self.input_size.contains(&0) {
            return Err(Error::Config("discriminator stages and input_size must be positive".into()));
        }
        Ok(())
    }

    fn tail_size(&self) -> (usize, usize) {
        let shrink = |mut v: usize| {
            for _ in 0..self.stages {
                v = v.div_ceil(2);
            }
            v
        };
        (shrink(self.input_size[0]), shrink(self.input_size[1]))
    }
}

/// VGG-style discriminator: per stage a 3×3 conv and a stride-2 3×3 conv,
/// then a tail conv, flatten and two fully connected layers.
#[derive(Clone, Debug)]
pub struct PlainDiscriminator {
    config: PlainConfig,
    stages: Vec<(Conv2d, Conv2d)>,
    pub tail: Conv2d,
    pub score_head: ScoreHead,
}

impl PlainDiscriminator {
    pub fn new(config: PlainConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let mut stages = Vec::with_capacity(config.stages);
        for i in 0..config.stages {
            let c = stage_channels(config.base_channels, i);
            let conv = Conv2d::conv3(&format!("disc.encoder.{}.conv", i), cin, c, Init::DEFAULT, rng);
            let down = Conv2d::new(&format!("disc.encoder.{}.down", i), c, c, 3, 2, Init::DEFAULT, rng);
            stages.push((conv, down));
            cin = c;
        }
        let tail = Conv2d::conv3("disc.encoder.tail", cin, cin, Init::DEFAULT, rng);
        let (th, tw) = config.tail_size();
        let score_head = ScoreHead::new(cin * th * tw, config.fc_hidden, rng);
        Ok(PlainDiscriminator {
            config,
            stages,
            tail,
            score_head,
        })
    }

    pub fn config(&self) -> &PlainConfig {
        &self.config
    }

    /// Pre-sigmoid logits `[N]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.config.in_channels || [h, w] != self.config.input_size {
            return Err(Error::Config(format!(
                "plain discriminator built for {}x{}x{} input, got {}x{}x{}",
                self.config.input_size[0], self.config.input_size[1], self.config.in_channels, h, w, c
            )));
        }
        let mut cur = x;
        for (conv, down) in &self.stages {
            let y = conv.forward(g, cur)?;
            let y = g.leaky_relu(y, LEAKY_SLOPE);
            let y = down.forward(g, y)?;
            cur = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let y = self.tail.forward(g, cur)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        self.score_head.forward(g, y)
    }

    /// Probabilities in `[0, 1]`, shape `[N]`.
    pub fn probability(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let logit = self.forward(g, x)?;
        Ok(g.sigmoid(logit))
    }
}

impl Module for PlainDiscriminator {
    fn params(&self) -> Vec<Param> {
        let mut p = Vec::new();
        for (a, b) in &self.stages {
            p.extend(a.params());
            p.extend(b.params());
        }
        p.extend(self.tail.params());
        p.extend(self.score_head.params());
        p
    }
}

/// Either discriminator behind one interface.
#[derive(Clone, Debug)]
pub enum Discriminator {
    FineGrained(FineGrainedDiscriminator),
    Plain(PlainDiscriminator),
}

impl Discriminator {
    pub fn input_channels(&self) -> usize {
        match self {
            Discriminator::FineGrained(d) => d.config.in_channels,
            Discriminator::Plain(d) => d.config.in_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<DiscOutput> {
        match self {
            Discriminator::FineGrained(d) => d.forward(g, x),
            Discriminator::Plain(d) => Ok(DiscOutput {
                logit: Some(d.forward(g, x)?),
                mask: None,
            }),
        }
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<Param> {
        match self {
            Discriminator::FineGrained(d) => d.params(),
            Discriminator::Plain(d) => d.params(),
        }
    }
}

/// Relativistic probabilities `σ(c_r − mean c_f)` and `σ(c_f − mean c_r)`.
pub fn relativistic_pair(g: &mut Graph, c_real: Var, c_fake: Var) -> Result<(Var, Var)> {
    let (dr, df) = relativistic_logits(g, c_real, c_fake)?;
    Ok((g.sigmoid(dr), g.sigmoid(df)))
}

/// The pre-sigmoid arguments of [`relativistic_pair`].
pub fn relativistic_logits(g: &mut Graph, c_real: Var, c_fake: Var) -> Result<(Var, Var)> {
    if g.value(c_real).numel() == 0 || g.value(c_fake).numel() == 0 {
        return Err(Error::DegenerateInput("relativistic pair needs non-empty batches".into()));
    }
    let mean_f = g.mean(c_fake);
    let mean_r = g.mean(c_real);
    let dr = g.sub_scalar(c_real, mean_f)?;
    let df = g.sub_scalar(c_fake, mean_r)?;
    Ok((dr, df))
}
