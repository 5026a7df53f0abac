//! Assembly of generator and discriminator paths for each training mode.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discriminator::{
    DiscOutput, Discriminator, FineGrainedConfig, FineGrainedDiscriminator, PlainConfig, PlainDiscriminator,
};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorNet};
use crate::graph::{Graph, Var};
use crate::param::{Module, Param};
use crate::shared::{assert_shared, SharedExtractor};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Separate generator and fine-grained discriminator.
    Fasrgan,
    /// Shared extractor with the plain discriminator.
    FsSrgan,
    /// Shared extractor with the fine-grained discriminator.
    FaFsSrgan,
    /// Generator-only L1 training.
    PsnrPretrain,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Fasrgan, Mode::FsSrgan, Mode::FaFsSrgan, Mode::PsnrPretrain];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fasrgan => "fasrgan",
            Mode::FsSrgan => "fs-srgan",
            Mode::FaFsSrgan => "fa-fs-srgan",
            Mode::PsnrPretrain => "psnr-pretrain",
        }
    }

    pub fn uses_shared(self) -> bool {
        matches!(self, Mode::FsSrgan | Mode::FaFsSrgan)
    }

    pub fn uses_fine_grained(self) -> bool {
        matches!(self, Mode::Fasrgan | Mode::FaFsSrgan)
    }

    pub fn is_adversarial(self) -> bool {
        self != Mode::PsnrPretrain
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode '{}'; expected one of fasrgan, fs-srgan, fa-fs-srgan, psnr-pretrain",
                    s
                ))
            })
    }
}

/// Which updates apply gradients to the shared extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharedUpdates {
    #[default]
    Both,
    GeneratorOnly,
    DiscriminatorOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSettings {
    pub base_channels: usize,
    /// Pooling stages of the fine-grained discriminator.
    pub depth: usize,
    /// Stride-2 stages of the plain discriminator.
    pub stages: usize,
    pub fc_hidden: usize,
    pub single_channel_mask: bool,
}

impl Default for DiscriminatorSettings {
    fn default() -> Self {
        DiscriminatorSettings {
            base_channels: 64,
            depth: 4,
            stages: 4,
            fc_hidden: 100,
            single_channel_mask: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    /// RRDBs in the shared extractor (`E`).
    pub shared_blocks: usize,
    /// RRDBs in the generator trunk of the shared-extractor modes (`G`);
    /// `generator.trunk.num_blocks` applies to the other modes.
    pub shared_mode_trunk_blocks: usize,
    pub discriminator: DiscriminatorSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            generator: GeneratorConfig::default(),
            shared_blocks: 1,
            shared_mode_trunk_blocks: 12,
            discriminator: DiscriminatorSettings::default(),
        }
    }
}

/// LR image to SR image, optionally through the shared extractor.
#[derive(Clone, Debug)]
pub struct GeneratorPath {
    pub shared: Option<SharedExtractor>,
    pub net: GeneratorNet,
}

impl GeneratorPath {
    pub fn forward(&self, g: &mut Graph, lr: Var) -> Result<Var> {
        match &self.shared {
            Some(s) => {
                let f = s.extract(g, lr)?;
                self.net.forward(g, f)
            }
            None => self.net.forward(g, lr),
        }
    }

    /// Inference on a constant batch.
    pub fn infer(&self, lr: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor> {
        let mut g = Graph::inference();
        let x = g.constant(lr.clone());
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn scale(&self) -> usize {
        self.net.config().scale
    }

    pub fn channels(&self) -> usize {
        self.net.config().channels
    }
}

impl Module for GeneratorPath {
    fn params(&self) -> Vec<Param> {
        let mut p = self.shared.as_ref().map(Module::params).unwrap_or_default();
        p.extend(self.net.params());
        p
    }
}

/// SR/HR image to discriminator outputs, optionally through the shared
/// extractor.
#[derive(Clone, Debug)]
pub struct DiscriminatorPath {
    pub shared: Option<SharedExtractor>,
    pub net: Discriminator,
}

impl DiscriminatorPath {
    pub fn forward(&self, g: &mut Graph, img: Var) -> Result<DiscOutput> {
        match &self.shared {
            Some(s) => {
                let f = s.extract(g, img)?;
                self.net.forward(g, f)
            }
            None => self.net.forward(g, img),
        }
    }
}

impl Module for DiscriminatorPath {
    fn params(&self) -> Vec<Param> {
        let mut p = self.shared.as_ref().map(Module::params).unwrap_or_default();
        p.extend(self.net.params());
        p
    }
}

fn dedup(params: impl IntoIterator<Item = Param>) -> Vec<Param> {
    let mut seen = HashSet::new();
    params.into_iter().filter(|p| seen.insert(p.id())).collect()
}

#[derive(Clone, Debug)]
pub struct SrModel {
    mode: Mode,
    pub generator: GeneratorPath,
    pub discriminator: Option<DiscriminatorPath>,
}

impl SrModel {
    /// Builds the networks of `mode` for HR training patches of side
    /// `hr_patch`. `PsnrPretrain` builds only the standard generator.
    pub fn build(mode: Mode, config: &ModelConfig, hr_patch: usize, rng: &mut Rng) -> Result<Self> {
        Self::build_with(mode, config, hr_patch, true, rng)
    }

    /// Like [`SrModel::build`] but the discriminator receives its own copy
    /// of the extractor instead of sharing it.
    pub fn build_independent(mode: Mode, config: &ModelConfig, hr_patch: usize, rng: &mut Rng) -> Result<Self> {
        Self::build_with(mode, config, hr_patch, false, rng)
    }

    /// Generator-only model with the architecture used by `target`, for
    /// L1 pretraining ahead of that mode.
    pub fn build_generator(target: Mode, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(SrModel {
            mode: Mode::PsnrPretrain,
            generator: Self::generator_path(target, config, rng)?,
            discriminator: None,
        })
    }

    fn generator_path(mode: Mode, config: &ModelConfig, rng: &mut Rng) -> Result<GeneratorPath> {
        let gc = config.generator;
        if mode.uses_shared() {
            let shared = SharedExtractor::new(gc.channels, &gc.trunk, config.shared_blocks, rng)?;
            let mut body = gc;
            body.trunk.num_blocks = config.shared_mode_trunk_blocks;
            let net = GeneratorNet::without_shallow(body, rng)?;
            Ok(GeneratorPath {
                shared: Some(shared),
                net,
            })
        } else {
            Ok(GeneratorPath {
                shared: None,
                net: GeneratorNet::new(gc, rng)?,
            })
        }
    }

    fn build_with(mode: Mode, config: &ModelConfig, hr_patch: usize, share: bool, rng: &mut Rng) -> Result<Self> {
        if !mode.is_adversarial() {
            return Self::build_generator(Mode::Fasrgan, config, rng);
        }
        let generator = Self::generator_path(mode, config, rng)?;
        let gc = config.generator;
        let ds = config.discriminator;
        let shared = generator
            .shared
            .as_ref()
            .map(|s| if share { s.clone() } else { s.deep_clone() });
        let in_channels = if mode.uses_shared() {
            gc.trunk.num_features
        } else {
            gc.channels
        };
        let net = if mode.uses_fine_grained() {
            Discriminator::FineGrained(FineGrainedDiscriminator::new(
                FineGrainedConfig {
                    in_channels,
                    mask_channels: gc.channels,
                    single_channel_mask: ds.single_channel_mask,
                    base_channels: ds.base_channels,
                    depth: ds.depth,
                    fc_hidden: ds.fc_hidden,
                    input_size: [hr_patch, hr_patch],
                },
                rng,
            )?)
        } else {
            Discriminator::Plain(PlainDiscriminator::new(
                PlainConfig {
                    in_channels,
                    base_channels: ds.base_channels,
                    stages: ds.stages,
                    fc_hidden: ds.fc_hidden,
                    input_size: [hr_patch, hr_patch],
                },
                rng,
            )?)
        };
        Ok(SrModel {
            mode,
            generator,
            discriminator: Some(DiscriminatorPath { shared, net }),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Verifies that both paths hold one extractor parameter set.
    pub fn check_sharing(&self) -> Result<()> {
        match (&self.generator.shared, self.discriminator.as_ref().and_then(|d| d.shared.as_ref())) {
            (Some(a), Some(b)) => assert_shared(a, b),
            (None, None) => Ok(()),
            _ => Err(Error::SharingViolation(
                "only one path has a shared extractor".into(),
            )),
        }
    }

    pub fn shared_params(&self) -> Vec<Param> {
        self.generator.shared.as_ref().map(Module::params).unwrap_or_default()
    }

    /// Parameters the generator update may change under `policy`.
    pub fn generator_trainable(&self, policy: SharedUpdates) -> Vec<Param> {
        let mut p = match policy {
            SharedUpdates::DiscriminatorOnly => Vec::new(),
            _ => self.shared_params(),
        };
        p.extend(self.generator.net.params());
        p
    }

    /// Parameters the discriminator update may change under `policy`.
    pub fn discriminator_trainable(&self, policy: SharedUpdates) -> Vec<Param> {
        let Some(d) = &self.discriminator else {
            return Vec::new();
        };
        let mut p = match (&d.shared, policy) {
            (Some(s), SharedUpdates::Both | SharedUpdates::DiscriminatorOnly) => s.params(),
            _ => Vec::new(),
        };
        p.extend(d.net.params());
        p
    }
}

impl Module for SrModel {
    /// Every distinct parameter once: generator path first.
    fn params(&self) -> Vec<Param> {
        let mut p = self.generator.params();
        if let Some(d) = &self.discriminator {
            p.extend(d.params());
        }
        dedup(p)
    }
}
