//! Shallow feature extractor whose parameters serve both the generator
//! (on LR inputs) and the discriminator (on SR/HR inputs).

use crate::error::{Error, Result};
use crate::generator::{Rrdb, RrdbConfig};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, Init};
use crate::param::{Module, Param};
use crate::Rng;

/// Entry conv followed by `E` RRDBs; fully convolutional, so the feature
/// map keeps the input's spatial size.
#[derive(Clone, Debug)]
pub struct SharedExtractor {
    pub entry_conv: Conv2d,
    pub blocks: Vec<Rrdb>,
}

impl SharedExtractor {
    pub fn new(channels: usize, trunk: &RrdbConfig, num_blocks: usize, rng: &mut Rng) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("shared extractor needs at least one RRDB".into()));
        }
        if channels == 0 {
            return Err(Error::Config("channels must be ≥ 1".into()));
        }
        trunk.validate()?;
        let entry_conv = Conv2d::conv3("shared.entry", channels, trunk.num_features, Init::DEFAULT, rng);
        let blocks = (0..num_blocks)
            .map(|i| Rrdb::new(&format!("shared.block.{}", i), trunk, rng))
            .collect();
        Ok(SharedExtractor { entry_conv, blocks })
    }

    pub fn in_channels(&self) -> usize {
        self.entry_conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.entry_conv.out_channels()
    }

    /// `[N, C, H, W]` image to `[N, num_features, H, W]` features.
    pub fn extract(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.in_channels() {
            return Err(Error::Config(format!(
                "shared extractor expects {} channels, got {}",
                self.in_channels(),
                c
            )));
        }
        let mut y = self.entry_conv.forward(g, x)?;
        for b in &self.blocks {
            y = b.forward(g, y)?;
        }
        Ok(y)
    }

    /// Copy with unshared storage, for independent baselines.
    pub fn deep_clone(&self) -> SharedExtractor {
        SharedExtractor {
            entry_conv: self.entry_conv.deep_clone(),
            blocks: self.blocks.iter().map(Rrdb::deep_clone).collect(),
        }
    }

    pub fn zero_blocks(&self) {
        for b in &self.blocks {
            b.zero();
        }
    }

    /// True iff every parameter of `self` is the same storage as the
    /// corresponding parameter of `other`.
    pub fn shares_storage(&self, other: &SharedExtractor) -> bool {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.same_storage(y))
    }
}

impl Module for SharedExtractor {
    fn params(&self) -> Vec<Param> {
        let mut p = self.entry_conv.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p
    }
}

/// Checks that the generator-side and discriminator-side views hold one
/// parameter set.
pub fn assert_shared(gen_path: &SharedExtractor, disc_path: &SharedExtractor) -> Result<()> {
    let (a, b) = (gen_path.params(), disc_path.params());
    if a.len() != b.len() {
        return Err(Error::SharingViolation(format!(
            "generator view has {} tensors, discriminator view {}",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(&b) {
        if !x.same_storage(y) {
            return Err(Error::SharingViolation(format!(
                "'{}' is stored separately from '{}'",
                x.name(),
                y.name()
            )));
        }
    }
    Ok(())
}
