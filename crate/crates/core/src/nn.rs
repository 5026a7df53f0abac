//! Convolution and fully connected layers over [`Graph`].

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{Module, Param};
use crate::tensor::Tensor;
use crate::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Kaiming-normal initialisation for leaky-rectifier layers, multiplied by
/// `scale`. A scale of zero gives an all-zero layer.
#[derive(Clone, Copy, Debug)]
pub struct Init {
    pub scale: f64,
}

impl Init {
    pub const DEFAULT: Init = Init { scale: 1.0 };
    pub const ZERO: Init = Init { scale: 0.0 };

    fn weights(self, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        if self.scale == 0.0 {
            return Tensor::zeros(shape);
        }
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let std = gain / (fan_in as f64).sqrt() * self.scale;
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Tensor::new(shape, data).expect("shape matches")
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// A `k × k` convolution with "same" padding at stride 1.
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, init: Init, rng: &mut Rng) -> Self {
        let weight = Param::new(
            format!("{}.weight", name),
            init.weights(&[cout, cin, k, k], cin * k * k, rng),
        );
        let bias = Param::new(format!("{}.bias", name), Tensor::zeros(&[cout]));
        Conv2d {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn conv3(name: &str, cin: usize, cout: usize, init: Init, rng: &mut Rng) -> Self {
        Self::new(name, cin, cout, 3, 1, init, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    /// Copy with fresh, unshared parameter storage.
    pub fn deep_clone(&self) -> Conv2d {
        Conv2d {
            weight: self.weight.deep_clone(),
            bias: self.bias.deep_clone(),
            ..*self
        }
    }

    /// Overwrites the weights and bias with zeros.
    pub fn zero(&self) {
        self.weight.update(|t| t.data_mut().fill(0.0));
        self.bias.update(|t| t.data_mut().fill(0.0));
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, fin: usize, fout: usize, init: Init, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(format!("{}.weight", name), init.weights(&[fout, fin], fin, rng)),
            bias: Param::new(format!("{}.bias", name), Tensor::zeros(&[fout])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn zero(&self) {
        self.weight.update(|t| t.data_mut().fill(0.0));
        self.bias.update(|t| t.data_mut().fill(0.0));
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Fills every parameter of `module` with small random values; used by tests
/// that need non-degenerate weights everywhere (including biases).
pub fn randomize(module: &dyn Module, std: f64, rng: &mut Rng) {
    for p in module.params() {
        p.update(|t| {
            for v in t.data_mut() {
                *v = rng.random_range(-std..std);
            }
        });
    }
}
