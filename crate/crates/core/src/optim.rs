use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed parameter list. Moment buffers belong to the optimizer,
/// so a parameter listed in two optimizers has two independent sets.
#[derive(Debug)]
pub struct Adam {
    config: AdamConfig,
    params: Vec<Param>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(params: Vec<Param>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value().shape())).collect();
        let v = m.clone();
        let steps = vec![0; params.len()];
        Adam {
            config,
            params,
            m,
            v,
            steps,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient in `grads` are left untouched, moments included.
    pub fn step(&mut self, grads: &Gradients, lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = grads.param(p) else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            p.update(|w| {
                for (((w, m), v), &g) in w.data_mut().iter_mut().zip(m).zip(v).zip(g.data()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }

    /// Named moment tensors plus per-parameter step counts, for checkpoints.
    pub fn state(&self, prefix: &str) -> (Vec<(String, Tensor)>, Vec<(String, u64)>) {
        let mut tensors = Vec::with_capacity(2 * self.params.len());
        let mut steps = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            tensors.push((format!("{}.m.{}", prefix, p.name()), self.m[i].clone()));
            tensors.push((format!("{}.v.{}", prefix, p.name()), self.v[i].clone()));
            steps.push((format!("{}.t.{}", prefix, p.name()), self.steps[i]));
        }
        (tensors, steps)
    }

    pub fn load_state(
        &mut self,
        prefix: &str,
        tensor: &dyn Fn(&str) -> Option<Tensor>,
        step: &dyn Fn(&str) -> Option<u64>,
    ) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            for (kind, buf) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{}.{}.{}", prefix, kind, p.name());
                let t = tensor(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {}", key)))?;
                if t.shape() != buf.shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer tensor {} has shape {:?}, expected {:?}",
                        key,
                        t.shape(),
                        buf.shape()
                    )));
                }
                *buf = t;
            }
            let key = format!("{}.t.{}", prefix, p.name());
            self.steps[i] =
                step(&key).ok_or_else(|| Error::Checkpoint(format!("missing step count {}", key)))?;
        }
        Ok(())
    }
}
