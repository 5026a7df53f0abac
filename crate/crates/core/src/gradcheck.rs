//! Central finite-difference checks of [`Graph`] gradients.
//!
//! Entries whose ±step evaluations land on a different smooth piece than the
//! unperturbed point (a leaky-rectifier input changing sign, a different
//! max-pool winner, a log clamp switching on) are counted as kink-skipped
//! instead of compared: finite differences are not defined across a kink.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    /// Differences below this are accepted regardless of relative error.
    pub abs_tol: f64,
    /// Check at most this many entries per tensor (randomly chosen).
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
    /// Largest tolerated fraction of kink-skipped entries.
    pub max_skip_fraction: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-9,
            max_entries_per_tensor: None,
            seed: 0,
            max_skip_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub kink_skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
    max_skip_fraction: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        let total = self.checked + self.kink_skipped;
        self.checked > 0
            && self.failures.is_empty()
            && (self.kink_skipped as f64) <= self.max_skip_fraction * total as f64
    }

    fn record(&mut self, cfg: &GradCheck, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        if diff > cfg.abs_tol {
            self.max_rel_err = self.max_rel_err.max(rel);
            if rel > cfg.rel_tol {
                self.failures.push(Mismatch {
                    tensor: tensor.to_string(),
                    index,
                    analytic,
                    numeric,
                });
            }
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.kink_skipped += other.kink_skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
        self.max_skip_fraction = self.max_skip_fraction.max(other.max_skip_fraction);
    }
}

fn entries(numel: usize, cfg: &GradCheck, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cfg.max_entries_per_tensor {
        Some(k) if k < numel => {
            let mut idx = sample(rng, numel, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..numel).collect(),
    }
}

/// Checks gradients of a scalar-valued `build` with respect to its inputs.
pub fn check_inputs(
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    cfg: &GradCheck,
) -> GradCheckReport {
    let eval = |inputs: &[Tensor], track: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                if track {
                    g.input(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let out = build(&mut g, &vars);
        (g, vars, out)
    };

    let (g, vars, out) = eval(inputs, true);
    let base_sig = g.kink_signature();
    let grads = g.backward(out).expect("scalar output");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_skip_fraction: cfg.max_skip_fraction,
        ..Default::default()
    };
    let mut work = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[ti].shape()));
        for i in entries(inputs[ti].numel(), cfg, &mut rng) {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + cfg.step;
            let (gp, _, op) = eval(&work, false);
            work[ti].data_mut()[i] = orig - cfg.step;
            let (gm, _, om) = eval(&work, false);
            work[ti].data_mut()[i] = orig;
            if gp.kink_signature() != base_sig || gm.kink_signature() != base_sig {
                report.kink_skipped += 1;
                continue;
            }
            let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * cfg.step);
            report.record(cfg, &format!("input{}", ti), i, analytic.data()[i], numeric);
        }
    }
    report
}

/// Checks gradients of a scalar-valued `build` with respect to `params`.
/// Parameter values are perturbed in place and restored afterwards.
pub fn check_params(
    build: &dyn Fn(&mut Graph) -> Var,
    params: &[Param],
    cfg: &GradCheck,
) -> GradCheckReport {
    let mut g = Graph::with_trainable(params);
    let out = build(&mut g);
    let base_sig = g.kink_signature();
    let grads = g.backward(out).expect("scalar output");
    drop(g);

    let eval = || {
        let mut g = Graph::inference();
        let out = build(&mut g);
        (g.scalar(out), g.kink_signature())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_skip_fraction: cfg.max_skip_fraction,
        ..Default::default()
    };
    for p in params {
        let analytic = grads
            .param(p)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value().shape()));
        for i in entries(p.numel(), cfg, &mut rng) {
            let orig = p.value().data()[i];
            p.update(|t| t.data_mut()[i] = orig + cfg.step);
            let (fp, sp) = eval();
            p.update(|t| t.data_mut()[i] = orig - cfg.step);
            let (fm, sm) = eval();
            p.update(|t| t.data_mut()[i] = orig);
            if sp != base_sig || sm != base_sig {
                report.kink_skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            report.record(cfg, p.name(), i, analytic.data()[i], numeric);
        }
    }
    report
}
