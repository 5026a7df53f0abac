//! Content, attention, perceptual, adversarial and mask losses.
//!
//! Adversarial and mask losses are sums of log terms `ln q` of a
//! probability `q`, minimised by the side that owns them. Under
//! [`Convention::Bce`] each term `ln q` becomes `−ln(1 − q)`, the usual
//! cross-entropy form; both conventions push the same probabilities in the
//! same direction.

use serde::{Deserialize, Serialize};

use crate::discriminator::relativistic_logits;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::perceptual::FeatureExtractor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Adversarial weight.
    pub lambda1: f64,
    /// Attention weight.
    pub lambda2: f64,
    /// Perceptual weight.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 5e-3,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be a finite value ≥ 0, got {}", k, v)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// Log terms exactly as the objective is written.
    #[default]
    AsPrinted,
    /// Each `ln q` replaced by `−ln(1 − q)`.
    Bce,
}

/// Generator loss for the plain discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlainGeneratorLoss {
    /// `−ln D(G(lr))`.
    #[default]
    NonSaturating,
    /// `ln(1 − D(G(lr)))`.
    Saturating,
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{}: {:?} vs {:?}",
            what,
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Log term for `q = σ(z)`, or for `q = 1 − σ(z)` when `complement`.
fn logit_term(g: &mut Graph, z: Var, complement: bool, conv: Convention) -> Var {
    // ln σ(z) under AsPrinted; −ln(1 − σ(z)) = −ln σ(−z) under Bce.
    let (arg_sign, negate) = match conv {
        Convention::AsPrinted => (!complement, false),
        Convention::Bce => (complement, true),
    };
    let arg = if arg_sign { z } else { g.scale(z, -1.0) };
    let t = g.log_sigmoid(arg);
    if negate {
        g.scale(t, -1.0)
    } else {
        t
    }
}

/// Log term for a probability map `q = m`, or `q = 1 − m` when `complement`.
fn prob_term(g: &mut Graph, m: Var, complement: bool, conv: Convention) -> Var {
    let use_complement = complement ^ (conv == Convention::Bce);
    let arg = if use_complement {
        let neg = g.scale(m, -1.0);
        g.add_const(neg, 1.0)
    } else {
        m
    };
    let t = g.log(arg);
    if conv == Convention::Bce {
        g.scale(t, -1.0)
    } else {
        t
    }
}

/// Mean absolute difference.
pub fn l1_content(g: &mut Graph, sr: Var, hr: Var) -> Result<Var> {
    same_shape(g, sr, hr, "l1_content")?;
    let d = g.sub(sr, hr)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Mean of `(1 − M_f)·|sr − hr|`. The mask is used as a constant weight.
pub fn attention_l1(g: &mut Graph, sr: Var, hr: Var, mask_fake: Var) -> Result<Var> {
    same_shape(g, sr, hr, "attention_l1")?;
    same_shape(g, sr, mask_fake, "attention_l1 mask")?;
    let m = g.detach(mask_fake);
    let neg = g.scale(m, -1.0);
    let w = g.add_const(neg, 1.0);
    let d = g.sub(sr, hr)?;
    let d = g.abs(d);
    let wd = g.mul(w, d)?;
    Ok(g.mean(wd))
}

/// Mean absolute difference of `phi` features.
pub fn perceptual(g: &mut Graph, sr: Var, hr: Var, phi: &dyn FeatureExtractor) -> Result<Var> {
    same_shape(g, sr, hr, "perceptual")?;
    let fs = phi.features(g, sr)?;
    let fh = phi.features(g, hr)?;
    l1_content(g, fs, fh)
}

/// Relativistic discriminator loss:
/// `mean ln(1 − σ(c_r − mean c_f)) + mean ln σ(c_f − mean c_r)`.
pub fn d_adversarial(g: &mut Graph, c_real: Var, c_fake: Var, conv: Convention) -> Result<Var> {
    let (dr, df) = relativistic_logits(g, c_real, c_fake)?;
    let a = logit_term(g, dr, true, conv);
    let b = logit_term(g, df, false, conv);
    let (a, b) = (g.mean(a), g.mean(b));
    g.add(a, b)
}

/// Relativistic generator loss on whole-image logits:
/// `mean ln σ(c_r − mean c_f) + mean ln(1 − σ(c_f − mean c_r))`.
pub fn g_adversarial_entire(g: &mut Graph, c_real: Var, c_fake: Var, conv: Convention) -> Result<Var> {
    let (dr, df) = relativistic_logits(g, c_real, c_fake)?;
    let a = logit_term(g, dr, false, conv);
    let b = logit_term(g, df, true, conv);
    let (a, b) = (g.mean(a), g.mean(b));
    g.add(b, a)
}

/// Discriminator score-map loss: `mean[ln(1 − M_r) + ln M_f]`.
pub fn d_mask_loss(g: &mut Graph, mask_real: Var, mask_fake: Var, conv: Convention) -> Result<Var> {
    same_shape(g, mask_real, mask_fake, "d_mask_loss")?;
    let a = prob_term(g, mask_real, true, conv);
    let b = prob_term(g, mask_fake, false, conv);
    let s = g.add(a, b)?;
    Ok(g.mean(s))
}

/// Generator score-map loss: `mean[ln M_r + ln(1 − M_f)]`.
pub fn g_mask_loss(g: &mut Graph, mask_real: Var, mask_fake: Var, conv: Convention) -> Result<Var> {
    same_shape(g, mask_real, mask_fake, "g_mask_loss")?;
    let a = prob_term(g, mask_real, false, conv);
    let b = prob_term(g, mask_fake, true, conv);
    let s = g.add(b, a)?;
    Ok(g.mean(s))
}

/// Plain GAN losses from discriminator logits: returns
/// `(mean[ln(1 − D(hr)) + ln D(fake)], generator loss)`.
pub fn plain_gan_losses(
    g: &mut Graph,
    logit_real: Var,
    logit_fake: Var,
    conv: Convention,
    gen_loss: PlainGeneratorLoss,
) -> Result<(Var, Var)> {
    let a = logit_term(g, logit_real, true, conv);
    let b = logit_term(g, logit_fake, false, conv);
    let (a, b) = (g.mean(a), g.mean(b));
    let loss_d = g.add(a, b)?;
    let loss_g = match gen_loss {
        PlainGeneratorLoss::Saturating => {
            let t = logit_term(g, logit_fake, true, Convention::AsPrinted);
            g.mean(t)
        }
        PlainGeneratorLoss::NonSaturating => {
            let t = g.log_sigmoid(logit_fake);
            let m = g.mean(t);
            g.scale(m, -1.0)
        }
    };
    Ok((loss_d, loss_g))
}

/// Named parts of the generator objective; absent parts are disabled.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts<T> {
    pub l1: T,
    pub l_percep: Option<T>,
    pub l_adv_entire: Option<T>,
    pub l_adv_fine: Option<T>,
    pub l_attention: Option<T>,
}

impl<T: Copy> LossParts<T> {
    /// `(key, value)` pairs of the enabled parts.
    pub fn entries(&self) -> Vec<(&'static str, T)> {
        let mut v = vec![("l1", self.l1)];
        let opt = [
            ("l_percep", self.l_percep),
            ("l_adv_entire", self.l_adv_entire),
            ("l_adv_fine", self.l_adv_fine),
            ("l_attention", self.l_attention),
        ];
        v.extend(opt.into_iter().filter_map(|(k, x)| x.map(|x| (k, x))));
        v
    }
}

fn check_finite(key: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step: 0,
            key: key.to_string(),
            value,
        })
    }
}

/// `l1 + λ1·(entire + fine) + λ2·attention + λ3·percep` on plain values.
pub fn generator_total_value(parts: &LossParts<f64>, w: &LossWeights) -> Result<f64> {
    for (k, v) in parts.entries() {
        check_finite(k, v)?;
    }
    let adv = parts.l_adv_entire.unwrap_or(0.0) + parts.l_adv_fine.unwrap_or(0.0);
    let total = parts.l1
        + w.lambda1 * adv
        + w.lambda2 * parts.l_attention.unwrap_or(0.0)
        + w.lambda3 * parts.l_percep.unwrap_or(0.0);
    check_finite("l_total", total)?;
    Ok(total)
}

/// Graph form of [`generator_total_value`]. A non-finite part yields
/// [`Error::Divergence`] with `step` 0, to be filled in by the caller.
pub fn generator_total(g: &mut Graph, parts: &LossParts<Var>, w: &LossWeights) -> Result<Var> {
    for (k, v) in parts.entries() {
        check_finite(k, g.scalar(v))?;
    }
    let mut total = parts.l1;
    let adv = match (parts.l_adv_entire, parts.l_adv_fine) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (a, b) => a.or(b),
    };
    for (part, lambda) in [
        (adv, w.lambda1),
        (parts.l_attention, w.lambda2),
        (parts.l_percep, w.lambda3),
    ] {
        if let Some(p) = part {
            let s = g.scale(p, lambda);
            total = g.add(total, s)?;
        }
    }
    check_finite("l_total", g.scalar(total))?;
    Ok(total)
}

impl Error {
    /// Sets the step of a [`Error::Divergence`]; other errors pass through.
    pub fn at_step(self, step: u64) -> Error {
        match self {
            Error::Divergence { key, value, .. } => Error::Divergence { step, key, value },
            e => e,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, GradCheck};
    use crate::nn::LEAKY_SLOPE;
    use crate::perceptual::{IdentityFeatures, RandomConvFeatures};
    use crate::tensor::Tensor;
    use crate::Rng;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn eval2(f: impl Fn(&mut Graph, Var, Var) -> Result<Var>, a: Tensor, b: Tensor) -> f64 {
        let mut g = Graph::inference();
        let (a, b) = (g.constant(a), g.constant(b));
        let v = f(&mut g, a, b).unwrap();
        g.scalar(v)
    }

    fn eval3(f: impl Fn(&mut Graph, Var, Var, Var) -> Result<Var>, a: Tensor, b: Tensor, c: Tensor) -> f64 {
        let mut g = Graph::inference();
        let (a, b, c) = (g.constant(a), g.constant(b), g.constant(c));
        let v = f(&mut g, a, b, c).unwrap();
        g.scalar(v)
    }

    fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
        let mut rng = Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn ln_sig(x: f64) -> f64 {
        (1.0 / (1.0 + (-x).exp())).ln()
    }

    #[test]
    fn l1_cases() {
        let hr = random(&[1, 3, 4, 4], 0.0, 1.0, 1);
        assert_eq!(eval2(l1_content, hr.clone(), hr.clone()), 0.0);
        let off = eval2(l1_content, hr.map(|v| v + 0.1), hr.clone());
        assert!((off - 0.1).abs() < 1e-12);
        let a = t(&[1, 1, 2, 2], &[0.9, 0.1, 0.4, 0.7]);
        let b = t(&[1, 1, 2, 2], &[0.2, 0.3, 0.4, 0.0]);
        assert!((eval2(l1_content, a, b) - (0.7 + 0.2 + 0.0 + 0.7) / 4.0).abs() < 1e-15);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let y = g.constant(Tensor::zeros(&[1, 1, 2, 3]));
        assert!(matches!(l1_content(&mut g, x, y), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_reductions() {
        let sr = random(&[2, 3, 4, 4], 0.0, 1.0, 2);
        let hr = random(&[2, 3, 4, 4], 0.0, 1.0, 3);
        let l1 = eval2(l1_content, sr.clone(), hr.clone());
        let zero = Tensor::zeros(sr.shape());
        assert_eq!(eval3(attention_l1, sr.clone(), hr.clone(), zero), l1);
        let one = Tensor::full(sr.shape(), 1.0);
        assert_eq!(eval3(attention_l1, sr.clone(), hr.clone(), one), 0.0);
        let half = Tensor::full(sr.shape(), 0.5);
        assert!((eval3(attention_l1, sr, hr, half) - 0.5 * l1).abs() < 1e-15);
    }

    #[test]
    fn attention_mask_receives_no_gradient() {
        let mut g = Graph::new();
        let sr = g.input(random(&[1, 1, 2, 2], 0.0, 1.0, 4));
        let hr = g.constant(random(&[1, 1, 2, 2], 0.0, 1.0, 5));
        let m = g.input(random(&[1, 1, 2, 2], 0.0, 1.0, 6));
        let l = attention_l1(&mut g, sr, hr, m).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(sr).is_some());
        assert!(grads.wrt(m).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn perceptual_cases() {
        let sr = random(&[1, 3, 6, 6], 0.0, 1.0, 7);
        let hr = random(&[1, 3, 6, 6], 0.0, 1.0, 8);
        let id = IdentityFeatures;
        let p = |g: &mut Graph, a, b| perceptual(g, a, b, &id);
        assert_eq!(eval2(p, sr.clone(), hr.clone()), eval2(l1_content, sr.clone(), hr.clone()));

        let phi = RandomConvFeatures::new(3, 4, &mut Rng::seed_from_u64(9));
        let p = |g: &mut Graph, a, b| perceptual(g, a, b, &phi);
        assert_eq!(eval2(p, hr.clone(), hr.clone()), 0.0);
        // Composition by hand: features of each image, then L1.
        let feats = |x: &Tensor| {
            let mut g = Graph::inference();
            let v = g.constant(x.clone());
            let y = phi.convs()[0].forward(&mut g, v).unwrap();
            let y = g.leaky_relu(y, LEAKY_SLOPE);
            let y = phi.convs()[1].forward(&mut g, y).unwrap();
            g.value(y).clone()
        };
        let (fa, fb) = (feats(&sr), feats(&hr));
        let expect = fa.data().iter().zip(fb.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / fa.numel() as f64;
        assert!((eval2(p, sr, hr) - expect).abs() < 1e-12);
    }

    #[test]
    fn adversarial_cases() {
        let c = t(&[3], &[0.4, 0.4, 0.4]);
        let d = |g: &mut Graph, a, b| d_adversarial(g, a, b, Convention::AsPrinted);
        let ge = |g: &mut Graph, a, b| g_adversarial_entire(g, a, b, Convention::AsPrinted);
        assert!((eval2(d, c.clone(), c.clone()) - 2.0 * LN_HALF).abs() < 1e-15);
        assert!((eval2(ge, c.clone(), c) - 2.0 * LN_HALF).abs() < 1e-15);

        // Perfect discrimination drives the printed loss down.
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 4.0, 16.0] {
            let v = eval2(d, t(&[1], &[s]), t(&[1], &[-s]));
            assert!(v < prev);
            prev = v;
        }

        let cr = [0.3, -1.1, 2.0];
        let cf = [-0.5, 0.8, 0.1];
        let mr = cr.iter().sum::<f64>() / 3.0;
        let mf = cf.iter().sum::<f64>() / 3.0;
        let expect_d = cr.iter().map(|r| (1.0 - (ln_sig(r - mf)).exp()).ln()).sum::<f64>() / 3.0
            + cf.iter().map(|f| ln_sig(f - mr)).sum::<f64>() / 3.0;
        let expect_g = cr.iter().map(|r| ln_sig(r - mf)).sum::<f64>() / 3.0
            + cf.iter().map(|f| (1.0 - (ln_sig(f - mr)).exp()).ln()).sum::<f64>() / 3.0;
        assert!((eval2(d, t(&[3], &cr), t(&[3], &cf)) - expect_d).abs() < 1e-12);
        assert!((eval2(ge, t(&[3], &cr), t(&[3], &cf)) - expect_g).abs() < 1e-12);
    }

    #[test]
    fn mask_cases() {
        let half = Tensor::full(&[1, 3, 2, 2], 0.5);
        let d = |g: &mut Graph, a, b| d_mask_loss(g, a, b, Convention::AsPrinted);
        let gm = |g: &mut Graph, a, b| g_mask_loss(g, a, b, Convention::AsPrinted);
        assert!((eval2(d, half.clone(), half.clone()) - 2.0 * LN_HALF).abs() < 1e-15);
        assert!((eval2(gm, half.clone(), half) - 2.0 * LN_HALF).abs() < 1e-15);

        let mut prev = f64::INFINITY;
        for p in [0.5, 0.7, 0.9, 0.99, 0.999999] {
            let v = eval2(d, Tensor::full(&[1, 1, 2, 2], p), Tensor::full(&[1, 1, 2, 2], 1.0 - p));
            assert!(v < prev);
            prev = v;
        }

        let mr = random(&[1, 3, 2, 2], 0.01, 0.99, 10);
        let mf = random(&[1, 3, 2, 2], 0.01, 0.99, 11);
        let n = 12.0;
        let expect_d: f64 = mr.data().iter().zip(mf.data()).map(|(r, f)| (1.0 - r).ln() + f.ln()).sum::<f64>() / n;
        let expect_g: f64 = mr.data().iter().zip(mf.data()).map(|(r, f)| r.ln() + (1.0 - f).ln()).sum::<f64>() / n;
        assert!((eval2(d, mr.clone(), mf.clone()) - expect_d).abs() < 1e-12);
        assert!((eval2(gm, mr, mf) - expect_g).abs() < 1e-12);
    }

    #[test]
    fn plain_cases() {
        let f = |conv, gl| {
            move |g: &mut Graph, a: Var, b: Var| -> Result<(Var, Var)> { plain_gan_losses(g, a, b, conv, gl) }
        };
        let eval = |real: &[f64], fake: &[f64], conv, gl| {
            let mut g = Graph::inference();
            let a = g.constant(t(&[real.len()], real));
            let b = g.constant(t(&[fake.len()], fake));
            let (d, gen) = f(conv, gl)(&mut g, a, b).unwrap();
            (g.scalar(d), g.scalar(gen))
        };
        let (d, gs) = eval(&[0.0, 0.0], &[0.0], Convention::AsPrinted, PlainGeneratorLoss::Saturating);
        assert!((d - 2.0 * LN_HALF).abs() < 1e-15);
        assert!((gs - LN_HALF).abs() < 1e-15);
        let (_, gn) = eval(&[0.0], &[0.0], Convention::AsPrinted, PlainGeneratorLoss::NonSaturating);
        assert!((gn + LN_HALF).abs() < 1e-15);

        let (d_far, _) = eval(&[8.0], &[-8.0], Convention::AsPrinted, PlainGeneratorLoss::NonSaturating);
        assert!(d_far < d);

        // Random probabilities through their logits.
        let pr = [0.8, 0.35, 0.6];
        let pf = [0.1, 0.55, 0.3];
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let lr: Vec<f64> = pr.iter().map(|&p| logit(p)).collect();
        let lf: Vec<f64> = pf.iter().map(|&p| logit(p)).collect();
        let (d, gs) = eval(&lr, &lf, Convention::AsPrinted, PlainGeneratorLoss::Saturating);
        let expect_d = pr.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 3.0 + pf.iter().map(|p| p.ln()).sum::<f64>() / 3.0;
        let expect_g = pf.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 3.0;
        assert!((d - expect_d).abs() < 1e-12);
        assert!((gs - expect_g).abs() < 1e-12);
        let (db, _) = eval(&lr, &lf, Convention::Bce, PlainGeneratorLoss::Saturating);
        let expect_b = -pr.iter().map(|p| p.ln()).sum::<f64>() / 3.0 - pf.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 3.0;
        assert!((db - expect_b).abs() < 1e-12);
    }

    #[test]
    fn bce_convention_matches_cross_entropy() {
        let mr = random(&[1, 1, 2, 2], 0.05, 0.95, 12);
        let mf = random(&[1, 1, 2, 2], 0.05, 0.95, 13);
        let d = |g: &mut Graph, a, b| d_mask_loss(g, a, b, Convention::Bce);
        let expect: f64 = mr.data().iter().zip(mf.data()).map(|(r, f)| -r.ln() - (1.0 - f).ln()).sum::<f64>() / 4.0;
        assert!((eval2(d, mr, mf) - expect).abs() < 1e-12);
    }

    #[test]
    fn total_cases() {
        let parts = LossParts {
            l1: 0.3,
            l_percep: Some(1.0),
            l_adv_entire: Some(1.0),
            l_adv_fine: Some(1.0),
            l_attention: Some(1.0),
        };
        assert_eq!(generator_total_value(&parts, &LossWeights::ZERO).unwrap(), 0.3);
        let ones = LossParts { l1: 1.0, ..parts };
        let w1 = LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        };
        // The adversarial term counts both entire and fine parts.
        assert_eq!(generator_total_value(&ones, &w1).unwrap(), 5.0);
        let three = LossParts {
            l_adv_fine: None,
            ..ones
        };
        assert_eq!(generator_total_value(&three, &w1).unwrap(), 4.0);

        let p = LossParts {
            l1: 0.125,
            l_percep: Some(0.7),
            l_adv_entire: Some(-1.3),
            l_adv_fine: Some(-0.4),
            l_attention: Some(0.05),
        };
        let w = LossWeights {
            lambda1: 0.01,
            lambda2: 0.5,
            lambda3: 2.0,
        };
        let expect = 0.125 + 0.01 * (-1.3 - 0.4) + 0.5 * 0.05 + 2.0 * 0.7;
        assert!((generator_total_value(&p, &w).unwrap() - expect).abs() < 1e-15);

        let mut g = Graph::inference();
        let v = |g: &mut Graph, x: f64| g.constant(Tensor::scalar(x));
        let gp = LossParts {
            l1: v(&mut g, 0.125),
            l_percep: Some(v(&mut g, 0.7)),
            l_adv_entire: Some(v(&mut g, -1.3)),
            l_adv_fine: Some(v(&mut g, -0.4)),
            l_attention: Some(v(&mut g, 0.05)),
        };
        let total = generator_total(&mut g, &gp, &w).unwrap();
        assert!((g.scalar(total) - expect).abs() < 1e-15);

        let bad = LossParts {
            l_attention: Some(f64::NAN),
            ..p
        };
        match generator_total_value(&bad, &w).unwrap_err().at_step(17) {
            Error::Divergence { step, key, .. } => {
                assert_eq!(step, 17);
                assert_eq!(key, "l_attention");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn total_is_affine_in_each_weight() {
        let p = LossParts {
            l1: 0.2,
            l_percep: Some(0.9),
            l_adv_entire: Some(-0.6),
            l_adv_fine: Some(0.1),
            l_attention: Some(0.3),
        };
        let base = LossWeights {
            lambda1: 0.3,
            lambda2: 0.4,
            lambda3: 0.5,
        };
        let f = |w: LossWeights| generator_total_value(&p, &w).unwrap();
        let slope1 = f(LossWeights { lambda1: 1.3, ..base }) - f(base);
        let slope2 = f(LossWeights { lambda2: 1.4, ..base }) - f(base);
        let slope3 = f(LossWeights { lambda3: 1.5, ..base }) - f(base);
        assert!((slope1 - (-0.5)).abs() < 1e-12);
        assert!((slope2 - 0.3).abs() < 1e-12);
        assert!((slope3 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let cfg = GradCheck {
            rel_tol: 1e-4,
            ..GradCheck::default()
        };
        let img = |s| random(&[1, 1, 2, 2], 0.05, 0.95, s);
        let mask = img(5);
        for conv in [Convention::AsPrinted, Convention::Bce] {
            let mask = mask.clone();
            let cases: Vec<(Box<dyn Fn(&mut Graph, &[Var]) -> Var>, Vec<Tensor>)> = vec![
                (Box::new(|g: &mut Graph, v: &[Var]| l1_content(g, v[0], v[1]).unwrap()), vec![img(1), img(2)]),
                (
                    // The mask is a constant weight, so only sr and hr are checked.
                    Box::new(move |g: &mut Graph, v: &[Var]| {
                        let m = g.constant(mask.clone());
                        attention_l1(g, v[0], v[1], m).unwrap()
                    }),
                    vec![img(3), img(4)],
                ),
                (Box::new(move |g: &mut Graph, v: &[Var]| d_adversarial(g, v[0], v[1], conv).unwrap()), vec![img(6), img(7)]),
                (Box::new(move |g: &mut Graph, v: &[Var]| g_adversarial_entire(g, v[0], v[1], conv).unwrap()), vec![img(8), img(9)]),
                (Box::new(move |g: &mut Graph, v: &[Var]| d_mask_loss(g, v[0], v[1], conv).unwrap()), vec![img(10), img(11)]),
                (Box::new(move |g: &mut Graph, v: &[Var]| g_mask_loss(g, v[0], v[1], conv).unwrap()), vec![img(12), img(13)]),
                (
                    Box::new(move |g: &mut Graph, v: &[Var]| {
                        let (d, gen) = plain_gan_losses(g, v[0], v[1], conv, PlainGeneratorLoss::NonSaturating).unwrap();
                        g.add(d, gen).unwrap()
                    }),
                    vec![img(14), img(15)],
                ),
            ];
            for (i, (f, inputs)) in cases.iter().enumerate() {
                let report = check_inputs(f.as_ref(), inputs, &cfg);
                assert!(report.passed(), "case {} {:?}: {:?}", i, conv, report);
                assert!(report.checked >= 8, "case {}", i);
            }
        }
        let phi = RandomConvFeatures::new(1, 3, &mut Rng::seed_from_u64(1));
        let report = check_inputs(
            &|g: &mut Graph, v: &[Var]| perceptual(g, v[0], v[1], &phi).unwrap(),
            &[img(16), img(17)],
            &cfg,
        );
        assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let big = t(&[2], &[1e6, -1e6]);
        let small = t(&[2], &[-1e6, 1e6]);
        for conv in [Convention::AsPrinted, Convention::Bce] {
            let d = |g: &mut Graph, a, b| d_adversarial(g, a, b, conv);
            let ge = |g: &mut Graph, a, b| g_adversarial_entire(g, a, b, conv);
            assert!(eval2(d, big.clone(), small.clone()).is_finite());
            assert!(eval2(ge, big.clone(), small.clone()).is_finite());
            let zeros = Tensor::zeros(&[1, 1, 2, 2]);
            let ones = Tensor::full(&[1, 1, 2, 2], 1.0);
            let dm = |g: &mut Graph, a, b| d_mask_loss(g, a, b, conv);
            let gm = |g: &mut Graph, a, b| g_mask_loss(g, a, b, conv);
            assert!(eval2(dm, ones.clone(), zeros.clone()).is_finite());
            assert!(eval2(gm, ones.clone(), zeros.clone()).is_finite());
            assert!(eval2(dm, zeros.clone(), ones.clone()).is_finite());
        }
    }

    proptest! {
        #[test]
        fn swap_symmetry_is_exact(
            a in prop::collection::vec(-30.0f64..30.0, 1..6),
            b in prop::collection::vec(-30.0f64..30.0, 1..6),
            ma in prop::collection::vec(0.0f64..=1.0, 4),
            mb in prop::collection::vec(0.0f64..=1.0, 4),
        ) {
            for conv in [Convention::AsPrinted, Convention::Bce] {
                let ta = t(&[a.len()], &a);
                let tb = t(&[b.len()], &b);
                let d = eval2(|g, x, y| d_adversarial(g, x, y, conv), ta.clone(), tb.clone());
                let ge = eval2(|g, x, y| g_adversarial_entire(g, x, y, conv), tb, ta);
                prop_assert_eq!(d, ge);
                prop_assert!(d.is_finite());

                let xa = t(&[1, 1, 2, 2], &ma);
                let xb = t(&[1, 1, 2, 2], &mb);
                let dm = eval2(|g, x, y| d_mask_loss(g, x, y, conv), xa.clone(), xb.clone());
                let gm = eval2(|g, x, y| g_mask_loss(g, x, y, conv), xb, xa);
                prop_assert_eq!(dm, gm);
                prop_assert!(dm.is_finite());
            }
        }

        #[test]
        fn raising_the_mask_never_raises_attention_loss(
            sr in prop::collection::vec(0.0f64..1.0, 4),
            hr in prop::collection::vec(0.0f64..1.0, 4),
            m in prop::collection::vec(0.0f64..1.0, 4),
            bump in prop::collection::vec(0.0f64..1.0, 4),
        ) {
            let m2: Vec<f64> = m.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect();
            let s = t(&[1, 1, 2, 2], &sr);
            let h = t(&[1, 1, 2, 2], &hr);
            let lo = eval3(attention_l1, s.clone(), h.clone(), t(&[1, 1, 2, 2], &m));
            let hi = eval3(attention_l1, s, h, t(&[1, 1, 2, 2], &m2));
            prop_assert!(hi <= lo + 1e-15);
        }
    }
}
