//! Loss terms and the two weighted objectives.
//!
//! Every term takes and returns graph tensors so it can be differentiated;
//! inputs are validated up front and violations are reported as errors.

use std::ops::{Add, Mul};

use autodiff::{grad, Tensor};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};

/// Probabilities are floored here before the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
const ZERO_VECTOR_NORM: f64 = 1e-8;

fn batch_len(t: &Tensor) -> Result<usize> {
    match t.shape().first() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(Error::EmptyBatch),
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error between predicted and target normalised ages.
pub fn age_regression_loss(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    batch_len(predicted)?;
    same_shape(predicted, target)?;
    Ok(predicted.sub(target).square().mean_all())
}

/// Same contract as [`age_regression_loss`], applied to translated images
/// scored at their target ages.
pub fn fake_age_error_loss(estimated: &Tensor, target_ages: &Tensor) -> Result<Tensor> {
    age_regression_loss(estimated, target_ages)
}

/// Mean negative log-probability of the true class.
///
/// `probabilities` is `[n, k]` with rows on the simplex.
pub fn identity_classification_loss(probabilities: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let n = batch_len(probabilities)?;
    if probabilities.ndim() != 2 || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?} with {} labels",
            probabilities.shape(),
            labels.len()
        )));
    }
    let k = probabilities.shape()[1];
    let mut onehot = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidLabel { label: y, classes: k });
        }
        onehot[i * k + y] = 1.0;
    }
    let picked = probabilities.mul(&Tensor::from_vec(&[n, k], onehot)).sum_axes(&[1]);
    Ok(picked.clamp_min(PROBABILITY_FLOOR).ln().mean_all().neg())
}

/// `mean(fake) - mean(real) + gamma * penalty`
pub fn wasserstein_critic_loss(
    real_scores: &Tensor,
    fake_scores: &Tensor,
    penalty: &Tensor,
    gamma: f64,
) -> Result<Tensor> {
    batch_len(real_scores)?;
    batch_len(fake_scores)?;
    Ok(fake_scores.mean_all().sub(&real_scores.mean_all()).add(&penalty.reshape(&[]).scale(gamma)))
}

/// `-mean(fake)`: the only part of the adversarial objective that depends on
/// the generator.
pub fn generator_adversarial_term(fake_scores: &Tensor) -> Result<Tensor> {
    batch_len(fake_scores)?;
    Ok(fake_scores.mean_all().neg())
}

/// Gradient penalty on per-sample interpolates `mix * real + (1 - mix) * fake`.
///
/// `critic` maps a batch to one score per sample. The input gradient is
/// recorded, so the returned penalty can be differentiated with respect to
/// the critic's parameters.
pub fn gradient_penalty(
    critic: &dyn Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    mix: &[f64],
) -> Result<Tensor> {
    same_shape(real, fake)?;
    let n = batch_len(real)?;
    if mix.len() != n {
        return Err(Error::ShapeMismatch(format!("{} mixing weights for batch of {n}", mix.len())));
    }
    let mut shape = vec![1; real.ndim()];
    shape[0] = n;
    let alpha = Tensor::from_vec(&shape, mix.to_vec());
    let beta = Tensor::from_vec(&shape, mix.iter().map(|m| 1.0 - m).collect());
    let blended = real.value() * alpha.value() + fake.value() * beta.value();
    let x_hat = Tensor::variable(blended);
    let scores = critic(&x_hat)?;
    let g = grad(&scores.sum_all(), &[&x_hat], true).remove(0);
    let axes: Vec<usize> = (1..g.ndim()).collect();
    let sq = if axes.is_empty() { g.square() } else { g.square().sum_axes(&axes).reshape(&[n]) };
    // floor keeps the norm differentiable when the gradient vanishes
    let norm = sq.clamp_min(1e-30).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all())
}

/// Mean `1 - cos(original, translated)` over rows; lies in `[0, 2]`.
pub fn identity_preservation_loss(original: &Tensor, translated: &Tensor) -> Result<Tensor> {
    let n = batch_len(original)?;
    same_shape(original, translated)?;
    if original.ndim() != 2 {
        return Err(Error::ShapeMismatch(format!("expected [n, c], got {:?}", original.shape())));
    }
    let on = original.square().sum_axes(&[1]).sqrt();
    let tn = translated.square().sum_axes(&[1]).sqrt();
    for (row, norm) in on.value().iter().chain(tn.value().iter()).enumerate() {
        if *norm < ZERO_VECTOR_NORM {
            return Err(Error::ZeroVector { row: row % n, norm: *norm });
        }
    }
    let cos = original.mul(translated).sum_axes(&[1]).div(&on.mul(&tn));
    Ok(cos.neg().add_scalar(1.0).mean_all())
}

/// Mean squared pixel difference over every element of both batches.
pub fn pixel_mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    batch_len(a)?;
    Ok(a.sub(b).square().mean_all())
}

/// Loss weights for both objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reg_d: f64,
    pub reg_g: f64,
    pub cls_d: f64,
    pub cls_g: f64,
    pub age: f64,
    pub id: f64,
    pub recon: f64,
    pub cycle: f64,
}

impl LossWeights {
    pub fn from_config(c: &TrainingConfig) -> Self {
        Self {
            reg_d: c.lambda_reg_d,
            reg_g: c.lambda_reg_g,
            cls_d: c.lambda_cls_d,
            cls_g: c.lambda_cls_g,
            age: c.lambda_age,
            id: c.lambda_id,
            recon: c.lambda_recon,
            cycle: c.lambda_cycle,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::from_config(&TrainingConfig::default())
    }
}

/// Scalar values of every term at one step.
///
/// In a discriminator report `adv` is the full Wasserstein term (including
/// the penalty) and only `total_d` is set. In a generator report `adv` is the
/// generator's adversarial term and only `total_g` is set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub adv: f64,
    pub reg: f64,
    pub cls: f64,
    pub age: f64,
    pub id: f64,
    pub recon: f64,
    pub cycle: f64,
    pub total_d: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 9] {
        [
            ("adv", self.adv),
            ("reg", self.reg),
            ("cls", self.cls),
            ("age", self.age),
            ("id", self.id),
            ("recon", self.recon),
            ("cycle", self.cycle),
            ("total_d", self.total_d),
            ("total_g", self.total_g),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.terms().iter().all(|(_, v)| v.is_finite())
    }
}

/// `adv + w_reg * reg + w_cls * cls`
pub fn discriminator_objective<S>(adv: S, reg: S, cls: S, w: &LossWeights) -> S
where
    S: Add<Output = S> + Mul<f64, Output = S>,
{
    adv + reg * w.reg_d + cls * w.cls_d
}

/// Generator adversarial term plus the six weighted generator terms.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<S>(adv: S, reg: S, cls: S, age: S, id: S, recon: S, cycle: S, w: &LossWeights) -> S
where
    S: Add<Output = S> + Mul<f64, Output = S>,
{
    adv + reg * w.reg_g + cls * w.cls_g + age * w.age + id * w.id + recon * w.recon + cycle * w.cycle
}

pub fn total_discriminator_loss(parts: &LossReport, w: &LossWeights) -> f64 {
    discriminator_objective(parts.adv, parts.reg, parts.cls, w)
}

/// `parts.adv` is read as the generator adversarial term.
pub fn total_generator_loss(parts: &LossReport, w: &LossWeights) -> f64 {
    generator_objective(parts.adv, parts.reg, parts.cls, parts.age, parts.id, parts.recon, parts.cycle, w)
}

/// Tensor wrapper so the objectives above assemble graph nodes too.
#[derive(Clone)]
pub struct Term(pub Tensor);

impl Add for Term {
    type Output = Term;
    fn add(self, rhs: Term) -> Term {
        Term(self.0.add(&rhs.0))
    }
}

impl Mul<f64> for Term {
    type Output = Term;
    fn mul(self, rhs: f64) -> Term {
        Term(self.0.scale(rhs))
    }
}
