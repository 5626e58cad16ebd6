//! Polar split of a pooled encoder feature into an age magnitude and an
//! identity direction.
//!
//! A latent `z` factors as `z = |z| * (z / |z|)`. The scalar `|z|` is the age
//! basis, the unit vector is the identity basis. The decoder only ever sees
//! the identity basis, so age has to be supplied separately.

use autodiff::Tensor;

use crate::error::{Error, Result};

/// Norms below this are treated as a collapsed encoder output.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// A globally pooled encoder output of length `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature(Vec<f64>);

impl LatentFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch("latent feature must have at least one channel".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("latent entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn channels(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }
}

/// `(age_basis, identity_basis)` with `age_basis >= 0` and a unit-norm
/// identity basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedFeature {
    age_basis: f64,
    identity_basis: Vec<f64>,
}

impl DecomposedFeature {
    /// Builds a decomposition from parts, checking both invariants.
    pub fn from_parts(age_basis: f64, identity_basis: Vec<f64>) -> Result<Self> {
        if !(age_basis >= 0.0 && age_basis.is_finite()) {
            return Err(Error::ShapeMismatch(format!("age basis {age_basis} must be finite and >= 0")));
        }
        let n = l2(&identity_basis);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::ShapeMismatch(format!("identity basis has norm {n}, expected 1")));
        }
        Ok(Self { age_basis, identity_basis })
    }

    pub fn age_basis(&self) -> f64 {
        self.age_basis
    }

    pub fn identity_basis(&self) -> &[f64] {
        &self.identity_basis
    }
}

fn l2(v: &[f64]) -> f64 {
    // scaled to stay accurate for very small and very large entries
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

/// Splits `z` into its L2 norm and direction.
pub fn decompose(z: &LatentFeature, epsilon: f64) -> Result<DecomposedFeature> {
    let norm = z.norm();
    if norm < epsilon {
        return Err(Error::DegenerateFeature { norm, epsilon });
    }
    let identity_basis = z.0.iter().map(|v| v / norm).collect();
    Ok(DecomposedFeature { age_basis: norm, identity_basis })
}

pub fn recompose(d: &DecomposedFeature) -> LatentFeature {
    LatentFeature(d.identity_basis.iter().map(|u| d.age_basis * u).collect())
}

/// Batched, differentiable decomposition used during training.
///
/// `z` is `[n, c]`. Returns `(age_basis [n, 1], identity_basis [n, c])`.
/// Norms are clamped to `epsilon` rather than rejected, so a collapsed row
/// yields a small but finite direction instead of aborting the step.
pub fn decompose_batch(z: &Tensor, epsilon: f64) -> (Tensor, Tensor) {
    let sq = z.square().sum_axes(&[1]);
    let norm = sq.clamp_min(epsilon * epsilon).sqrt();
    let direction = z.div(&norm);
    (norm, direction)
}
