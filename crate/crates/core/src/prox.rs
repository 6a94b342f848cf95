//! Proximal calculus for `g = ||.||_1` and its conjugate.
//!
//! The regularization weight is absorbed into the analysis operator, so `g`
//! itself carries no parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty applied to the analysis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxSpec {
    #[default]
    L1,
}

impl ProxSpec {
    /// `g(v)`.
    pub fn value(&self, v: &[f64]) -> f64 {
        match self {
            ProxSpec::L1 => v.iter().map(|x| x.abs()).sum(),
        }
    }
}

/// Soft-thresholding `sign(v) max(|v| - t, 0)`.
pub fn prox_l1(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    Ok(v.iter().map(|&x| soft_threshold(x, t)).collect())
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// `prox_{sigma g*}` for the l1 norm: projection onto the unit l-inf ball.
/// The result does not depend on `sigma`.
pub fn prox_conj_l1(v: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(v.iter().map(|&x| clip_unit(x)).collect())
}

#[inline]
pub fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

pub fn clip_unit_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = clip_unit(*x));
}

/// Whether the clip is locally the identity at `c`. At `|c| = 1` the
/// subdifferential is `[0, 1]`; we pick 0.
#[inline]
pub fn clip_passes(c: f64) -> bool {
    c.abs() < 1.0
}

/// Diagonal of the Jacobian of [`prox_conj_l1`] at `c`, as 0/1 entries.
pub fn prox_conj_l1_diag_jacobian(c: &[f64]) -> Vec<f64> {
    c.iter()
        .map(|&x| if clip_passes(x) { 1.0 } else { 0.0 })
        .collect()
}
