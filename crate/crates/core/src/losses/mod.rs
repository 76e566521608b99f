//! Potential-domain losses and the probability-domain baselines.
//!
//! Every loss returns a [`LossValue`] holding the scalar and its analytic
//! gradient with respect to the *predicted* input (potential field for the
//! point and line losses, probability field for cross-entropy and dice).
//! Summation is sequential in raster order so results are reproducible.

mod ce;
mod dice;
mod line;
mod objective;
mod point;

pub use ce::{cross_entropy_loss, PROB_CLAMP};
pub use dice::dice_loss;
pub use line::{
    build_line_regions, equipotential_line_loss, line_loss_terms, LineRegionSlice, LineRegions,
    LineTerm, EMPTY_LEVEL_EPS,
};
pub use objective::{ground_truth_energy, training_objective, LossBreakdown};
pub use point::point_loss;

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Reduction {
    /// Sum over classes and pixels, averaged over directions.
    Sum,
    /// As `Sum`, further divided by `K * H * W`.
    Mean,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    pub norm: Norm,
    pub reduction: Reduction,
    /// Exponential activation factor; must be even.
    pub mu_exp: u32,
    /// Weight of the point loss.
    pub lambda1: f64,
    /// Weight of the equipotential line loss.
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            reduction: Reduction::Mean,
            mu_exp: 10,
            lambda1: 0.1,
            lambda2: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        validate_mu(self.mu_exp)?;
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::InvalidConfig("lambda1 must be finite and nonnegative"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::InvalidConfig("lambda2 must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Whether any potential-domain term contributes to the total.
    pub fn uses_potential_terms(&self) -> bool {
        self.lambda1 > 0.0 || self.lambda2 > 0.0
    }
}

/// The exponent must be even and positive.
pub fn validate_mu(mu: u32) -> Result<()> {
    if mu < 2 || mu % 2 != 0 {
        return Err(Error::InvalidExponent(mu));
    }
    Ok(())
}

/// Scalar loss plus optional gradient shaped like the predicted input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

impl LossValue {
    pub fn new(value: f64, gradient: Vec<f64>) -> Self {
        Self {
            value,
            gradient: Some(gradient),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            value,
            gradient: None,
        }
    }
}

/// `ce + lambda1 * point + lambda2 * line`.
///
/// All three gradients must live in the same space (the point and line
/// gradients already pulled back through the conversion adjoint). The result
/// carries a gradient only when every component has one.
pub fn combine_losses(
    ce: &LossValue,
    point: &LossValue,
    line: &LossValue,
    cfg: &LossConfig,
) -> Result<LossValue> {
    let value = ce.value + cfg.lambda1 * point.value + cfg.lambda2 * line.value;
    if !value.is_finite() {
        return Err(Error::NonFinite("combined loss"));
    }
    let gradient = match (&ce.gradient, &point.gradient, &line.gradient) {
        (Some(g0), Some(g1), Some(g2)) => {
            if g0.len() != g1.len() || g0.len() != g2.len() {
                return Err(Error::InvalidShape("component gradients differ in length"));
            }
            Some(
                g0.iter()
                    .zip(g1)
                    .zip(g2)
                    .map(|((a, b), c)| a + cfg.lambda1 * b + cfg.lambda2 * c)
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(LossValue { value, gradient })
}
