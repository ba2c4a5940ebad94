//! Distillation losses on descriptor residuals.
//!
//! For a residual `e = ‖F − G‖` between a student row and its teacher row:
//!
//! ```text
//! L(e)  = α·e²        if e < δ
//!       = β·e + γ     otherwise,        γ = α·δ² − β·δ
//! L̃(e) = e^ε · L(e)                     (focal-weighted variant)
//! ```
//!
//! `γ` is derived so that both branches meet at `e = δ`. Beyond `δ` the slope is the constant
//! `β`, so points with a large regression error all contribute nearly the same loss.

use serde::{Deserialize, Serialize};

use crate::descriptors::{squared_distance, DescriptorSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    gamma: f64,
    pub epsilon: f64,
}

impl Default for LossParams {
    /// α = 8, β = 0.2, δ = 0.3 (so γ = 0.66) and ε = 15.
    fn default() -> Self {
        Self::new(8.0, 0.2, 0.3, 15.0).expect("default loss parameters are valid")
    }
}

impl LossParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, epsilon: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha, beta and delta must be positive (got {alpha}, {beta}, {delta})"
            )));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
        }
        Ok(Self {
            alpha,
            beta,
            delta,
            gamma: gamma_from_delta(alpha, beta, delta),
            epsilon,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Offset of the linear branch that makes the loss continuous at `delta`.
pub fn gamma_from_delta(alpha: f64, beta: f64, delta: f64) -> f64 {
    alpha * delta * delta - beta * delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Piecewise,
    Focal,
}

fn check_residual(e: f64) -> Result<()> {
    if e >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("residual must be non-negative, got {e}")))
    }
}

#[inline]
fn piecewise(e: f64, p: &LossParams) -> f64 {
    if e < p.delta {
        p.alpha * e * e
    } else {
        p.beta * e + p.gamma
    }
}

#[inline]
fn piecewise_slope(e: f64, p: &LossParams) -> f64 {
    if e < p.delta {
        2.0 * p.alpha * e
    } else {
        p.beta
    }
}

pub fn loss_scalar(e: f64, params: &LossParams) -> Result<f64> {
    check_residual(e)?;
    Ok(piecewise(e, params))
}

pub fn focal_loss_scalar(e: f64, params: &LossParams) -> Result<f64> {
    check_residual(e)?;
    Ok(e.powf(params.epsilon) * piecewise(e, params))
}

/// Loss value for either variant.
pub fn loss_value(e: f64, params: &LossParams, variant: LossVariant) -> Result<f64> {
    match variant {
        LossVariant::Piecewise => loss_scalar(e, params),
        LossVariant::Focal => focal_loss_scalar(e, params),
    }
}

/// Derivative of the loss with respect to the residual. Zero at `e ≤ 0`.
pub fn loss_gradient(e: f64, params: &LossParams, variant: LossVariant) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    match variant {
        LossVariant::Piecewise => piecewise_slope(e, params),
        LossVariant::Focal => {
            let eps = params.epsilon;
            eps * e.powf(eps - 1.0) * piecewise(e, params) + e.powf(eps) * piecewise_slope(e, params)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean: f64,
    pub per_point: Vec<f64>,
    pub residuals: Vec<f64>,
}

fn check_shapes(pred: &DescriptorSet, reference: &DescriptorSet) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(Error::DimMismatch {
            expected: reference.dim(),
            found: pred.dim(),
        });
    }
    if pred.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted rows for {} reference rows",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("batch loss over zero rows"));
    }
    Ok(())
}

/// Per-row Euclidean residuals, per-row losses and their mean (summed in row order).
pub fn batch_loss(
    pred: &DescriptorSet,
    reference: &DescriptorSet,
    params: &LossParams,
    variant: LossVariant,
) -> Result<BatchLoss> {
    check_shapes(pred, reference)?;
    let residuals: Vec<f64> = pred
        .rows()
        .zip(reference.rows())
        .map(|(a, b)| squared_distance(a, b).sqrt())
        .collect();
    let per_point = residuals
        .iter()
        .map(|&e| loss_value(e, params, variant))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(BatchLoss {
        mean,
        per_point,
        residuals,
    })
}

/// Gradient of the mean batch loss with respect to every entry of `pred`, row-major.
pub fn batch_loss_gradient(
    pred: &DescriptorSet,
    reference: &DescriptorSet,
    params: &LossParams,
    variant: LossVariant,
) -> Result<Vec<f64>> {
    check_shapes(pred, reference)?;
    let n = pred.len() as f64;
    let mut grad = Vec::with_capacity(pred.as_slice().len());
    for (a, b) in pred.rows().zip(reference.rows()) {
        let e = squared_distance(a, b).sqrt();
        let scale = if e > 0.0 {
            loss_gradient(e, params, variant) / (e * n)
        } else {
            0.0
        };
        grad.extend(a.iter().zip(b).map(|(x, y)| scale * (x - y)));
    }
    Ok(grad)
}
