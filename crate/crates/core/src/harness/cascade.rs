//! Error-cascade analysis: how state-prediction errors propagate into a
//! downstream action through the sensitivities of the action function.
//!
//! `delta_action = sum_i dF/dX_i * delta_X_i`. Sensitivities are always
//! estimated with central finite differences; for the built-in analytic
//! function kinds the exact derivatives are computed as well and used for
//! the propagated error, with the finite-difference estimates kept
//! alongside for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Named analytic action functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionFunction {
    /// `F(x) = sum_i coefficients_i x_i + intercept`.
    Linear {
        coefficients: Vec<f64>,
        intercept: f64,
    },
    /// `F(x) = sum_i quadratic_i x_i^2 + linear_i x_i + intercept`
    /// (diagonal quadratic).
    Quadratic {
        quadratic: Vec<f64>,
        linear: Vec<f64>,
        intercept: f64,
    },
}

impl ActionFunction {
    pub fn dim(&self) -> usize {
        match self {
            ActionFunction::Linear { coefficients, .. } => coefficients.len(),
            ActionFunction::Quadratic { quadratic, .. } => quadratic.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ActionFunction::Quadratic {
            quadratic, linear, ..
        } = self
        {
            if quadratic.len() != linear.len() {
                return Err(Error::Config(
                    "quadratic and linear coefficient lengths differ".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state has dimension {}, function expects {}",
                x.len(),
                self.dim()
            )));
        }
        let value = match self {
            ActionFunction::Linear {
                coefficients,
                intercept,
            } => {
                coefficients
                    .iter()
                    .zip(x)
                    .map(|(c, xi)| c * xi)
                    .sum::<f64>()
                    + intercept
            }
            ActionFunction::Quadratic {
                quadratic,
                linear,
                intercept,
            } => {
                quadratic
                    .iter()
                    .zip(linear)
                    .zip(x)
                    .map(|((q, l), xi)| q * xi * xi + l * xi)
                    .sum::<f64>()
                    + intercept
            }
        };
        if !value.is_finite() {
            return Err(Error::InvalidInput(
                "action function evaluated to a non-finite value".into(),
            ));
        }
        Ok(value)
    }

    /// Exact partial derivatives at `x`.
    pub fn analytic_sensitivities(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(Error::Shape("state dimension mismatch".into()));
        }
        Ok(match self {
            ActionFunction::Linear { coefficients, .. } => coefficients.clone(),
            ActionFunction::Quadratic {
                quadratic, linear, ..
            } => quadratic
                .iter()
                .zip(linear)
                .zip(x)
                .map(|((q, l), xi)| 2.0 * q * xi + l)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeAnalysis {
    pub function: ActionFunction,
    pub state: Vector,
    pub state_errors: Vector,
    /// Sensitivities used for the propagated error (analytic).
    pub sensitivities: Vector,
    /// Central finite-difference estimates, kept for comparison.
    pub fd_sensitivities: Vector,
    pub fd_step: f64,
    /// `sum_i sensitivities_i * state_errors_i`.
    pub delta_action: f64,
    /// Action value at the unperturbed state.
    pub action: f64,
}

/// Propagate per-state prediction errors into the action.
pub fn error_cascade(
    function: &ActionFunction,
    state: &[f64],
    state_errors: &[f64],
    fd_step: f64,
) -> Result<CascadeAnalysis> {
    function.validate()?;
    if state.len() != state_errors.len() {
        return Err(Error::Shape(format!(
            "state has dimension {}, errors have {}",
            state.len(),
            state_errors.len()
        )));
    }
    if fd_step <= 0.0 || !fd_step.is_finite() {
        return Err(Error::InvalidParameter("fd_step must be positive".into()));
    }
    let action = function.evaluate(state)?;
    let mut fd_sensitivities = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let mut plus = state.to_vec();
        plus[i] += fd_step;
        let mut minus = state.to_vec();
        minus[i] -= fd_step;
        fd_sensitivities
            .push((function.evaluate(&plus)? - function.evaluate(&minus)?) / (2.0 * fd_step));
    }
    let sensitivities = function.analytic_sensitivities(state)?;
    let delta_action = sensitivities
        .iter()
        .zip(state_errors)
        .map(|(s, e)| s * e)
        .sum();
    Ok(CascadeAnalysis {
        function: function.clone(),
        state: state.to_vec(),
        state_errors: state_errors.to_vec(),
        sensitivities,
        fd_sensitivities,
        fd_step,
        delta_action,
        action,
    })
}
