//! Local stand-alone adaptive filters: `ψ ← ψ + H uᵀ (d − u ψ)`.
//!
//! Both rules use a scalar learning matrix, so `H` is never formed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecops::{axpy, dot, sq_norm};

/// Regularization used by the NLMS rule unless overridden.
pub const DEFAULT_NLMS_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("dimension mismatch: estimate has {estimate} taps, regressor has {regressor}")]
    DimensionMismatch { estimate: usize, regressor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Lms,
    Nlms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRule {
    pub kind: RuleKind,
    pub mu: f64,
    /// Only used by NLMS.
    pub epsilon: f64,
}

impl LearningRule {
    pub fn lms(mu: f64) -> Self {
        Self {
            kind: RuleKind::Lms,
            mu,
            epsilon: 0.0,
        }
    }

    pub fn nlms(mu: f64) -> Self {
        Self {
            kind: RuleKind::Nlms,
            mu,
            epsilon: DEFAULT_NLMS_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Scalar learning gain for regressor `u`.
    #[inline]
    pub fn gain(&self, u: &[f64]) -> f64 {
        match self.kind {
            RuleKind::Lms => self.mu,
            RuleKind::Nlms => self.mu / (sq_norm(u) + self.epsilon),
        }
    }

    /// Mean stability of the stand-alone filter. `lambda_max` is the largest
    /// eigenvalue of the regressor covariance (ignored for NLMS).
    pub fn is_mean_stable(&self, lambda_max: f64) -> bool {
        match self.kind {
            RuleKind::Lms => self.mu > 0.0 && self.mu < 2.0 / lambda_max,
            RuleKind::Nlms => self.mu > 0.0 && self.mu < 2.0,
        }
    }

    /// One in-place update. Returns the a-priori error `d − u ψ`.
    #[inline]
    pub fn adapt(&self, psi: &mut [f64], u: &[f64], d: f64) -> Result<f64, FilterError> {
        if psi.len() != u.len() {
            return Err(FilterError::DimensionMismatch {
                estimate: psi.len(),
                regressor: u.len(),
            });
        }
        let err = d - dot(u, psi);
        axpy(self.gain(u) * err, u, psi);
        Ok(err)
    }
}
