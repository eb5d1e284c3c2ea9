//! The sigmoid supervisor shared by U-sup and adaptive diffusion.

use serde::{Deserialize, Serialize};

use super::{NodeState, ProtocolError};

/// Cyclic feedback period `L`. Transfers fire at `i = rL`, `r ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PeriodRepr", into = "PeriodRepr")]
pub enum FeedbackPeriod {
    Every(u64),
    Never,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PeriodRepr {
    Count(u64),
    Text(String),
}

impl TryFrom<PeriodRepr> for FeedbackPeriod {
    type Error = String;

    fn try_from(repr: PeriodRepr) -> Result<Self, Self::Error> {
        match repr {
            PeriodRepr::Count(0) => Err("feedback period must be at least 1".into()),
            PeriodRepr::Count(l) => Ok(FeedbackPeriod::Every(l)),
            PeriodRepr::Text(s) => s.parse(),
        }
    }
}

impl From<FeedbackPeriod> for PeriodRepr {
    fn from(period: FeedbackPeriod) -> Self {
        match period {
            FeedbackPeriod::Every(l) => PeriodRepr::Count(l),
            FeedbackPeriod::Never => PeriodRepr::Text("inf".into()),
        }
    }
}

impl std::str::FromStr for FeedbackPeriod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "never" | "∞" => Ok(FeedbackPeriod::Never),
            other => match other.parse::<u64>() {
                Ok(0) | Err(_) => Err(format!(
                    "feedback period must be a positive integer or 'inf', got '{s}'"
                )),
                Ok(l) => Ok(FeedbackPeriod::Every(l)),
            },
        }
    }
}

impl std::fmt::Display for FeedbackPeriod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeedbackPeriod::Every(l) => write!(f, "{l}"),
            FeedbackPeriod::Never => f.write_str("inf"),
        }
    }
}

impl FeedbackPeriod {
    #[inline]
    pub fn is_transfer(self, i: usize) -> bool {
        match self {
            FeedbackPeriod::Every(l) => i > 0 && (i as u64) % l == 0,
            FeedbackPeriod::Never => false,
        }
    }
}

/// Supervisor hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct USupParams {
    pub mu_a: f64,
    pub nu: f64,
    pub epsilon_p: f64,
    pub a_plus: f64,
    #[serde(rename = "L")]
    pub feedback: FeedbackPeriod,
    /// Fixes `λ̌` (and `λ`) at this value and freezes the mixing variable.
    /// Used for ablations and degenerate-limit checks.
    pub pin_lambda: Option<f64>,
}

impl Default for USupParams {
    fn default() -> Self {
        Self {
            mu_a: 0.005,
            nu: 0.9,
            epsilon_p: 0.01,
            a_plus: 4.0,
            feedback: FeedbackPeriod::Every(800),
            pin_lambda: None,
        }
    }
}

impl USupParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |what: &str| Err(ProtocolError::InvalidParameter(what.to_string()));
        if !(self.mu_a >= 0.0 && self.mu_a.is_finite()) {
            return bad("mu_a must be nonnegative");
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return bad("nu must lie in (0, 1)");
        }
        if !(self.epsilon_p > 0.0) {
            return bad("epsilon_p must be positive");
        }
        if !(self.a_plus > 0.0 && self.a_plus.is_finite()) {
            return bad("a_plus must be positive and finite");
        }
        if let Some(pin) = self.pin_lambda {
            if !(0.0..=1.0).contains(&pin) {
                return bad("pin_lambda must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Range of `λ = sigmoid(a)` for `a ∈ [−a₊, a₊]`.
    pub fn lambda_range(&self) -> (f64, f64) {
        (sigmoid(-self.a_plus), sigmoid(self.a_plus))
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// `λ̌`: 0 or 1 when `a` sits on a bound, else `λ`.
#[inline]
pub fn truncated_lambda(a: f64, lambda: f64, a_plus: f64) -> f64 {
    if a <= -a_plus {
        0.0
    } else if a >= a_plus {
        1.0
    } else {
        lambda
    }
}

/// `out = λ ψ + (1 − λ) φ`; exact copies at the endpoints.
#[inline]
pub(crate) fn mix(lambda: f64, psi: &[f64], phi: &[f64], out: &mut [f64]) {
    if lambda == 1.0 {
        out.copy_from_slice(psi);
    } else if lambda == 0.0 {
        out.copy_from_slice(phi);
    } else {
        let rest = 1.0 - lambda;
        for ((o, p), f) in out.iter_mut().zip(psi).zip(phi) {
            *o = lambda * p + rest * f;
        }
    }
}

/// Power-normalized gradient step on `a`: `y = u(ψ − φ)`, `e` the output error.
#[inline]
pub(crate) fn update_mixing(state: &mut NodeState, params: &USupParams, y: f64, e: f64) {
    state.p = params.nu * state.p + (1.0 - params.nu) * y * y;
    let step = params.mu_a / (state.p + params.epsilon_p);
    let lambda = state.lambda;
    let a = state.a + step * y * e * lambda * (1.0 - lambda);
    state.a = a.clamp(-params.a_plus, params.a_plus);
}
