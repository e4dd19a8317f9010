use thiserror::Error;

/// Errors produced by the model, reductions, and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("hazard undefined at age {age}: survival underflows to zero")]
    HazardUndefined { age: f64 },

    #[error("Laplace transform diverges at Re(s) = {re}; requires Re(s) > {bound}")]
    DivergentTransform { re: f64, bound: f64 },

    #[error("moment-matched hypoexponential chain requires shape j > 1, got {shape}")]
    UnsupportedShape { shape: f64 },

    #[error("no real root of the Euler-Lotka equation: {0}")]
    NoRoot(String),

    #[error("no Hopf crossing in {param} over [{lo}, {hi}]")]
    NoCrossing {
        param: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("step budget exhausted at t = {t} after {steps} steps")]
    StepBudget { t: f64, steps: usize },

    #[error("Newton iteration failed after {iterations} iterations (residual {residual:e})")]
    NoEquilibrium { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{switches} stability switches in [{lo}, {hi}]; use a finer bracket")]
    AmbiguousBracket { lo: f64, hi: f64, switches: usize },

    #[error("eigenvalue computation did not converge")]
    Eigen,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Checks `value > 0` and finite.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(invalid(name, format!("must be positive and finite, got {value}")))
    }
}

pub(crate) fn require_nonnegative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(invalid(name, format!("must be non-negative and finite, got {value}")))
    }
}
