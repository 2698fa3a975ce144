//! Error type shared by every module of the crate.
//!
//! The variants mirror the ways a computation can fail: inputs outside a
//! function's domain, a market model violating one of the standing
//! assumptions, quadrature that diverges or stalls, and simulation blow-ups.
//! Scalar payloads are widened to `f64` so the error type stays non-generic.

use thiserror::Error;

/// Standing assumptions on a market model checked by validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Assumption {
    /// UE: the variance profile is bounded away from zero on [0, 1].
    UniformEllipticity,
    /// E1: the cumulative growth surplus of the bottom u-fraction stays
    /// positive on (0, 1), so low ranks outgrow the market on average.
    StabilityMargin,
    /// E2: the equilibrium quantile function is integrable, i.e. the margin
    /// does not vanish too fast at the endpoints.
    QuantileIntegrability,
    /// H: the initial law has finite exponential moments of every order.
    ExponentialMoments,
    /// Discrete analogue of E1 for a finite particle count.
    DiscreteStability,
}

impl Assumption {
    /// Short label used in validation reports.
    pub fn label(self) -> &'static str {
        match self {
            Assumption::UniformEllipticity => "UE",
            Assumption::StabilityMargin => "E1",
            Assumption::QuantileIntegrability => "E2",
            Assumption::ExponentialMoments => "H",
            Assumption::DiscreteStability => "STAB",
        }
    }
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("input {value} outside {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("assumption {assumption} violated at u = {witness_u}: {detail}")]
    Validation {
        assumption: Assumption,
        witness_u: f64,
        detail: String,
    },

    #[error("integral diverged (estimate {estimate:.3e} kept growing past the blow-up threshold)")]
    Divergence { estimate: f64 },

    #[error(
        "quadrature stalled after {subdivisions} subdivisions \
         (estimate {estimate:.9e}, error bound {error:.3e})"
    )]
    ToleranceNotMet {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("phase precondition failed: {0}")]
    Phase(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("numerical blow-up at t = {t}: particle {index} reached {value:.3e}")]
    Blowup { t: f64, index: usize, value: f64 },

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
