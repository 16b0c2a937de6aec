use thiserror::Error;

/// Errors raised across the detection, state and tomography modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KkError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("signals live on different grids")]
    GridMismatch,

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mode is not single-sideband (negative-frequency energy fraction {fraction:.3e} > {tol:.1e})")]
    NotSingleSideband { fraction: f64, tol: f64 },

    #[error("minimum-phase condition violated: margin {margin:.4e} (required {required:.4e})")]
    MinimumPhase { margin: f64, required: f64 },

    #[error("local oscillator too weak: {counts:.1} expected counts per bin (need >= {required:.0})")]
    WeakLocalOscillator { counts: f64, required: f64 },

    #[error("phase undefined: |S| = {0:.3e}")]
    PhaseUndefined(f64),

    #[error("series does not converge: {0}")]
    NonConvergent(String),

    #[error("integer overflow computing {0}")]
    Overflow(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, KkError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> KkError {
    KkError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
