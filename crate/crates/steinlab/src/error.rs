//! Crate-wide error type. Variants mirror the failure classes of the public
//! operations so callers (and the CLI exit-code map) can match on them.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation needs the other convergence regime.
    #[error("regime error: {0}")]
    Regime(String),

    /// `q (2 beta - 1) = 1`: neither limit theorem applies.
    #[error("boundary error: q(2 beta - 1) = 1 (q = {q}, beta = {beta})")]
    Boundary { q: u32, beta: f64 },

    #[error("lag {m} out of range (m_max = {m_max})")]
    LagRange { m: usize, m_max: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Required truncation exceeds the configured memory cap.
    #[error("truncation overflow: would need M = {needed:.3e} > cap {cap}; relax delta_sq")]
    TruncationOverflow { needed: f64, cap: usize },

    #[error("cost guard: {0}")]
    CostGuard(String),

    #[error("empty sample")]
    EmptySample,

    #[error("need at least {need} grid points, got {got}")]
    GridTooSmall { need: usize, got: usize },

    /// The quantity to be fit has decayed into noise or is invalid on a log scale.
    #[error("non-positive value {value} at grid point {at}; raise reps")]
    NonPositive { at: f64, value: f64 },

    #[error("surrogate sample too small: {got} < {need}")]
    SurrogateTooSmall { got: usize, need: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
