//! Numerical laboratory for long-memory moving averages.
//!
//! The model is the stationary Gaussian sequence
//! `X_n = sum_{i=1..M} a_i eps_{n-i}` with power-law weights `a_i ~ i^{-beta}`,
//! `beta in (1/2, 1)`, and i.i.d. standard normal innovations. Partial sums of
//! Hermite functionals `H_q(X_n)` obey a central limit theorem when
//! `q(2*beta - 1) > 1` and a non-central (Hermite) limit theorem when
//! `q(2*beta - 1) < 1`. This crate computes the closed-form constants of both
//! regimes, simulates the model reproducibly, and measures the convergence
//! rates with deterministic series, Gaussian quadratic-form identities, and
//! parallel Monte Carlo.
//!
//! Module map:
//! - [`constants`]: special functions and model constants (`c_beta`, `zeta`,
//!   `sigma`, `d`, `h`) with regime classification.
//! - [`covariance`]: truncated-model autocovariance tables and power-sum bounds.
//! - [`hermite`]: Hermite polynomials in both normalizations.
//! - [`paths`]: seeded path simulation, partial sums, and both normalizations.
//! - [`stein`]: the Malliavin-Stein bound statistic `T = q^{-1} ||D Z_N||^2`,
//!   its exact moments, and an exact Wick oracle for `q = 2`.
//! - [`nclt`]: deterministic kernel-convergence quantities of the non-central
//!   regime and a surrogate sampler for the Hermite law.
//! - [`empirics`]: Kolmogorov-Smirnov statistics and log-log rate fits.
//! - [`spitzer`]: Spitzer and Hsu-Robbins series under the limiting law.
//! - [`cli`]: experiment runner with caching and CSV/JSON emission.

pub mod cli;
pub mod constants;
pub mod covariance;
pub mod empirics;
pub mod error;
pub mod hermite;
pub mod nclt;
pub mod numeric;
pub mod paths;
pub mod spitzer;
pub mod stein;

pub use error::{Error, Result};

/// A scalar estimate with an attached uncertainty: a Monte Carlo standard
/// error or a rigorous remainder bound for deterministic series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Uncertainty {
    /// Monte Carlo standard error of the mean.
    StdErr(f64),
    /// Certified bound on the neglected remainder of a deterministic series.
    Bound(f64),
}

impl Estimate {
    pub fn with_stderr(value: f64, stderr: f64) -> Self {
        Estimate { value, uncertainty: Uncertainty::StdErr(stderr) }
    }

    pub fn with_bound(value: f64, bound: f64) -> Self {
        Estimate { value, uncertainty: Uncertainty::Bound(bound) }
    }

    /// The attached standard error or bound, whichever is present.
    pub fn spread(&self) -> f64 {
        match self.uncertainty {
            Uncertainty::StdErr(s) => s,
            Uncertainty::Bound(b) => b,
        }
    }
}
