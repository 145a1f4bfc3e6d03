//! Closed-form model constants and regime classification.
//!
//! For Hermite rank `q` and memory exponent `beta in (1/2, 1)` the partial
//! sums of `H_q(X_n)` are asymptotically normal when `q (2 beta - 1) > 1`
//! (CLT regime) and converge to a Hermite random variable when
//! `q (2 beta - 1) < 1` (NCLT regime). The boundary `q (2 beta - 1) = 1` is
//! rejected with a typed error.
//!
//! Constants:
//! - `c_beta = B(2 beta - 1, 1 - beta)`: the covariance asymptote
//!   `rho(m) ~ c_beta m^{1 - 2 beta}` for unit power-law weights.
//! - `zeta_2beta = sum_{i>=1} i^{-2 beta}`: squared norm of the ideal weights.
//! - `sigma^2 = (1/q!) sum_m rho(m)^q`: CLT variance (finite iff CLT regime).
//! - `d`, `h`: NCLT normalizers with the algebraic identity `d h q! = 1`.
//!   The second factor of `h^2` is `(-2 beta q + q + 2)`, matching the
//!   derivation through `int_0^1 (1-x) x^{-2 beta q + q} dx`; together with
//!   `d` this is what makes the identity hold exactly.

use crate::covariance::CovarianceTable;
use crate::error::{Error, Result};
use crate::numeric::special::ln_gamma;
use crate::numeric::sum::Compensated;
use crate::Estimate;
use serde::Serialize;

/// Model identity: Hermite rank, memory exponent, weight-normalization policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub q: u32,
    pub beta: f64,
    pub normalize_weights: bool,
}

impl ModelParams {
    /// Validated constructor; `normalize_weights` defaults to true.
    pub fn new(q: u32, beta: f64) -> Result<Self> {
        if q < 1 {
            return Err(Error::Domain(format!("q must be >= 1, got {q}")));
        }
        if !(beta > 0.5 && beta < 1.0) {
            return Err(Error::Domain(format!(
                "beta must lie in the open interval (1/2, 1), got {beta}"
            )));
        }
        Ok(ModelParams { q, beta, normalize_weights: true })
    }

    pub fn unnormalized(mut self) -> Self {
        self.normalize_weights = false;
        self
    }

    /// q (2 beta - 1), the quantity whose position relative to 1 decides the regime.
    pub fn regime_product(&self) -> f64 {
        self.q as f64 * (2.0 * self.beta - 1.0)
    }

    pub fn q_factorial(&self) -> f64 {
        (1..=self.q as u64).map(|k| k as f64).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Clt,
    Nclt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CltBranch {
    /// beta <= q/(2q-2): Kolmogorov-distance bound decays like N^{q/2 + 1/2 - q beta}.
    LowBeta,
    /// beta >= q/(2q-2): bound decays like N^{1/2 - beta}.
    HighBeta,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeInfo {
    pub regime: Regime,
    pub clt_exponent: Option<f64>,
    pub clt_branch: Option<CltBranch>,
    pub nclt_exponent: Option<f64>,
    /// 1/(2 beta - 1): the rank threshold separating the regimes.
    pub threshold_q_inverse: f64,
    /// q/(2q-2); absent when q = 1.
    pub branch_threshold: Option<f64>,
}

/// All closed-form constants for one parameter pair.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantSet {
    pub c_beta: f64,
    pub zeta_2beta: Estimate,
    /// `c_beta / zeta(2 beta)` under the normalized-weight policy, else `c_beta`.
    pub cov_constant: f64,
    pub sigma_sq: Option<Estimate>,
    pub d_q_beta: Option<f64>,
    pub h_q_beta: Option<f64>,
}

/// Euler beta function B(x, y) via log-gamma.
pub fn beta_fn(x: f64, y: f64) -> Result<f64> {
    if x <= 0.0 || y <= 0.0 {
        return Err(Error::Domain(format!("beta_fn needs positive arguments, got ({x}, {y})")));
    }
    Ok((ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp())
}

fn check_beta_range(beta: f64) -> Result<()> {
    if beta > 0.5 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta must lie in (1/2, 1), got {beta}")))
    }
}

/// `sum_{i>=1} i^{-2 beta}` by direct summation plus the Euler-Maclaurin tail.
///
/// The first 10^6 terms are accumulated with compensated summation; the tail
/// from `a = 10^6 + 1` is `a^{1-s}/(s-1) + a^{-s}/2 + s a^{-s-1}/12 - ...`
/// with `s = 2 beta`. The reported remainder bound covers the first dropped
/// Euler-Maclaurin term and is far below 1e-10 at this cutoff.
pub fn zeta_2beta(beta: f64) -> Result<Estimate> {
    check_beta_range(beta)?;
    let s = 2.0 * beta;
    const CUTOFF: u64 = 1_000_000;
    let mut acc = Compensated::new();
    for i in 1..=CUTOFF {
        acc.add((i as f64).powf(-s));
    }
    let a = (CUTOFF + 1) as f64;
    let tail = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s) + s * a.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * a.powf(-s - 3.0) / 720.0;
    let value = acc.value() + tail;
    let dropped = s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * a.powf(-s - 5.0) / 30240.0;
    let bound = dropped + 1e-15 * value;
    Ok(Estimate::with_bound(value, bound))
}

/// `c_beta = B(2 beta - 1, 1 - beta) = int_0^inf y^{-beta} (1+y)^{-beta} dy`.
pub fn c_beta(beta: f64) -> Result<f64> {
    check_beta_range(beta)?;
    beta_fn(2.0 * beta - 1.0, 1.0 - beta)
}

/// CLT variance `sigma^2 = rho(0)^q/q! + (2/q!) sum_{m>=1} rho(m)^q`, walked
/// over the table's stored lags until the ideal-model power-law majorant
/// certifies the dropped tail below `tol`. If the walk exhausts the stored
/// lags of the full truncated model (`m_max = M - 1`) the model tail is
/// exactly zero and only rounding remains.
pub fn sigma_qbeta(params: &ModelParams, cov: &CovarianceTable, tol: f64) -> Result<Estimate> {
    if params.regime_product() <= 1.0 {
        return Err(Error::Regime(format!(
            "sigma^2 diverges: q(2 beta - 1) = {} <= 1",
            params.regime_product()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }
    let q = params.q;
    let qf = params.q_factorial();
    let alpha = (1.0 - 2.0 * params.beta) * q as f64; // < -1 in this regime
    let cmaj = cov.asymptote_majorant()?;
    let mut acc = Compensated::new();
    acc.add(cov.rho(0)?.powi(q as i32) / qf);
    let mut bound = f64::INFINITY;
    let mut exhausted = true;
    for m in 1..=cov.m_max() {
        acc.add(2.0 * cov.rho(m)?.powi(q as i32) / qf);
        // tail over m' > m: rho(m') <= cmaj m'^{1-2 beta}, so
        // sum rho^q <= cmaj^q m^{alpha+1}/(-alpha-1)
        bound = 2.0 / qf * cmaj.powi(q as i32) * (m as f64).powf(alpha + 1.0) / (-alpha - 1.0);
        if bound <= tol {
            exhausted = false;
            break;
        }
    }
    if exhausted {
        if cov.covers_full_model() {
            bound = 1e-14 * acc.value().abs();
        } else if bound > tol {
            return Err(Error::Numeric(format!(
                "cannot certify sigma^2 remainder <= {tol} with m_max = {} (bound {bound:.3e}); \
                 extend the table",
                cov.m_max()
            )));
        }
    }
    let value = acc.value();
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Numeric(format!("sigma^2 came out non-finite or non-positive: {value}")));
    }
    Ok(Estimate::with_bound(value, bound))
}

fn nclt_factors(params: &ModelParams) -> Result<(f64, f64)> {
    let q = params.q as f64;
    let b = params.beta;
    let f1 = -2.0 * b * q + q + 1.0;
    let f2 = -2.0 * b * q + q + 2.0;
    if f1 <= 0.0 {
        return Err(Error::Regime(format!(
            "NCLT constants need q(2 beta - 1) < 1; got q = {}, beta = {}",
            params.q, b
        )));
    }
    Ok((f1, f2))
}

/// NCLT normalizer `d`: positive root of
/// `d^2 = (-2 beta q + q + 1)(-2 beta q + q + 2) / (2 q! c^q)`.
pub fn d_qbeta(params: &ModelParams, cov_constant: f64) -> Result<f64> {
    let (f1, f2) = nclt_factors(params)?;
    Ok((f1 * f2 / (2.0 * params.q_factorial() * cov_constant.powi(params.q as i32))).sqrt())
}

/// NCLT normalizer `h`: positive root of
/// `h^2 = 2 c^q / (q! (-2 beta q + q + 1)(-2 beta q + q + 2))`.
pub fn h_qbeta(params: &ModelParams, cov_constant: f64) -> Result<f64> {
    let (f1, f2) = nclt_factors(params)?;
    Ok((2.0 * cov_constant.powi(params.q as i32) / (params.q_factorial() * f1 * f2)).sqrt())
}

/// Regime classification with the rate exponents of both limit theorems.
pub fn classify_regime(params: &ModelParams) -> Result<RegimeInfo> {
    let q = params.q as f64;
    let b = params.beta;
    let prod = params.regime_product();
    if prod == 1.0 {
        return Err(Error::Boundary { q: params.q, beta: b });
    }
    let threshold_q_inverse = 1.0 / (2.0 * b - 1.0);
    let branch_threshold = if params.q >= 2 { Some(q / (2.0 * q - 2.0)) } else { None };
    if prod > 1.0 {
        let low = q / 2.0 + 0.5 - q * b;
        let high = 0.5 - b;
        let branch = match branch_threshold {
            Some(t) if b < t => CltBranch::LowBeta,
            Some(t) if b > t => CltBranch::HighBeta,
            // the exponents coincide at the threshold
            Some(_) => CltBranch::LowBeta,
            None => CltBranch::HighBeta, // unreachable: q = 1 can't be CLT
        };
        Ok(RegimeInfo {
            regime: Regime::Clt,
            clt_exponent: Some(low.max(high)),
            clt_branch: Some(branch),
            nclt_exponent: None,
            threshold_q_inverse,
            branch_threshold,
        })
    } else {
        Ok(RegimeInfo {
            regime: Regime::Nclt,
            clt_exponent: None,
            clt_branch: None,
            nclt_exponent: Some(2.0 * b * q - q - 1.0),
            threshold_q_inverse,
            branch_threshold,
        })
    }
}

/// Assemble every constant the regime admits.
pub fn constant_set(
    params: &ModelParams,
    cov: &CovarianceTable,
    tol: f64,
) -> Result<ConstantSet> {
    let info = classify_regime(params)?;
    let cb = c_beta(params.beta)?;
    let zeta = zeta_2beta(params.beta)?;
    let cov_constant = if params.normalize_weights { cb / zeta.value } else { cb };
    let (sigma_sq, d, h) = match info.regime {
        Regime::Clt => (Some(sigma_qbeta(params, cov, tol)?), None, None),
        Regime::Nclt => (
            None,
            Some(d_qbeta(params, cov_constant)?),
            Some(h_qbeta(params, cov_constant)?),
        ),
    };
    Ok(ConstantSet { c_beta: cb, zeta_2beta: zeta, cov_constant, sigma_sq, d_q_beta: d, h_q_beta: h })
}

/// Deterministic grid of 20 NCLT parameter pairs used by identity tests.
pub fn nclt_test_grid() -> Vec<ModelParams> {
    let mut out = Vec::new();
    for q in 1..=5u32 {
        // NCLT needs beta < (1/q + 1)/2; spread four betas strictly inside
        let hi = (1.0 / q as f64 + 1.0) / 2.0;
        for k in 1..=4 {
            let beta = 0.5 + (hi - 0.5) * k as f64 / 5.0;
            out.push(ModelParams { q, beta, normalize_weights: true });
        }
    }
    out
}
