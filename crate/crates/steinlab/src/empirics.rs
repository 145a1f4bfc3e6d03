//! Distribution-distance estimators and log-log rate regression shared by the
//! CLT and NCLT experiments. The KS statistic is the computable stand-in for
//! Kolmogorov-distance statements; total variation is never estimated from
//! samples here (the kernel-error rate covers that side).

use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub n_points: usize,
    pub theoretical_exponent: Option<f64>,
    pub pass_band: f64,
}

impl RateFit {
    pub fn with_theory(mut self, exponent: f64, pass_band: f64) -> Self {
        self.theoretical_exponent = Some(exponent);
        self.pass_band = pass_band;
        self
    }

    /// Whether the fitted slope lies within the pass band of the theoretical
    /// exponent; None when no exponent is attached.
    pub fn passes(&self) -> Option<bool> {
        self.theoretical_exponent
            .map(|t| (self.slope - t).abs() <= self.pass_band)
    }
}

/// Exact sup-distance between the empirical CDF of `sample` and `cdf`,
/// evaluated at the sorted sample points (both one-sided gaps per point).
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    Ok(d)
}

/// Two-sample sup-distance over the merged sample points.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("NaN in sample"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("NaN in sample"));
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        // advance past ties on both sides before measuring the gap
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// OLS of log(value) on log(N). Values must be positive; otherwise the
/// quantity has decayed into Monte Carlo noise and the caller must raise reps.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::GridTooSmall { need: 4, got: points.len() });
    }
    for &(n, v) in points {
        if !(v > 0.0) {
            return Err(Error::NonPositive { at: n, value: v });
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all grid points coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let slope_stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr,
        n_points: points.len(),
        theoretical_exponent: None,
        pass_band: f64::NAN,
    })
}
