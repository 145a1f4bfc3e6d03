//! The Malliavin-Stein bound statistic for the CLT regime.
//!
//! For `Z_N = S_N / (sigma sqrt(N))` on the q-th chaos, the distance to the
//! standard normal is bounded by `c * sqrt(E[(1 - T)^2])` with
//! `T = q^{-1} ||D Z_N||^2`, where c depends on the probability metric.
//! Expanding the Malliavin derivative gives the computable Toeplitz form
//!
//! `T = (q / (sigma^2 N (q!)^2)) * sum_{k,l} He_{q-1}(X_k) He_{q-1}(X_l) rho(k-l)`.
//!
//! The `(q!)^{-2}` factor carries the partial sum's own 1/q! through the
//! derivative; with it `E[T] -> 1`, which is what makes the bound vanish.
//! `stein_t_uncorrected` exposes the variant without that factor (off by
//! exactly `(q!)^2`) for documenting the normalization gap.
//!
//! For q = 2 the statistic is a Gaussian quadratic form `x' C x` with
//! `C = R / (2 sigma^2 N)`, so `E[T] = tr(CR)` and `Var T = 2 tr(CRCR)` are
//! exact; a four-index Wick enumeration cross-checks the traces in tests.

use crate::constants::{classify_regime, ModelParams, Regime};
use crate::covariance::CovarianceTable;
use crate::empirics::{fit_rate, RateFit};
use crate::error::{Error, Result};
use crate::hermite::hermite_prob;
use crate::numeric::fft::{toeplitz_quadform_direct, ToeplitzOperator};
use crate::paths::{PathBatch, PathSimulator};
use crate::Estimate;
use rayon::prelude::*;
use serde::Serialize;

/// Probability metrics served by the same bound, differing only in c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DistanceKind {
    Kolmogorov,
    Wasserstein,
    TotalVariation,
    FortetMourier,
}

impl DistanceKind {
    pub fn stein_constant(&self) -> f64 {
        match self {
            DistanceKind::Kolmogorov | DistanceKind::Wasserstein => 1.0,
            DistanceKind::TotalVariation => 2.0,
            DistanceKind::FortetMourier => 4.0,
        }
    }

    pub fn all() -> [DistanceKind; 4] {
        [
            DistanceKind::Kolmogorov,
            DistanceKind::Wasserstein,
            DistanceKind::TotalVariation,
            DistanceKind::FortetMourier,
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteinEstimate {
    pub n: usize,
    pub reps: u64,
    pub mean_t: Estimate,
    /// Monte Carlo estimate of E[(1 - T)^2].
    pub msq: Estimate,
}

impl SteinEstimate {
    /// `c * sqrt(msq)` for the requested metric.
    pub fn bound(&self, kind: DistanceKind) -> f64 {
        kind.stein_constant() * self.msq.value.sqrt()
    }
}

/// Direct evaluation is used up to this N; larger forms go through the
/// circulant-embedded FFT.
const DIRECT_QUADFORM_LIMIT: usize = 2048;

fn check_cov_batch(cov: &CovarianceTable, n: usize, batch_m: usize) -> Result<()> {
    if cov.trunc_m() != batch_m {
        return Err(Error::Dimension(format!(
            "covariance table built on M = {}, batch used M = {}",
            cov.trunc_m(),
            batch_m
        )));
    }
    if cov.m_max() + 1 < n {
        return Err(Error::Dimension(format!(
            "need rho lags 0..{} but table stops at {}",
            n - 1,
            cov.m_max()
        )));
    }
    Ok(())
}

fn quadform_scale(params: &ModelParams, sigma_sq: f64, n: usize) -> f64 {
    let qf = params.q_factorial();
    params.q as f64 / (sigma_sq * n as f64 * qf * qf)
}

fn stein_t_inner(
    params: &ModelParams,
    cov: &CovarianceTable,
    x: &[f64],
    sigma_sq: f64,
    op: Option<&ToeplitzOperator>,
) -> f64 {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| hermite_prob(params.q - 1, v)).collect();
    let quad = match op {
        Some(op) => op.quadform(&h),
        None => toeplitz_quadform_direct(&cov.rho_slice()[..n], &h),
    };
    quadform_scale(params, sigma_sq, n) * quad
}

/// Per-path Stein statistic `T = q^{-1} ||D Z_N||^2`.
///
/// `cov` must be built from the same weights as `batch`; `sigma_sq` is the
/// caller's normalization constant (use the table-consistent variance so that
/// E[T] -> 1).
pub fn stein_t(
    params: &ModelParams,
    cov: &CovarianceTable,
    batch: &PathBatch,
    sigma_sq: f64,
) -> Result<f64> {
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(Error::Domain(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    let n = batch.x.len();
    check_cov_batch(cov, n, batch.config.m)?;
    let op = (n > DIRECT_QUADFORM_LIMIT).then(|| ToeplitzOperator::new(&cov.rho_slice()[..n]));
    Ok(stein_t_inner(params, cov, &batch.x, sigma_sq, op.as_ref()))
}

/// The variant that drops the partial sum's 1/q! from the derivative, i.e.
/// exactly `(q!)^2 * stein_t`. Kept for documenting the normalization gap;
/// its expectation tends to `(q!)^2`, not 1.
pub fn stein_t_uncorrected(
    params: &ModelParams,
    cov: &CovarianceTable,
    batch: &PathBatch,
    sigma_sq: f64,
) -> Result<f64> {
    let qf = params.q_factorial();
    Ok(stein_t(params, cov, batch, sigma_sq)? * qf * qf)
}

/// Exact `E[T] = (N rho(0)^q + 2 sum_{m<N} (N-m) rho(m)^q) / (sigma^2 N q!)`.
pub fn mean_t_exact(
    params: &ModelParams,
    cov: &CovarianceTable,
    sigma_sq: f64,
    n: usize,
) -> Result<f64> {
    let info = classify_regime(params)?;
    if info.regime != Regime::Clt {
        return Err(Error::Regime("mean_t_exact needs the CLT regime".into()));
    }
    if cov.m_max() + 1 < n {
        return Err(Error::Dimension(format!(
            "need rho lags 0..{} but table stops at {}",
            n - 1,
            cov.m_max()
        )));
    }
    let q = params.q as i32;
    let mut acc = (n as f64) * cov.rho(0)?.powi(q);
    for m in 1..n {
        acc += 2.0 * (n - m) as f64 * cov.rho(m)?.powi(q);
    }
    Ok(acc / (sigma_sq * n as f64 * params.q_factorial()))
}

/// Monte Carlo estimate of E[(1 - T)^2] over independent replicate streams.
/// Replicates are evaluated in parallel and reduced in ascending replicate
/// order, so the result does not depend on the thread count.
pub fn stein_msq_mc(
    params: &ModelParams,
    cov: &CovarianceTable,
    sigma_sq: f64,
    n: usize,
    reps: u64,
    master_seed: u64,
) -> Result<SteinEstimate> {
    let info = classify_regime(params)?;
    if info.regime != Regime::Clt {
        return Err(Error::Regime("stein_msq_mc needs the CLT regime".into()));
    }
    if reps < 2 {
        return Err(Error::Domain("need reps >= 2".into()));
    }
    check_cov_batch(cov, n, cov.trunc_m())?;
    let sim = PathSimulator::new(params, n, cov.weights().to_vec())?;
    let op = (n > DIRECT_QUADFORM_LIMIT).then(|| ToeplitzOperator::new(&cov.rho_slice()[..n]));
    let per_rep: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let batch = sim.simulate(master_seed, r);
            let t = stein_t_inner(params, cov, &batch.x, sigma_sq, op.as_ref());
            (t, (1.0 - t) * (1.0 - t))
        })
        .collect();
    Ok(reduce_estimates(n, &per_rep))
}

fn reduce_estimates(n: usize, per_rep: &[(f64, f64)]) -> SteinEstimate {
    let reps = per_rep.len() as f64;
    let (mut st, mut sm) = (0.0, 0.0);
    for &(t, m) in per_rep {
        st += t;
        sm += m;
    }
    let (mt, mm) = (st / reps, sm / reps);
    let (mut vt, mut vm) = (0.0, 0.0);
    for &(t, m) in per_rep {
        vt += (t - mt) * (t - mt);
        vm += (m - mm) * (m - mm);
    }
    let se_t = (vt / (reps - 1.0) / reps).sqrt();
    let se_m = (vm / (reps - 1.0) / reps).sqrt();
    SteinEstimate {
        n,
        reps: per_rep.len() as u64,
        mean_t: Estimate::with_stderr(mt, se_t),
        msq: Estimate::with_stderr(mm, se_m),
    }
}

/// Exact E[(1 - T)^2] for q = 2 through Gaussian quadratic-form traces:
/// `(1 - tr(CR))^2 + 2 tr(CRCR)` with `C = R / (2 sigma^2 N)`. Dense O(N^3)
/// products; guarded at N <= 512.
pub fn stein_exact_q2(cov: &CovarianceTable, sigma_sq: f64, n: usize) -> Result<f64> {
    let (mean, var) = stein_exact_q2_parts(cov, sigma_sq, n)?;
    Ok((1.0 - mean) * (1.0 - mean) + var)
}

/// (E[T], Var T) for the q = 2 quadratic form.
pub fn stein_exact_q2_parts(cov: &CovarianceTable, sigma_sq: f64, n: usize) -> Result<(f64, f64)> {
    if n > 512 {
        return Err(Error::CostGuard(format!("stein_exact_q2 is O(N^3); N = {n} > 512")));
    }
    if cov.m_max() + 1 < n {
        return Err(Error::Dimension(format!(
            "need rho lags 0..{} but table stops at {}",
            n - 1,
            cov.m_max()
        )));
    }
    let rho = cov.rho_slice();
    let scale = 1.0 / (2.0 * sigma_sq * n as f64);
    // tr(CR) = scale * ||R||_F^2
    let mut fro2 = 0.0;
    for k in 0..n {
        for l in 0..n {
            let r = rho[k.abs_diff(l)];
            fro2 += r * r;
        }
    }
    let mean = scale * fro2;
    // tr((CR)^2) = scale^2 * ||R R||_F^2
    let mut b = vec![0.0f64; n * n];
    for k in 0..n {
        for l in 0..=k {
            let mut acc = 0.0;
            for j in 0..n {
                acc += rho[k.abs_diff(j)] * rho[j.abs_diff(l)];
            }
            b[k * n + l] = acc;
            b[l * n + k] = acc;
        }
    }
    let b_fro2: f64 = b.iter().map(|v| v * v).sum();
    let var = 2.0 * scale * scale * b_fro2;
    Ok((mean, var))
}

/// Four-index Wick enumeration of E[(1 - T)^2] for q = 2: every pairing of
/// `x_i x_j x_k x_l` spelled out. O(N^4); the independent cross-check for the
/// trace formula.
pub fn wick_msq_q2(cov: &CovarianceTable, sigma_sq: f64, n: usize) -> Result<f64> {
    if n > 64 {
        return Err(Error::CostGuard(format!("wick_msq_q2 is O(N^4); N = {n} > 64")));
    }
    let rho = cov.rho_slice();
    let scale = 1.0 / (2.0 * sigma_sq * n as f64);
    let mut mean = 0.0;
    for i in 0..n {
        for j in 0..n {
            mean += scale * rho[i.abs_diff(j)] * rho[i.abs_diff(j)];
        }
    }
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            let cij = scale * rho[i.abs_diff(j)];
            for k in 0..n {
                let rik = rho[i.abs_diff(k)];
                let rjk = rho[j.abs_diff(k)];
                for l in 0..n {
                    let ckl = scale * rho[k.abs_diff(l)];
                    second += cij
                        * ckl
                        * (rho[i.abs_diff(j)] * rho[k.abs_diff(l)]
                            + rik * rho[j.abs_diff(l)]
                            + rho[i.abs_diff(l)] * rjk);
                }
            }
        }
    }
    Ok(1.0 - 2.0 * mean + second)
}

#[derive(Debug, Clone, Serialize)]
pub struct BerryEsseenReport {
    pub per_n: Vec<SteinEstimate>,
    pub fit: RateFit,
}

/// Sweep sqrt(E[(1-T)^2]) over an N grid with common random numbers (one
/// path per replicate at the largest horizon, prefix-evaluated at each N),
/// then fit the log-log slope and attach the theoretical exponent.
pub fn berry_esseen_report(
    params: &ModelParams,
    n_grid: &[usize],
    reps: u64,
    master_seed: u64,
    trunc_factor: usize,
    pass_band: f64,
) -> Result<BerryEsseenReport> {
    if n_grid.len() < 4 {
        return Err(Error::GridTooSmall { need: 4, got: n_grid.len() });
    }
    let info = classify_regime(params)?;
    if info.regime != Regime::Clt {
        return Err(Error::Regime("berry_esseen_report needs the CLT regime".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    let n_max = *grid.last().unwrap();
    let cov = CovarianceTable::build_full(params, trunc_factor * n_max)?;
    let sigma_sq = crate::constants::sigma_qbeta(params, &cov, 1e-9)?.value;
    let sim = PathSimulator::new(params, n_max, cov.weights().to_vec())?;
    let ops: Vec<Option<ToeplitzOperator>> = grid
        .iter()
        .map(|&n| (n > DIRECT_QUADFORM_LIMIT).then(|| ToeplitzOperator::new(&cov.rho_slice()[..n])))
        .collect();
    let per_rep: Vec<Vec<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let batch = sim.simulate(master_seed, r);
            grid.iter()
                .zip(&ops)
                .map(|(&n, op)| {
                    let t = stein_t_inner(params, &cov, &batch.x[..n], sigma_sq, op.as_ref());
                    (t, (1.0 - t) * (1.0 - t))
                })
                .collect()
        })
        .collect();
    let mut per_n = Vec::with_capacity(grid.len());
    for (gi, &n) in grid.iter().enumerate() {
        let column: Vec<(f64, f64)> = per_rep.iter().map(|row| row[gi]).collect();
        per_n.push(reduce_estimates(n, &column));
    }
    let points: Vec<(f64, f64)> = per_n
        .iter()
        .map(|e| (e.n as f64, e.msq.value.sqrt()))
        .collect();
    let fit = fit_rate(&points)?.with_theory(info.clt_exponent.unwrap(), pass_band);
    Ok(BerryEsseenReport { per_n, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::sigma_qbeta;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(q: u32, beta: f64) -> ModelParams {
        ModelParams::new(q, beta).unwrap()
    }

    fn table(q: u32, beta: f64, n: usize, fac: usize) -> (ModelParams, CovarianceTable, f64) {
        let p = params(q, beta);
        let cov = CovarianceTable::build_full(&p, fac * n).unwrap();
        let s2 = sigma_qbeta(&p, &cov, 1e-9).unwrap().value;
        (p, cov, s2)
    }

    #[test]
    fn q1_t_is_deterministic() {
        // He_0 = 1 makes T path-independent: T = sum rho(k-l) / (sigma^2 N)
        let p = params(1, 0.7);
        let cov = CovarianceTable::build_full(&p, 256).unwrap();
        let sim = PathSimulator::new(&p, 64, cov.weights().to_vec()).unwrap();
        let s2 = 2.5; // any positive normalization
        let a = stein_t(&p, &cov, &sim.simulate(1, 0), s2).unwrap();
        let b = stein_t(&p, &cov, &sim.simulate(99, 7), s2).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
        let mut direct = 0.0;
        for k in 0..64usize {
            for l in 0..64usize {
                direct += cov.rho(k.abs_diff(l)).unwrap();
            }
        }
        assert_relative_eq!(a, direct / (s2 * 64.0), max_relative = 1e-12);
    }

    #[test]
    fn uncorrected_is_qfact_squared_times_t() {
        let (p, cov, s2) = table(3, 0.9, 128, 8);
        let sim = PathSimulator::new(&p, 128, cov.weights().to_vec()).unwrap();
        let b = sim.simulate(4, 2);
        let t = stein_t(&p, &cov, &b, s2).unwrap();
        let u = stein_t_uncorrected(&p, &cov, &b, s2).unwrap();
        assert_relative_eq!(u, 36.0 * t, max_relative = 1e-13);
    }

    #[test]
    fn direct_and_fft_t_agree() {
        let (p, cov, s2) = table(3, 0.9, 1024, 8);
        let sim = PathSimulator::new(&p, 1024, cov.weights().to_vec()).unwrap();
        let batch = sim.simulate(11, 5);
        let op = ToeplitzOperator::new(&cov.rho_slice()[..1024]);
        let direct = stein_t_inner(&p, &cov, &batch.x, s2, None);
        let fft = stein_t_inner(&p, &cov, &batch.x, s2, Some(&op));
        assert_relative_eq!(direct, fft, max_relative = 1e-9);
    }

    #[test]
    fn mean_t_exact_small_cases() {
        let (p, cov, s2) = table(2, 0.9, 64, 64);
        // N = 1: rho(0)^q / (sigma^2 q!) with rho(0) = 1
        let m1 = mean_t_exact(&p, &cov, s2, 1).unwrap();
        assert_relative_eq!(m1, 1.0 / (s2 * 2.0), max_relative = 1e-12);
        // regime guard
        let p_nclt = params(2, 0.7);
        assert!(mean_t_exact(&p_nclt, &cov, s2, 8).is_err());
    }

    #[test]
    fn mean_t_monotone_and_scaled_gap_recorded() {
        let (p, cov, s2) = table(2, 0.9, 8192, 8);
        let mut prev = 0.0;
        let mut sup: f64 = 0.0;
        for k in 7..=13 {
            let n = 1usize << k;
            let v = mean_t_exact(&p, &cov, s2, n).unwrap();
            assert!(v > prev, "E[T] not increasing at N = {n}");
            prev = v;
            sup = sup.max((1.0 - v) * (n as f64).powf(0.6));
        }
        assert!(prev < 1.0);
        // recorded sweep fixture: the scaled gap stays under 11 on this grid
        // (it grows slowly with N; the grid sup sits near 10.3)
        assert!(sup > 5.0 && sup < 11.0, "scaled gap sup = {sup}");
    }

    #[test]
    fn exact_q2_closed_forms() {
        let (_, cov, s2) = table(2, 0.9, 16, 64);
        // N = 1: T = x^2/(2 sigma^2)
        let (mean, var) = stein_exact_q2_parts(&cov, s2, 1).unwrap();
        assert_relative_eq!(mean, 1.0 / (2.0 * s2), max_relative = 1e-13);
        assert_relative_eq!(var, 2.0 / (4.0 * s2 * s2), max_relative = 1e-13);
        assert!(stein_exact_q2(&cov, s2, 600).is_err());
    }

    #[test]
    fn trace_equals_wick_and_mean_t() {
        let p = params(2, 0.9);
        for n in [16usize, 64] {
            let cov = CovarianceTable::build_full(&p, 64 * n).unwrap();
            let s2 = sigma_qbeta(&p, &cov, 1e-9).unwrap().value;
            let exact = stein_exact_q2(&cov, s2, n).unwrap();
            let wick = wick_msq_q2(&cov, s2, n).unwrap();
            assert!(
                (exact - wick).abs() <= 1e-12 * exact.abs(),
                "trace {exact} vs wick {wick} at N = {n}"
            );
            let (mean, _) = stein_exact_q2_parts(&cov, s2, n).unwrap();
            let mte = mean_t_exact(&p, &cov, s2, n).unwrap();
            assert!((mean - mte).abs() <= 1e-12 * mean.abs());
        }
    }

    /// Frozen oracle values computed with an independent implementation
    /// (FFT autocovariance + dense trace algebra in double precision).
    #[test]
    fn exact_q2_frozen_fixtures() {
        let p = params(2, 0.9);
        let cov16 = CovarianceTable::build_full(&p, 64 * 16).unwrap();
        let s2_16 = sigma_qbeta(&p, &cov16, 1e-12).unwrap().value;
        assert_relative_eq!(s2_16, 3.536_381_974_973_53, max_relative = 1e-9);
        assert_relative_eq!(
            stein_exact_q2(&cov16, s2_16, 16).unwrap(),
            0.593_509_331_410_071,
            max_relative = 1e-9
        );
        let cov64 = CovarianceTable::build_full(&p, 64 * 64).unwrap();
        let s2_64 = sigma_qbeta(&p, &cov64, 1e-12).unwrap().value;
        assert_relative_eq!(s2_64, 3.762_314_680_124_28, max_relative = 1e-9);
        assert_relative_eq!(
            stein_exact_q2(&cov64, s2_64, 64).unwrap(),
            0.525_178_853_251_714,
            max_relative = 1e-9
        );
    }

    #[test]
    fn msq_mc_matches_exact_at_small_n() {
        let (p, cov, s2) = table(2, 0.9, 32, 32);
        let est = stein_msq_mc(&p, &cov, s2, 32, 4000, 77).unwrap();
        let exact = stein_exact_q2(&cov, s2, 32).unwrap();
        let gap = (est.msq.value - exact).abs();
        assert!(gap <= 4.0 * est.msq.spread(), "gap {gap} vs 4se {}", 4.0 * est.msq.spread());
        assert_relative_eq!(est.bound(DistanceKind::Kolmogorov), est.msq.value.sqrt());
        assert_relative_eq!(
            est.bound(DistanceKind::TotalVariation),
            2.0 * est.msq.value.sqrt()
        );
    }

    #[test]
    fn report_needs_four_points() {
        let p = params(2, 0.9);
        assert!(matches!(
            berry_esseen_report(&p, &[128], 10, 1, 8, 0.1),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn report_attaches_branch_exponent() {
        // q = 5, beta = 0.75 sits in the high-beta branch: exponent -0.25
        let p = params(5, 0.75);
        let rep = berry_esseen_report(&p, &[16, 32, 64, 128], 40, 3, 8, 0.1).unwrap();
        assert_abs_diff_eq!(rep.fit.theoretical_exponent.unwrap(), -0.25, epsilon = 1e-12);
        assert_eq!(rep.per_n.len(), 4);
    }
}
