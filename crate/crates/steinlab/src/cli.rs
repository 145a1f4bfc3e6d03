//! Experiment runner: flag parsing, validation, orchestration, result
//! caching, and tabular emission.
//!
//! Every experiment writes rows in one fixed CSV schema (see
//! [`results_schema`]) plus, where noted, a JSON sidecar with the fitted
//! rate. Outputs are written atomically (temp file + rename) and cached under
//! a key derived from the result-identifying part of the config and the build
//! version; re-runs replay the cached bytes unless `--no-cache` is given.
//!
//! Exit codes: 0 success, 2 validation error, 3 regime error, 4 numeric
//! failure.

use crate::constants::{self, classify_regime, ModelParams, Regime};
use crate::covariance::CovarianceTable;
use crate::empirics::{ks_one_sample, ks_two_sample};
use crate::error::{Error, Result};
use crate::nclt::{self, IdealLagTable};
use crate::numeric::special::normal_cdf;
use crate::paths::{s_n_prefix, PathSimulator};
use crate::spitzer;
use crate::stein;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const BUILD_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The fixed results header. Floats are serialized with 17 significant
/// digits so that write -> read -> write round-trips byte-identically.
/// `lower`/`upper` are `value -/+ 1.96 stderr` for Monte Carlo rows and
/// `value -/+ bound` for deterministic rows with a certified remainder.
pub fn results_schema() -> &'static str {
    "experiment,q,beta,N,M_trunc,reps,master_seed,estimator,value,stderr,lower,upper"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constants,
    Rho,
    CltRate,
    NcltRate,
    Ks,
    Spitzer,
    Oracle,
}

impl ExperimentKind {
    fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::Rho => "rho",
            ExperimentKind::CltRate => "clt-rate",
            ExperimentKind::NcltRate => "nclt-rate",
            ExperimentKind::Ks => "ks",
            ExperimentKind::Spitzer => "spitzer",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

/// Validated experiment description. The `cache key` is the canonical JSON of
/// everything result-identifying (not output paths or thread counts), plus
/// the build version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub subcommand: ExperimentKind,
    pub q: u32,
    pub beta: f64,
    pub n_grid: Vec<usize>,
    pub reps: u64,
    pub master_seed: u64,
    pub trunc_factor: usize,
    pub tol: f64,
    pub rate_band: f64,
    pub eps_grid: Vec<f64>,
    pub n_max: Option<u64>,
    pub normalize_weights: bool,
    #[serde(skip)]
    pub out_path: Option<PathBuf>,
    pub format: OutputFormat,
    #[serde(skip)]
    pub no_cache: bool,
    #[serde(skip)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn params(&self) -> Result<ModelParams> {
        let p = ModelParams::new(self.q, self.beta)?;
        Ok(if self.normalize_weights { p } else { p.unnormalized() })
    }

    pub fn canonical_key(&self) -> String {
        format!("v{BUILD_VERSION}:{}", serde_json::to_string(self).expect("config serializes"))
    }

    /// FNV-1a over the canonical key.
    pub fn config_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_key().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    fn validate(&self) -> Result<()> {
        self.params()?;
        classify_regime(&self.params()?)?;
        if self.trunc_factor < 1 {
            return Err(Error::Config("trunc-factor must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        match self.subcommand {
            ExperimentKind::CltRate | ExperimentKind::NcltRate => {
                if self.n_grid.len() < 4 {
                    return Err(Error::Config("rate experiments need >= 4 grid points".into()));
                }
                if self.n_grid.iter().any(|&n| n < 2) {
                    return Err(Error::Config("grid points must be >= 2".into()));
                }
            }
            ExperimentKind::Ks => {
                if self.n_grid.is_empty() {
                    return Err(Error::Config("ks needs --n".into()));
                }
            }
            ExperimentKind::Spitzer => {
                if self.eps_grid.is_empty() {
                    return Err(Error::Config("spitzer needs --eps-grid".into()));
                }
                if self.eps_grid.iter().any(|&e| !(e > 0.0)) {
                    return Err(Error::Config("eps values must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub q: u32,
    pub beta: f64,
    pub n: u64,
    pub m_trunc: u64,
    pub reps: u64,
    pub master_seed: u64,
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ResultRow {
    fn mc(cfg: &ExperimentConfig, n: u64, m: u64, estimator: &str, value: f64, se: f64) -> Self {
        ResultRow {
            experiment: cfg.subcommand.name().to_string(),
            q: cfg.q,
            beta: cfg.beta,
            n,
            m_trunc: m,
            reps: cfg.reps,
            master_seed: cfg.master_seed,
            estimator: estimator.to_string(),
            value,
            stderr: se,
            lower: value - 1.96 * se,
            upper: value + 1.96 * se,
        }
    }

    fn deterministic(
        cfg: &ExperimentConfig,
        n: u64,
        m: u64,
        estimator: &str,
        value: f64,
        bound: f64,
    ) -> Self {
        ResultRow {
            experiment: cfg.subcommand.name().to_string(),
            q: cfg.q,
            beta: cfg.beta,
            n,
            m_trunc: m,
            reps: 0,
            master_seed: cfg.master_seed,
            estimator: estimator.to_string(),
            value,
            stderr: 0.0,
            lower: value - bound,
            upper: value + bound,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    s.push_str(results_schema());
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.q,
            fmt_f64(r.beta),
            r.n,
            r.m_trunc,
            r.reps,
            r.master_seed,
            r.estimator,
            fmt_f64(r.value),
            fmt_f64(r.stderr),
            fmt_f64(r.lower),
            fmt_f64(r.upper)
        );
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
    if header != results_schema() {
        return Err(Error::Config(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Config(format!("bad row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Config(format!("bad float {s}: {e}")))
        };
        rows.push(ResultRow {
            experiment: f[0].to_string(),
            q: f[1].parse().map_err(|_| Error::Config("bad q".into()))?,
            beta: parse(f[2])?,
            n: f[3].parse().map_err(|_| Error::Config("bad N".into()))?,
            m_trunc: f[4].parse().map_err(|_| Error::Config("bad M".into()))?,
            reps: f[5].parse().map_err(|_| Error::Config("bad reps".into()))?,
            master_seed: f[6].parse().map_err(|_| Error::Config("bad seed".into()))?,
            estimator: f[7].to_string(),
            value: parse(f[8])?,
            stderr: parse(f[9])?,
            lower: parse(f[10])?,
            upper: parse(f[11])?,
        });
    }
    Ok(rows)
}

fn render_rows(rows: &[ResultRow], format: OutputFormat) -> Result<Vec<u8>> {
    Ok(match format {
        OutputFormat::Csv => rows_to_csv(rows).into_bytes(),
        OutputFormat::Json => serde_json::to_vec_pretty(rows)?,
    })
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cache_dir() -> Option<PathBuf> {
    match std::env::var_os("STEINLAB_CACHE_DIR") {
        Some(d) if !d.is_empty() => Some(PathBuf::from(d)),
        _ => None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheManifest {
    key: String,
    files: Vec<String>,
}

/// Everything `run` leaves behind, for callers that want to inspect it.
#[derive(Debug)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub from_cache: bool,
    pub summary: String,
}

struct Artifacts {
    /// (file name suffix, bytes); the first entry lands at `out_path`.
    files: Vec<(String, Vec<u8>)>,
    summary: String,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.threads > 0 {
        // best effort; the pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let ext = match cfg.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let out_path = cfg.out_path.clone().unwrap_or_else(|| {
        PathBuf::from(format!("steinlab-{}-q{}-beta{}.{ext}", cfg.subcommand.name(), cfg.q, cfg.beta))
    });

    // cached replay
    let hash = cfg.config_hash();
    let entry = cache_dir().map(|d| d.join(format!("{hash:016x}")));
    if !cfg.no_cache {
        if let Some(dir) = &entry {
            if let Ok(bytes) = std::fs::read(dir.join("manifest.json")) {
                if let Ok(man) = serde_json::from_slice::<CacheManifest>(&bytes) {
                    if man.key == cfg.canonical_key() {
                        let mut files = Vec::new();
                        for (i, name) in man.files.iter().enumerate() {
                            let data = std::fs::read(dir.join(name))?;
                            let dest = target_path(&out_path, i, name);
                            write_atomic(&dest, &data)?;
                            files.push(dest);
                        }
                        return Ok(RunOutput {
                            files,
                            from_cache: true,
                            summary: format!("cache hit {hash:016x}"),
                        });
                    }
                }
            }
        }
    }

    let art = compute(cfg)?;

    // store in cache, then emit
    let mut files = Vec::new();
    if let Some(dir) = &entry {
        std::fs::create_dir_all(dir)?;
        let names: Vec<String> = art.files.iter().map(|(n, _)| n.clone()).collect();
        for (name, bytes) in &art.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        let man = CacheManifest { key: cfg.canonical_key(), files: names };
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&man)?)?;
    }
    for (i, (name, bytes)) in art.files.iter().enumerate() {
        let dest = target_path(&out_path, i, name);
        write_atomic(&dest, bytes)?;
        files.push(dest);
    }
    Ok(RunOutput { files, from_cache: false, summary: art.summary })
}

fn target_path(out_path: &Path, index: usize, name: &str) -> PathBuf {
    if index == 0 {
        out_path.to_path_buf()
    } else {
        // sidecar: same stem, the artifact's own suffix
        let stem = out_path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        out_path.with_file_name(format!("{stem}.{name}"))
    }
}

fn compute(cfg: &ExperimentConfig) -> Result<Artifacts> {
    match cfg.subcommand {
        ExperimentKind::Constants => compute_constants(cfg),
        ExperimentKind::Rho => compute_rho(cfg),
        ExperimentKind::CltRate => compute_clt_rate(cfg),
        ExperimentKind::NcltRate => compute_nclt_rate(cfg),
        ExperimentKind::Ks => compute_ks(cfg),
        ExperimentKind::Spitzer => compute_spitzer(cfg),
        ExperimentKind::Oracle => compute_oracle(cfg),
    }
}

fn main_name(cfg: &ExperimentConfig) -> String {
    match cfg.format {
        OutputFormat::Csv => "rows.csv".into(),
        OutputFormat::Json => "rows.json".into(),
    }
}

fn compute_constants(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let info = classify_regime(&params)?;
    // a modest table suffices for sigma at the default tolerance
    let set = match info.regime {
        Regime::Clt => {
            let cov = CovarianceTable::build_full(&params, 1 << 21)?;
            constants::constant_set(&params, &cov, cfg.tol)?
        }
        Regime::Nclt => {
            let cov = CovarianceTable::build(&params, 64, 4)?;
            constants::constant_set(&params, &cov, cfg.tol)?
        }
    };
    let identity = match (set.d_q_beta, set.h_q_beta) {
        (Some(d), Some(h)) => Some(d * h * params.q_factorial()),
        _ => None,
    };
    #[derive(Serialize)]
    struct ConstantsOut<'a> {
        config_hash: String,
        q: u32,
        beta: f64,
        regime: &'a crate::constants::RegimeInfo,
        constants: &'a constants::ConstantSet,
        dhq_identity: Option<f64>,
        dhq_identity_ok: Option<bool>,
    }
    let out = ConstantsOut {
        config_hash: format!("{:016x}", cfg.config_hash()),
        q: cfg.q,
        beta: cfg.beta,
        regime: &info,
        constants: &set,
        dhq_identity: identity,
        dhq_identity_ok: identity.map(|v| (v - 1.0).abs() <= 1e-12),
    };
    Ok(Artifacts {
        files: vec![("constants.json".into(), serde_json::to_vec_pretty(&out)?)],
        summary: format!("constants q={} beta={} regime={:?}", cfg.q, cfg.beta, info.regime),
    })
}

fn compute_rho(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let m_max = cfg.n_grid.iter().copied().max().unwrap_or(1024);
    let cov = CovarianceTable::build(&params, cfg.trunc_factor * m_max, m_max)?;
    let mut csv = Vec::new();
    cov.export_csv(&mut csv)?;
    Ok(Artifacts {
        files: vec![("table.csv".into(), csv)],
        summary: format!("rho table to m_max={m_max}, M={}", cov.trunc_m()),
    })
}

fn compute_clt_rate(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let report = stein::berry_esseen_report(
        &params,
        &cfg.n_grid,
        cfg.reps,
        cfg.master_seed,
        cfg.trunc_factor,
        cfg.rate_band,
    )?;
    let m = (cfg.trunc_factor * cfg.n_grid.iter().copied().max().unwrap()) as u64;
    let mut rows = Vec::new();
    for e in &report.per_n {
        rows.push(ResultRow::mc(cfg, e.n as u64, m, "sqrt_msq", e.msq.value.sqrt(),
            // delta method: se(sqrt(x)) ~ se(x) / (2 sqrt(x))
            e.msq.spread() / (2.0 * e.msq.value.sqrt())));
        rows.push(ResultRow::mc(cfg, e.n as u64, m, "mean_T", e.mean_t.value, e.mean_t.spread()));
    }
    let fit_json = serde_json::to_vec_pretty(&report.fit)?;
    Ok(Artifacts {
        files: vec![(main_name(cfg), render_rows(&rows, cfg.format)?), ("fit.json".into(), fit_json)],
        summary: format!(
            "clt-rate slope {:.4} (theory {:.4})",
            report.fit.slope,
            report.fit.theoretical_exponent.unwrap_or(f64::NAN)
        ),
    })
}

fn compute_nclt_rate(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let n_max = *cfg.n_grid.iter().max().unwrap();
    let lags = IdealLagTable::build(cfg.beta, n_max)?;
    let mut pts = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let ke = nclt::kernel_error(&params, &lags, n)?;
        pts.push((n as f64, ke.err_sq));
        rows.push(ResultRow::deterministic(cfg, n as u64, 0, "kernel_err_sq", ke.err_sq, 0.0));
        rows.push(ResultRow::deterministic(cfg, n as u64, 0, "renorm_second_moment",
            nclt::renorm_second_moment(&params, &lags, n)?, 0.0));
    }
    let fit = crate::empirics::fit_rate(&pts)?
        .with_theory(classify_regime(&params)?.nclt_exponent.unwrap(), cfg.rate_band);
    Ok(Artifacts {
        files: vec![
            (main_name(cfg), render_rows(&rows, cfg.format)?),
            ("fit.json".into(), serde_json::to_vec_pretty(&fit)?),
        ],
        summary: format!(
            "nclt-rate slope {:.4} (theory {:.4})",
            fit.slope,
            fit.theoretical_exponent.unwrap()
        ),
    })
}

fn compute_ks(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let info = classify_regime(&params)?;
    let n = *cfg.n_grid.iter().max().unwrap();
    let (stat, estimator, m) = match info.regime {
        Regime::Clt => {
            let cov = CovarianceTable::build_full(&params, cfg.trunc_factor * n)?;
            let sigma_sq = constants::sigma_qbeta(&params, &cov, 1e-9)?.value;
            let sim = PathSimulator::new(&params, n, cov.weights().to_vec())?;
            use rayon::prelude::*;
            let zs: Vec<f64> = (0..cfg.reps)
                .into_par_iter()
                .map(|r| {
                    let b = sim.simulate(cfg.master_seed, r);
                    s_n_prefix(&params, &b.x, n) / (sigma_sq.sqrt() * (n as f64).sqrt())
                })
                .collect();
            (ks_one_sample(&zs, normal_cdf)?, "ks_z_clt_vs_normal", cov.trunc_m())
        }
        Regime::Nclt => {
            let half = cfg.reps / 2;
            let a = nclt::hermite_surrogate_sample(&params, n, half, cfg.master_seed, cfg.trunc_factor)?;
            let b = nclt::hermite_surrogate_sample(
                &params,
                n,
                half,
                cfg.master_seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
                cfg.trunc_factor,
            )?;
            (ks_two_sample(&a, &b)?, "ks_z_nclt_two_sample", cfg.trunc_factor * n)
        }
    };
    let rows = vec![ResultRow::mc(cfg, n as u64, m as u64, estimator, stat, 0.0)];
    Ok(Artifacts {
        files: vec![(main_name(cfg), render_rows(&rows, cfg.format)?)],
        summary: format!("{estimator} = {stat:.5}"),
    })
}

fn compute_spitzer(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    let info = classify_regime(&params)?;
    let mut rows = Vec::new();
    let mut sidecar = String::from("epsilon,series,value,remainder,ratio_to_limit\n");
    match info.regime {
        Regime::Clt => {
            let cov = CovarianceTable::build_full(&params, 1 << 19)?;
            let sigma = constants::sigma_qbeta(&params, &cov, 1e-9)?.value.sqrt();
            for &eps in &cfg.eps_grid {
                let n_max = cfg.n_max.unwrap_or_else(|| spitzer::suggested_n_max(sigma, eps));
                let f1 = spitzer::f1_hat(&params, sigma, eps, n_max)?;
                let g1 = spitzer::g1_hat(&params, sigma, eps, n_max)?;
                let f1_ratio = -f1.partial_sum / eps.ln();
                let g1_stat = (eps / sigma).powi(2) * g1.partial_sum;
                rows.push(ResultRow::deterministic(cfg, n_max, cov.trunc_m() as u64, "f1", f1.partial_sum, f1.tail_remainder_bound));
                rows.push(ResultRow::deterministic(cfg, n_max, cov.trunc_m() as u64, "g1", g1.partial_sum, g1.tail_remainder_bound));
                rows.push(ResultRow::deterministic(cfg, n_max, cov.trunc_m() as u64, "f1_ratio", f1_ratio, 0.0));
                rows.push(ResultRow::deterministic(cfg, n_max, cov.trunc_m() as u64, "g1_scaled", g1_stat, 0.0));
                let _ = writeln!(sidecar, "{},f1,{},{},{}", fmt_f64(eps), fmt_f64(f1.partial_sum), fmt_f64(f1.tail_remainder_bound), fmt_f64(f1_ratio / 2.0));
                let _ = writeln!(sidecar, "{},g1,{},{},{}", fmt_f64(eps), fmt_f64(g1.partial_sum), fmt_f64(g1.tail_remainder_bound), fmt_f64(g1_stat));
            }
        }
        Regime::Nclt => {
            let n_ref = cfg.n_grid.iter().copied().max().unwrap_or(4096);
            let surrogate = nclt::hermite_surrogate_sample(
                &params,
                n_ref,
                cfg.reps,
                cfg.master_seed,
                cfg.trunc_factor,
            )?;
            let a_exp = spitzer::nclt_threshold_exponent(&params);
            for &eps in &cfg.eps_grid {
                let n_max = cfg.n_max.unwrap_or(1 << 40);
                let f2 = spitzer::f2_hat(&params, &surrogate, eps, n_max)?;
                let g2 = spitzer::g2_hat(&params, &surrogate, eps, n_max)?;
                let f2_ratio = -f2.partial_sum / eps.ln();
                let h = nclt::surrogate_h(&params)?;
                let g2_stat = (eps / h).powf(1.0 / a_exp) * g2.partial_sum;
                let limit_f2 = 1.0 / a_exp;
                rows.push(ResultRow::mc(cfg, n_max, 0, "f2", f2.partial_sum, 0.0));
                rows.push(ResultRow::mc(cfg, n_max, 0, "g2", g2.partial_sum, 0.0));
                rows.push(ResultRow::mc(cfg, n_max, 0, "f2_ratio", f2_ratio, 0.0));
                rows.push(ResultRow::mc(cfg, n_max, 0, "g2_scaled", g2_stat, 0.0));
                let _ = writeln!(sidecar, "{},f2,{},{},{}", fmt_f64(eps), fmt_f64(f2.partial_sum), fmt_f64(f2.tail_remainder_bound), fmt_f64(f2_ratio / limit_f2));
                let _ = writeln!(sidecar, "{},g2,{},{},{}", fmt_f64(eps), fmt_f64(g2.partial_sum), fmt_f64(g2.tail_remainder_bound), fmt_f64(g2_stat));
            }
        }
    }
    Ok(Artifacts {
        files: vec![
            (main_name(cfg), render_rows(&rows, cfg.format)?),
            ("series.csv".into(), sidecar.into_bytes()),
        ],
        summary: format!("spitzer over {} eps values", cfg.eps_grid.len()),
    })
}

fn compute_oracle(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params = cfg.params()?;
    if params.q != 2 {
        return Err(Error::Config("oracle cross-validation is the q = 2 Wick check".into()));
    }
    let mut rows = Vec::new();
    for n in [16usize, 64] {
        let cov = CovarianceTable::build_full(&params, 64 * n)?;
        let sigma_sq = constants::sigma_qbeta(&params, &cov, 1e-12)?.value;
        let exact = stein::stein_exact_q2(&cov, sigma_sq, n)?;
        let wick = stein::wick_msq_q2(&cov, sigma_sq, n)?;
        rows.push(ResultRow::deterministic(cfg, n as u64, cov.trunc_m() as u64, "msq_exact_trace", exact, 0.0));
        rows.push(ResultRow::deterministic(cfg, n as u64, cov.trunc_m() as u64, "msq_exact_wick", wick, 0.0));
        if n == 64 && cfg.reps >= 2 {
            let est = stein::stein_msq_mc(&params, &cov, sigma_sq, n, cfg.reps, cfg.master_seed)?;
            rows.push(ResultRow::mc(cfg, n as u64, cov.trunc_m() as u64, "msq_mc", est.msq.value, est.msq.spread()));
        }
    }
    Ok(Artifacts {
        files: vec![(main_name(cfg), render_rows(&rows, cfg.format)?)],
        summary: "oracle cross-validation rows written".into(),
    })
}

// ---------------------------------------------------------------- CLI args

#[derive(Parser, Debug)]
#[command(name = "steinlab", version, about = "Rate experiments for long-memory moving averages")]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Closed-form constants and regime classification
    Constants(CommonArgs),
    /// Autocovariance table export
    Rho(CommonArgs),
    /// Monte Carlo Berry-Esseen rate sweep (CLT regime)
    CltRate(CommonArgs),
    /// Deterministic kernel-error rate sweep (NCLT regime)
    NcltRate(CommonArgs),
    /// Kolmogorov-Smirnov distance of the normalized partial sums
    Ks(CommonArgs),
    /// Spitzer / Hsu-Robbins series
    Spitzer(CommonArgs),
    /// Exact-vs-Monte-Carlo cross-validation (q = 2)
    Oracle(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Hermite rank
    #[arg(long)]
    pub q: Option<u32>,
    /// Memory exponent in (1/2, 1)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated N grid (or single N for ks)
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Replicates for Monte Carlo experiments
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Weight truncation M = factor * max N
    #[arg(long)]
    pub trunc_factor: Option<usize>,
    /// Series tolerance for certified remainders
    #[arg(long)]
    pub tol: Option<f64>,
    /// Pass band around the theoretical rate exponent
    #[arg(long)]
    pub band: Option<f64>,
    /// Comma-separated epsilon grid (spitzer)
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// Series cap for spitzer sums
    #[arg(long)]
    pub n_max: Option<u64>,
    /// Keep the raw power-law weights instead of unit-variance rescaling
    #[arg(long, default_value_t = false)]
    pub unnormalized: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long, default_value_t = false)]
    pub no_cache: bool,
    /// Worker threads for replicate-parallel sections (0 = library default)
    #[arg(long)]
    pub threads: Option<usize>,
    /// key=value config file; explicit flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_config_file(path: &Path) -> Result<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

macro_rules! resolve {
    ($flag:expr, $file:expr, $key:literal, $default:expr, $parse:expr) => {
        match $flag {
            Some(v) => v,
            None => match $file.get($key) {
                Some(s) => $parse(s)
                    .ok_or_else(|| Error::Config(format!("bad value for {}: {s}", $key)))?,
                None => $default,
            },
        }
    };
}

impl CommonArgs {
    fn into_config(self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => parse_config_file(p)?,
            None => Default::default(),
        };
        let parse_usize_list = |s: &String| -> Option<Vec<usize>> {
            s.split(',').map(|t| t.trim().parse().ok()).collect()
        };
        let parse_f64_list = |s: &String| -> Option<Vec<f64>> {
            s.split(',').map(|t| t.trim().parse().ok()).collect()
        };
        let format = resolve!(
            self.format,
            file,
            "format",
            "csv".to_string(),
            |s: &String| Some(s.clone())
        );
        let format = match format.as_str() {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            other => return Err(Error::Config(format!("unknown format {other}"))),
        };
        Ok(ExperimentConfig {
            subcommand: kind,
            q: resolve!(self.q, file, "q", 2, |s: &String| s.parse().ok()),
            beta: resolve!(self.beta, file, "beta", 0.9, |s: &String| s.parse().ok()),
            n_grid: resolve!(self.n_grid, file, "n_grid", vec![256, 512, 1024, 2048], parse_usize_list),
            reps: resolve!(self.reps, file, "reps", 1000, |s: &String| s.parse().ok()),
            master_seed: resolve!(self.master_seed, file, "master_seed", 42, |s: &String| s.parse().ok()),
            trunc_factor: resolve!(self.trunc_factor, file, "trunc_factor", 64, |s: &String| s.parse().ok()),
            tol: resolve!(self.tol, file, "tol", 1e-10, |s: &String| s.parse().ok()),
            rate_band: resolve!(self.band, file, "band", 0.1, |s: &String| s.parse().ok()),
            eps_grid: resolve!(self.eps_grid, file, "eps_grid", vec![1e-2, 1e-3], parse_f64_list),
            n_max: self.n_max.or_else(|| file.get("n_max").and_then(|s| s.parse().ok())),
            normalize_weights: !self.unnormalized
                && file.get("unnormalized").map(|s| s != "true").unwrap_or(true),
            out_path: self.out,
            format,
            no_cache: self.no_cache,
            threads: self.threads.unwrap_or(0),
        })
    }
}

/// Parse argv, run, map errors to the exit-code contract.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match CliArgs::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            // clap's own help/version go to stdout with code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, common) = match parsed.command {
        CliCommand::Constants(c) => (ExperimentKind::Constants, c),
        CliCommand::Rho(c) => (ExperimentKind::Rho, c),
        CliCommand::CltRate(c) => (ExperimentKind::CltRate, c),
        CliCommand::NcltRate(c) => (ExperimentKind::NcltRate, c),
        CliCommand::Ks(c) => (ExperimentKind::Ks, c),
        CliCommand::Spitzer(c) => (ExperimentKind::Spitzer, c),
        CliCommand::Oracle(c) => (ExperimentKind::Oracle, c),
    };
    let cfg = match common.into_config(kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    match run(&cfg) {
        Ok(out) => {
            println!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::GridTooSmall { .. } => 2,
        Error::Regime(_) | Error::Boundary { .. } => 3,
        _ => 4,
    }
}
