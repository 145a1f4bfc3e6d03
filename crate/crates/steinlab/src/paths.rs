//! Seeded simulation of the moving average, its Hermite partial sums, and the
//! CLT/NCLT normalizations.
//!
//! Innovations are the unit-variance increments of a two-sided Brownian
//! motion, realized as one buffer of `N + M` standard normals per replicate:
//! `X_n = sum_{i=1..M} a_i eps_{n-i}` reads a sliding window of length M, so
//! no negative-time bookkeeping is needed. Normals come from the AS 241
//! inverse CDF on ChaCha12 substreams (see [`crate::numeric::rng`]), which
//! makes every path a pure function of `(master_seed, replicate_index)` and
//! bit-identical across runs at a fixed build.
//!
//! Prefix property: the first `n` entries of a path at horizon `N >= n` equal
//! the path simulated at horizon `n` with the same config, because the stream
//! is consumed in a fixed order. Sweeps over N exploit this for common random
//! numbers.

use crate::constants::{classify_regime, ModelParams, Regime};
use crate::covariance::build_weights;
use crate::error::{Error, Result};
use crate::hermite::hermite_paper;
use crate::numeric::fft::{convolve_direct, Convolver};
use crate::numeric::rng::{fill_standard_normal, substream};
use crate::numeric::sum::Compensated;
use std::io::{Read, Write};

/// Weight truncations above this many entries are refused.
pub const DEFAULT_TRUNCATION_CAP: usize = 1 << 28;

/// Products N*M up to this size convolve directly; larger ones go through FFT.
const DIRECT_CONV_LIMIT: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct PathConfig {
    pub n: usize,
    pub m: usize,
    pub master_seed: u64,
    pub replicate_index: u64,
}

#[derive(Debug, Clone)]
pub struct PathBatch {
    pub x: Vec<f64>,
    pub config: PathConfig,
    /// Ideal-model weight variance not captured by the truncation,
    /// `sum_{i > M} i^{-2 beta}`, before any renormalization.
    pub trunc_var_deficit: f64,
}

/// Smallest M with `M^{1 - 2 beta} / (2 beta - 1) <= delta_sq` (the ideal
/// weight-variance tail bound). Errs when that M exceeds the cap: the caller
/// must relax `delta_sq` (long memory makes small deltas astronomically
/// expensive).
pub fn truncation_length(beta: f64, delta_sq: f64) -> Result<usize> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (1/2, 1), got {beta}")));
    }
    if !(delta_sq > 0.0 && delta_sq < 1.0) {
        return Err(Error::Domain(format!("delta_sq must lie in (0, 1), got {delta_sq}")));
    }
    let tail = |m: f64| m.powf(1.0 - 2.0 * beta) / (2.0 * beta - 1.0);
    let needed = ((2.0 * beta - 1.0) * delta_sq).powf(-1.0 / (2.0 * beta - 1.0));
    if !needed.is_finite() || needed > DEFAULT_TRUNCATION_CAP as f64 {
        return Err(Error::TruncationOverflow { needed, cap: DEFAULT_TRUNCATION_CAP });
    }
    let mut m = needed.ceil().max(1.0) as usize;
    while m > 1 && tail((m - 1) as f64) <= delta_sq {
        m -= 1;
    }
    while tail(m as f64) > delta_sq {
        m += 1;
        if m > DEFAULT_TRUNCATION_CAP {
            return Err(Error::TruncationOverflow { needed: m as f64, cap: DEFAULT_TRUNCATION_CAP });
        }
    }
    Ok(m)
}

/// Reusable simulator: fixed weights and horizon, FFT plan built once.
pub struct PathSimulator {
    n: usize,
    weights: Vec<f64>,
    convolver: Option<Convolver>,
    trunc_var_deficit: f64,
}

impl PathSimulator {
    pub fn new(params: &ModelParams, n: usize, weights: Vec<f64>) -> Result<Self> {
        if n < 1 || weights.is_empty() {
            return Err(Error::Domain("need n >= 1 and at least one weight".into()));
        }
        let m = weights.len();
        let use_fft = (n as u128) * (m as u128) > DIRECT_CONV_LIMIT;
        let convolver = use_fft.then(|| Convolver::new(&weights, n));
        // sum_{i > M} i^{-2 beta} by Euler-Maclaurin
        let a = (m + 1) as f64;
        let s = 2.0 * params.beta;
        let deficit = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s) + s * a.powf(-s - 1.0) / 12.0;
        Ok(PathSimulator { n, weights, convolver, trunc_var_deficit: deficit })
    }

    pub fn from_params(params: &ModelParams, n: usize, m: usize) -> Result<Self> {
        Self::new(params, n, build_weights(params, m)?)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn simulate(&self, master_seed: u64, replicate_index: u64) -> PathBatch {
        let m = self.weights.len();
        let mut rng = substream(master_seed, replicate_index);
        let mut eps = vec![0.0; self.n + m];
        fill_standard_normal(&mut rng, &mut eps);
        let x = match &self.convolver {
            Some(c) => c.convolve(&eps),
            None => convolve_direct(&self.weights, &eps, self.n),
        };
        PathBatch {
            x,
            config: PathConfig {
                n: self.n,
                m,
                master_seed,
                replicate_index,
            },
            trunc_var_deficit: self.trunc_var_deficit,
        }
    }
}

/// One-shot simulation; `weights` must come from `build_weights` with `cfg.m`
/// entries.
pub fn simulate_path(params: &ModelParams, cfg: &PathConfig, weights: &[f64]) -> Result<PathBatch> {
    if weights.len() != cfg.m {
        return Err(Error::Dimension(format!(
            "weights has {} entries, config says M = {}",
            weights.len(),
            cfg.m
        )));
    }
    let sim = PathSimulator::new(params, cfg.n, weights.to_vec())?;
    Ok(sim.simulate(cfg.master_seed, cfg.replicate_index))
}

/// Partial sum `S_N = sum_n H_q(X_n)` (scaled Hermite normalization, so the
/// summands are exactly centered under rho(0) = 1).
pub fn s_n(params: &ModelParams, batch: &PathBatch) -> f64 {
    s_n_prefix(params, &batch.x, batch.x.len())
}

/// Partial sum over the first `n` entries (common-random-numbers sweeps).
pub fn s_n_prefix(params: &ModelParams, x: &[f64], n: usize) -> f64 {
    let mut acc = Compensated::new();
    for &v in &x[..n] {
        acc.add(hermite_paper(params.q, v));
    }
    acc.value()
}

/// CLT normalization `s / (sigma sqrt(N))`.
pub fn z_clt(params: &ModelParams, sigma_sq: f64, n: usize, s: f64) -> Result<f64> {
    let info = classify_regime(params)?;
    if info.regime != Regime::Clt {
        return Err(Error::Regime("z_clt needs the CLT regime".into()));
    }
    Ok(s / (sigma_sq.sqrt() * (n as f64).sqrt()))
}

/// NCLT normalization `h^{-1} N^{beta q - q/2 - 1} s`.
pub fn z_nclt(params: &ModelParams, h: f64, n: usize, s: f64) -> Result<f64> {
    let info = classify_regime(params)?;
    if info.regime != Regime::Nclt {
        return Err(Error::Regime("z_nclt needs the NCLT regime".into()));
    }
    let q = params.q as f64;
    Ok(s * (n as f64).powf(params.beta * q - q / 2.0 - 1.0) / h)
}

const RAW_MAGIC: &[u8; 4] = b"LMMA";
const RAW_VERSION: u32 = 1;

/// Raw-path dump: magic "LMMA", version u32, N u64, M u64, seed u64,
/// replicate u64, then N little-endian f64 samples.
pub fn dump_raw(batch: &PathBatch, mut out: impl Write) -> Result<()> {
    out.write_all(RAW_MAGIC)?;
    out.write_all(&RAW_VERSION.to_le_bytes())?;
    out.write_all(&(batch.config.n as u64).to_le_bytes())?;
    out.write_all(&(batch.config.m as u64).to_le_bytes())?;
    out.write_all(&batch.config.master_seed.to_le_bytes())?;
    out.write_all(&batch.config.replicate_index.to_le_bytes())?;
    for v in &batch.x {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw(mut input: impl Read) -> Result<PathBatch> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != RAW_MAGIC {
        return Err(Error::Config("bad magic in raw path file".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != RAW_VERSION {
        return Err(Error::Config("unsupported raw path version".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
        input.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = next_u64(&mut input)? as usize;
    let m = next_u64(&mut input)? as usize;
    let master_seed = next_u64(&mut input)?;
    let replicate_index = next_u64(&mut input)?;
    let mut x = vec![0.0; n];
    let mut buf = [0u8; 8];
    for v in x.iter_mut() {
        input.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(PathBatch {
        x,
        config: PathConfig { n, m, master_seed, replicate_index },
        trunc_var_deficit: f64::NAN,
    })
}
