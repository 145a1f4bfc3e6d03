//! FFT-backed kernels: moving-average convolution, full autocovariance of a
//! weight vector, and Toeplitz matrix-vector products by circulant embedding.
//!
//! Every FFT route has a direct twin used in agreement tests; the two must
//! coincide to ~1e-10 absolute on the shapes the test suite pins.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

fn plan_pair(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// X_k = sum_{j=0}^{M-1} w[j] * eps[k + M - 1 - j], k = 0..n-1 (direct form).
pub fn convolve_direct(weights: &[f64], eps: &[f64], n: usize) -> Vec<f64> {
    let m = weights.len();
    assert!(eps.len() >= n + m - 1, "innovation buffer too short");
    (0..n)
        .map(|k| {
            let base = &eps[k..k + m];
            // reversed dot product; plain mul+add vectorizes well
            weights
                .iter()
                .rev()
                .zip(base.iter())
                .map(|(&w, &e)| w * e)
                .sum::<f64>()
        })
        .collect()
}

/// Reusable FFT convolver for a fixed weight vector and output length.
pub struct Convolver {
    n: usize,
    m: usize,
    len: usize,
    w_hat: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Convolver {
    pub fn new(weights: &[f64], n: usize) -> Self {
        let m = weights.len();
        let len = next_pow2(n + m);
        let (fwd, inv) = plan_pair(len);
        let mut w_hat = vec![Complex::new(0.0, 0.0); len];
        for (i, &w) in weights.iter().enumerate() {
            w_hat[i] = Complex::new(w, 0.0);
        }
        fwd.process(&mut w_hat);
        Convolver { n, m, len, w_hat, fwd, inv }
    }

    pub fn convolve(&self, eps: &[f64]) -> Vec<f64> {
        assert!(eps.len() >= self.n + self.m - 1);
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for (i, &e) in eps.iter().take(self.n + self.m - 1).enumerate() {
            buf[i] = Complex::new(e, 0.0);
        }
        self.fwd.process(&mut buf);
        for (b, w) in buf.iter_mut().zip(&self.w_hat) {
            *b *= *w;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        (0..self.n).map(|k| buf[self.m - 1 + k].re * scale).collect()
    }
}

pub fn convolve_fft(weights: &[f64], eps: &[f64], n: usize) -> Vec<f64> {
    Convolver::new(weights, n).convolve(eps)
}

/// All-lag autocovariance r[m] = sum_i w[i] w[i+m], m = 0..nlags-1, via one FFT.
pub fn autocovariance_fft(weights: &[f64], nlags: usize) -> Vec<f64> {
    let m = weights.len();
    assert!(nlags <= m);
    let len = next_pow2(2 * m);
    let (fwd, inv) = plan_pair(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (i, &w) in weights.iter().enumerate() {
        buf[i] = Complex::new(w, 0.0);
    }
    fwd.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex::new(b.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / len as f64;
    (0..nlags).map(|k| buf[k].re * scale).collect()
}

/// Symmetric Toeplitz matrix-vector product by circulant embedding.
/// `col` is the first column rho(0..N-1); returns R v.
pub struct ToeplitzOperator {
    n: usize,
    len: usize,
    c_hat: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ToeplitzOperator {
    pub fn new(col: &[f64]) -> Self {
        let n = col.len();
        let len = next_pow2(2 * n);
        let (fwd, inv) = plan_pair(len);
        let mut c_hat = vec![Complex::new(0.0, 0.0); len];
        for (i, &c) in col.iter().enumerate() {
            c_hat[i] = Complex::new(c, 0.0);
        }
        for m in 1..n {
            c_hat[len - m] = Complex::new(col[m], 0.0);
        }
        fwd.process(&mut c_hat);
        ToeplitzOperator { n, len, c_hat, fwd, inv }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "toeplitz operand length");
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for (i, &x) in v.iter().enumerate() {
            buf[i] = Complex::new(x, 0.0);
        }
        self.fwd.process(&mut buf);
        for (b, c) in buf.iter_mut().zip(&self.c_hat) {
            *b *= *c;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        (0..self.n).map(|k| buf[k].re * scale).collect()
    }

    /// v' R v.
    pub fn quadform(&self, v: &[f64]) -> f64 {
        let rv = self.matvec(v);
        v.iter().zip(&rv).map(|(&a, &b)| a * b).sum()
    }
}

/// Direct O(N^2) evaluation of v' R v for the same symmetric Toeplitz R.
pub fn toeplitz_quadform_direct(col: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    assert_eq!(col.len(), n);
    let mut total = 0.0;
    for k in 0..n {
        let mut row = 0.0;
        for l in 0..n {
            let d = k.abs_diff(l);
            row += col[d] * v[l];
        }
        total += v[k] * row;
    }
    total
}
