//! Hermite polynomials in the two normalizations in play: the scaled family
//! `H_n` with `H_n(x) = (-1)^n/n! e^{x^2/2} (d/dx)^n e^{-x^2/2}` (leading
//! coefficient 1/n!) and the probabilists' monic family `He_n = n! H_n`.
//!
//! Both evaluate by three-term recurrences; the explicit-coefficient form
//! loses digits to cancellation from degree ~15 on and is not used.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `H_n`, leading coefficient 1/n!.
    Scaled,
    /// `He_n`, monic.
    Probabilists,
}

/// Degree-capped evaluator.
#[derive(Debug, Clone, Copy)]
pub struct HermiteEvaluator {
    pub max_degree: u32,
    pub normalization: Normalization,
}

impl HermiteEvaluator {
    pub fn new(max_degree: u32, normalization: Normalization) -> Self {
        HermiteEvaluator { max_degree, normalization }
    }

    pub fn eval(&self, n: u32, x: f64) -> Result<f64> {
        if n > self.max_degree {
            return Err(Error::Domain(format!(
                "degree {n} exceeds evaluator cap {}",
                self.max_degree
            )));
        }
        Ok(match self.normalization {
            Normalization::Scaled => hermite_paper(n, x),
            Normalization::Probabilists => hermite_prob(n, x),
        })
    }
}

/// `H_n(x)` via the scaled recurrence `(n+1) H_{n+1} = x H_n - H_{n-1}`,
/// `H_0 = 1`, `H_1 = x`.
pub fn hermite_paper(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for k in 1..n {
                let next = (x * cur - prev) / (k as f64 + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// `He_n(x)` via `He_{n+1} = x He_n - n He_{n-1}`, `He_0 = 1`, `He_1 = x`.
pub fn hermite_prob(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for k in 1..n {
                let next = x * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Evaluate `He_n` across a slice (hot path for the Stein statistic).
pub fn hermite_prob_slice(n: u32, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| hermite_prob(n, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::quad::gauss_hermite_normal;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn low_degree_values() {
        assert_eq!(hermite_paper(2, 0.0), -0.5); // (x^2 - 1)/2
        assert_relative_eq!(hermite_paper(3, 1.0), -1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(hermite_prob(1, 3.7), 3.7);
        assert_eq!(hermite_prob(4, 0.0), 3.0); // x^4 - 6x^2 + 3
    }

    #[test]
    fn scaled_is_probabilists_over_factorial() {
        let mut fact = 1.0;
        for n in 0..=20u32 {
            if n > 0 {
                fact *= n as f64;
            }
            for &x in &[-3.0, -1.0, -0.17, 0.0, 0.5, 1.9, 4.2] {
                let he = hermite_prob(n, x);
                let h = hermite_paper(n, x);
                assert_relative_eq!(he, fact * h, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn recurrence_identity_holds() {
        for n in 1..=24u32 {
            for &x in &[-2.5, -0.3, 0.0, 1.0, 3.3] {
                let lhs = (n as f64 + 1.0) * hermite_paper(n + 1, x);
                let rhs = x * hermite_paper(n, x) - hermite_paper(n - 1, x);
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    /// H_q(x) against ((-1)^q / q!) e^{x^2/2} (d/dx)^q e^{-x^2/2}, the
    /// derivative taken by central finite differences with Richardson
    /// extrapolation. An oracle independent of any recurrence.
    #[test]
    fn matches_derivative_definition() {
        fn gauss(x: f64) -> f64 {
            (-x * x / 2.0).exp()
        }
        // q-th derivative by iterated central differences at two step sizes,
        // then one Richardson step (errors are O(h^2) and O((h/2)^2)).
        fn diff_n(f: &dyn Fn(f64) -> f64, x: f64, q: u32, h: f64) -> f64 {
            // central-difference stencil from binomial coefficients
            let q = q as i64;
            let mut acc = 0.0;
            let mut binom = 1.0f64;
            for k in 0..=q {
                let sign = if (q - k) % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * f(x + (k as f64 - q as f64 / 2.0) * h);
                binom = binom * (q - k) as f64 / (k + 1) as f64;
            }
            acc / h.powi(q as i32)
        }
        let mut fact = 1.0;
        for q in 1..=5u32 {
            fact *= q as f64;
            for &x in &[-1.0, 0.5, 2.0] {
                let h = 0.02;
                let d1 = diff_n(&gauss, x, q, h);
                let d2 = diff_n(&gauss, x, q, h / 2.0);
                let d = (4.0 * d2 - d1) / 3.0;
                let oracle = (-1.0f64).powi(q as i32) / fact * (x * x / 2.0).exp() * d;
                assert_relative_eq!(hermite_paper(q, x), oracle, max_relative = 5e-6, epsilon = 5e-8);
            }
        }
    }

    /// Orthogonality E[He_p(Z) He_q(Z)] = delta_pq p! by 64-node quadrature.
    #[test]
    fn orthogonality_under_gaussian_weight() {
        let (xs, ws) = gauss_hermite_normal(64);
        let mut fact = vec![1.0f64];
        for p in 1..=10 {
            fact.push(fact[p - 1] * p as f64);
        }
        for p in 0..=10u32 {
            for q in 0..=10u32 {
                let integral: f64 = xs
                    .iter()
                    .zip(&ws)
                    .map(|(&x, &w)| w * hermite_prob(p, x) * hermite_prob(q, x))
                    .sum();
                let want = if p == q { fact[p as usize] } else { 0.0 };
                assert_abs_diff_eq!(integral, want, epsilon = 1e-10 * fact[p.max(q) as usize]);
            }
        }
    }

    #[test]
    fn evaluator_degree_cap() {
        let ev = HermiteEvaluator::new(5, Normalization::Scaled);
        assert!(ev.eval(5, 0.3).is_ok());
        assert!(ev.eval(6, 0.3).is_err());
        let ev = HermiteEvaluator::new(5, Normalization::Probabilists);
        assert_eq!(ev.eval(4, 0.0).unwrap(), 3.0);
    }
}
