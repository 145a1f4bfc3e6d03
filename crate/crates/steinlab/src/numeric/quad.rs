//! Gaussian quadrature rules computed at runtime by Newton iteration on the
//! orthogonal-polynomial recurrences. Deterministic, no tables to transcribe.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate f over [a, b] with an n-node Gauss-Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (xs, ws) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    xs.iter().zip(&ws).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Gauss-Hermite rule for the physicists' weight exp(-t^2) on the real line.
pub fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64 + 1.0;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 5e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Hermite rule against the standard normal density: returns nodes and
/// weights so that E[f(Z)] ~ sum_i w_i f(x_i) for Z ~ N(0,1).
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, v) = gauss_hermite_physicists(n);
    let s = std::f64::consts::PI.sqrt();
    let nodes = t.iter().map(|&ti| std::f64::consts::SQRT_2 * ti).collect();
    let weights = v.iter().map(|&vi| vi / s).collect();
    (nodes, weights)
}

/// `int_a^inf x^{-beta} (x+m)^{-beta} dx` for real `m >= 0`, `a >= 1`.
///
/// For m > 0 substitute u = 1/(1 + x/m), then u = x0 s^{1/(2 beta - 1)} with
/// x0 = m/(m+a); the integrand becomes (1 - x0 s^{1/(2b-1)})^{-beta}, smooth
/// on [0,1] whenever x0 < 1, so a 64-node Gauss-Legendre rule is exact to
/// near machine precision.
pub fn power_product_tail_integral(a: f64, m: f64, beta: f64) -> f64 {
    assert!(a >= 1.0 && m >= 0.0);
    if m == 0.0 {
        return a.powf(1.0 - 2.0 * beta) / (2.0 * beta - 1.0);
    }
    let x0 = m / (m + a);
    let p = 1.0 / (2.0 * beta - 1.0);
    let smooth = integrate(|s| (1.0 - x0 * s.powf(p)).powf(-beta), 0.0, 1.0, 64);
    m.powf(1.0 - 2.0 * beta) * x0.powf(2.0 * beta - 1.0) * p * smooth
}

/// Euler-Maclaurin value of the tail sum `sum_{i >= a} i^{-beta} (i+m)^{-beta}`.
pub fn power_product_tail_sum(a: f64, m: f64, beta: f64) -> f64 {
    let f = |x: f64| x.powf(-beta) * (x + m).powf(-beta);
    // derivatives of u v with u = x^-b, v = (x+m)^-b
    let du = |x: f64, k: i32| -> f64 {
        let mut c = 1.0;
        for j in 0..k {
            c *= -beta - j as f64;
        }
        c * x.powf(-beta - k as f64)
    };
    let dv = |x: f64, k: i32| -> f64 {
        let mut c = 1.0;
        for j in 0..k {
            c *= -beta - j as f64;
        }
        c * (x + m).powf(-beta - k as f64)
    };
    let f1 = du(a, 1) * dv(a, 0) + du(a, 0) * dv(a, 1);
    let f3 = du(a, 3) * dv(a, 0)
        + 3.0 * du(a, 2) * dv(a, 1)
        + 3.0 * du(a, 1) * dv(a, 2)
        + du(a, 0) * dv(a, 3);
    power_product_tail_integral(a, m, beta) + f(a) / 2.0 - f1 / 12.0 + f3 / 720.0
}
