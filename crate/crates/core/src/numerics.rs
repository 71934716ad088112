//! Small numerical building blocks shared by the grid and the solvers.

use nalgebra::Matrix2;
use std::f64::consts::PI;

/// Finite-difference weights on arbitrary nodes (Fornberg's recursion).
///
/// Returns `w[d][k]`, the weight of node `xs[k]` in the approximation of the
/// `d`-th derivative at `x0`, for `d = 0..=max_order`.
pub(crate) fn fd_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// First row of the periodic Fourier differentiation matrices on `n` equally
/// spaced points (`n` even). Entry `k` couples node `j` to node `j + k`.
#[derive(Clone, Debug)]
pub(crate) struct FourierRows {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl FourierRows {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n % 2 == 0, "Fourier differentiation needs an even point count");
        let h = 2.0 * PI / n as f64;
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        d2[0] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
        for k in 1..n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let half = k as f64 * h / 2.0;
            // D1[j][j+k] = -D1[j+k][j]; coupling from j to j+k carries the offset -k.
            d1[k] = -0.5 * sign / half.tan();
            let s = half.sin();
            d2[k] = -sign / (2.0 * s * s);
        }
        // Enforce exact antisymmetry so rows annihilate constants pairwise.
        for k in 1..n / 2 {
            d1[n - k] = -d1[k];
        }
        d1[n / 2] = 0.0;
        for k in 1..n / 2 {
            d2[n - k] = d2[k];
        }
        Self { d1, d2 }
    }
}

/// Lagrange interpolation weights for the nodes `xs` at `x`.
pub(crate) fn lagrange_weights(x: f64, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            xs.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| (x - xj) / (xi - xj))
                .product()
        })
        .collect()
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub(crate) fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Bracketed safeguarded Newton iteration for a scalar root on `[lo, hi]`,
/// with `f(lo)` and `f(hi)` of opposite sign.
pub(crate) fn safeguarded_newton(
    f: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    max_iter: usize,
) -> Option<f64> {
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let lo_positive = flo > 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if (fx > 0.0) == lo_positive {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = if dfx != 0.0 { x - fx / dfx } else { f64::NAN };
        if !(next > lo.min(hi) && next < lo.max(hi)) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Some(x);
        }
    }
    Some(x)
}
