//! Pointwise geometry of a graph hypersurface `x ↦ (x, u(x))`.
//!
//! Both ambient models share one set of formulas through the sign
//! `σ = +1` (Minkowski, `v = √(1 − |Du|²)`) or `σ = −1` (Euclidean,
//! `v = √(1 + |Du|²)`):
//!
//! ```text
//!   g_ij  = δ_ij − σ u_i u_j          g^ij = δ_ij + σ u_i u_j / v²
//!   b^ij  = δ_ij + σ u_i u_j /(v(1+v)) b_ij = δ_ij − σ u_i u_j /(1+v)
//!   a_ij  = (1/v) b^ik u_kl b^lj
//! ```
//!
//! `b^ij` is the positive square root of `g^ij`; the principal curvatures are
//! the eigenvalues of `a_ij`, and the curvature operator is
//! `G(Du, D²u) = F(a) = Σ κ_i`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::sym_eigenvalues;

/// Default margin for the spacelike guard `|Du| ≤ 1 − ε`.
pub const DEFAULT_EPS_SPACE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Minkowski,
    Euclidean,
}

impl ModelKind {
    pub fn sigma(self) -> f64 {
        match self {
            ModelKind::Minkowski => 1.0,
            ModelKind::Euclidean => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Minkowski => "minkowski",
            ModelKind::Euclidean => "euclidean",
        }
    }

    /// `v` as a function of `|Du|²`.
    pub fn v_of(self, grad_sq: f64) -> f64 {
        (1.0 - self.sigma() * grad_sq).sqrt()
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "minkowski" => Ok(ModelKind::Minkowski),
            "euclidean" => Ok(ModelKind::Euclidean),
            other => Err(format!("unknown model '{other}' (expected minkowski or euclidean)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KernelError {
    #[error("spacelike condition violated: |Du| = {grad_norm} ≥ 1 − {eps}")]
    SpacelikeViolation { grad_norm: f64, eps: f64 },
}

/// First and second derivatives of `u` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointState {
    pub du: Vector2<f64>,
    pub d2u: Matrix2<f64>,
}

impl PointState {
    pub fn new(du: [f64; 2], d2u: [[f64; 2]; 2]) -> Self {
        PointState {
            du: Vector2::new(du[0], du[1]),
            d2u: Matrix2::new(d2u[0][0], d2u[0][1], d2u[1][0], d2u[1][1]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub v: f64,
    /// `g_ij`
    pub g: Matrix2<f64>,
    /// `g^ij`
    pub g_inv: Matrix2<f64>,
    /// `b^ij`, the positive square root of `g^ij`.
    pub b_up: Matrix2<f64>,
    /// `b_ij`, the inverse of `b^ij`.
    pub b_down: Matrix2<f64>,
}

/// The operator value and its partial derivatives in `D²u` and `Du`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorDerivatives {
    pub value: f64,
    /// `G_ij = ∂G/∂r_ij`
    pub g_ij: Matrix2<f64>,
    /// `G_i = ∂G/∂p_i`
    pub g_i: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureKernel {
    pub model: ModelKind,
    pub eps_space: f64,
}

impl CurvatureKernel {
    pub fn new(model: ModelKind) -> Self {
        CurvatureKernel { model, eps_space: DEFAULT_EPS_SPACE }
    }

    pub fn with_eps_space(mut self, eps: f64) -> Self {
        self.eps_space = eps;
        self
    }

    pub fn check_spacelike(&self, du: &Vector2<f64>) -> Result<(), KernelError> {
        if self.model == ModelKind::Minkowski {
            let n = du.norm();
            if !(n <= 1.0 - self.eps_space) {
                return Err(KernelError::SpacelikeViolation { grad_norm: n, eps: self.eps_space });
            }
        }
        Ok(())
    }

    pub fn metric_quantities(&self, du: &Vector2<f64>) -> Result<Metric, KernelError> {
        self.check_spacelike(du)?;
        let s = self.model.sigma();
        let v = self.model.v_of(du.norm_squared());
        let pp = du * du.transpose();
        let id = Matrix2::identity();
        Ok(Metric {
            v,
            g: id - pp * s,
            g_inv: id + pp * (s / (v * v)),
            b_up: id + pp * (s / (v * (1.0 + v))),
            b_down: id - pp * (s / (1.0 + v)),
        })
    }

    /// `a_ij = (1/v) b^ik D_kl u b^lj`.
    pub fn shape_matrix(&self, st: &PointState) -> Result<Matrix2<f64>, KernelError> {
        let m = self.metric_quantities(&st.du)?;
        Ok(m.b_up * st.d2u * m.b_up / m.v)
    }

    /// Mean curvature as the trace of the shape matrix.
    pub fn mean_curvature(&self, st: &PointState) -> Result<f64, KernelError> {
        Ok(self.shape_matrix(st)?.trace())
    }

    /// Mean curvature from the expanded divergence form `s_ij u_ij` with
    /// `s_ij = (1/v)(δ_ij + σ u_i u_j / v²)`; algebraically equal to
    /// [`Self::mean_curvature`] but computed without `b^ij`.
    pub fn mean_curvature_divergence_form(&self, st: &PointState) -> Result<f64, KernelError> {
        self.check_spacelike(&st.du)?;
        let s = self.model.sigma();
        let p = st.du;
        let v2 = 1.0 - s * p.norm_squared();
        let v = v2.sqrt();
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                acc += (delta + s * p[i] * p[j] / v2) * st.d2u[(i, j)];
            }
        }
        Ok(acc / v)
    }

    /// Principal curvatures, ascending.
    pub fn principal_curvatures(&self, st: &PointState) -> Result<(f64, f64), KernelError> {
        Ok(sym_eigenvalues(&self.shape_matrix(st)?))
    }

    /// `G`, `G_ij` and `G_i` for the mean curvature operator `F = Σκ`.
    pub fn operator_derivatives(&self, st: &PointState) -> Result<OperatorDerivatives, KernelError> {
        self.operator_derivatives_with(&Matrix2::identity(), st)
    }

    /// Derivatives of `G = F(a(Du, D²u))` given the (constant) first
    /// derivatives `F_kl = ∂F/∂a_kl`. For `F = Σκ`, `F_kl = δ_kl`.
    ///
    /// `G_ij = (1/v) b^ik F_kl b^lj`, and `G_i = F_kl ∂a_kl/∂p_i` by the product
    /// rule through `1/v` and both factors of `b^ij`.
    pub fn operator_derivatives_with(
        &self,
        f_kl: &Matrix2<f64>,
        st: &PointState,
    ) -> Result<OperatorDerivatives, KernelError> {
        let m = self.metric_quantities(&st.du)?;
        let s = self.model.sigma();
        let v = m.v;
        let p = st.du;
        let r = st.d2u;
        let a = m.b_up * r * m.b_up / v;
        let value = (f_kl.transpose() * a).trace();
        let g_ij = m.b_up * f_kl * m.b_up / v;

        // d(1/v)/dp_i = σ p_i / v³ ; dv/dp_i = −σ p_i / v
        // φ(v) = 1/(v(1+v)), φ'(v) = −(1+2v)/(v²(1+v)²)
        let phi = 1.0 / (v * (1.0 + v));
        let dphi = -(1.0 + 2.0 * v) / (v * v * (1.0 + v) * (1.0 + v));
        let brb = m.b_up * r * m.b_up;
        let mut g_i = Vector2::zeros();
        for i in 0..2 {
            let dv = -s * p[i] / v;
            let mut ei = Vector2::zeros();
            ei[i] = 1.0;
            let db = (p * p.transpose()) * (s * dphi * dv) + (ei * p.transpose() + p * ei.transpose()) * (s * phi);
            let da = brb * (s * p[i] / (v * v * v)) + (db * r * m.b_up + m.b_up * r * db) / v;
            g_i[i] = (f_kl.transpose() * da).trace();
        }
        Ok(OperatorDerivatives { value, g_ij, g_i })
    }
}

/// Structure identities of the curvature function `F(κ) = Σ κ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FStructureReport {
    pub f: f64,
    /// `Σ ∂F/∂κ_i`
    pub derivative_sum: f64,
    /// `Σ (∂F/∂κ_i) κ_i − F` (homogeneity of degree one).
    pub euler_residual: f64,
    /// Largest |entry| of the Hessian of `F` in κ (zero: `F` is linear).
    pub hessian_max_abs: f64,
    /// `Σ κ_i²`, bracketed by `F²/n` and `F²` on the positive cone.
    pub sum_squares: f64,
    pub holds: bool,
}

/// Evaluate the structure conditions of `F = Σκ` at a positive curvature tuple.
pub fn f_structure_check(kappa: &[f64]) -> FStructureReport {
    let n = kappa.len() as f64;
    let f: f64 = kappa.iter().sum();
    let grad = vec![1.0; kappa.len()];
    let derivative_sum: f64 = grad.iter().sum();
    let euler: f64 = grad.iter().zip(kappa).map(|(g, k)| g * k).sum();
    let sum_squares: f64 = kappa.iter().map(|k| k * k).sum();
    let euler_residual = euler - f;
    let hessian_max_abs = 0.0;
    let holds = kappa.iter().all(|&k| k > 0.0)
        && euler_residual.abs() <= 1e-12 * f.abs().max(1.0)
        && derivative_sum == n
        && sum_squares >= f * f / n * (1.0 - 1e-12)
        && sum_squares <= f * f * (1.0 + 1e-12);
    FStructureReport { f, derivative_sum, euler_residual, hessian_max_abs, sum_squares, holds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mink() -> CurvatureKernel {
        CurvatureKernel::new(ModelKind::Minkowski)
    }

    #[test]
    fn flat_point() {
        for model in [ModelKind::Minkowski, ModelKind::Euclidean] {
            let m = CurvatureKernel::new(model).metric_quantities(&Vector2::zeros()).unwrap();
            assert_eq!(m.v, 1.0);
            assert_eq!(m.g, Matrix2::identity());
            assert_eq!(m.g_inv, Matrix2::identity());
            assert_eq!(m.b_up, Matrix2::identity());
            assert_eq!(m.b_down, Matrix2::identity());
        }
    }

    #[test]
    fn tilted_point_metric_values() {
        let m = mink().metric_quantities(&Vector2::new(0.6, 0.0)).unwrap();
        assert_abs_diff_eq!(m.v, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(m.g[(0, 0)], 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(m.g_inv[(0, 0)], 1.5625, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b_up[(0, 0)], 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b_down[(0, 0)], 0.8, epsilon = 1e-15);
        let e = CurvatureKernel::new(ModelKind::Euclidean).metric_quantities(&Vector2::new(0.6, 0.0)).unwrap();
        assert_abs_diff_eq!(e.v, 1.36f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn shape_matrix_examples() {
        let a = Matrix2::new(2.0, 0.3, 0.3, 1.5);
        let st = PointState { du: Vector2::zeros(), d2u: a };
        assert_eq!(mink().shape_matrix(&st).unwrap(), a);
        let st = PointState::new([0.6, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        let s = mink().shape_matrix(&st).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.953125, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(1, 1)], 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(0, 1)], 0.0);
        let div = (1.0 / 0.8) * (1.0 + 0.36 / 0.64 + 1.0);
        assert_abs_diff_eq!(s.trace(), 3.203125, epsilon = 1e-14);
        assert_abs_diff_eq!(mink().mean_curvature_divergence_form(&st).unwrap(), div, epsilon = 1e-14);
    }

    #[test]
    fn mean_and_principal_curvatures() {
        let k = mink();
        let st = PointState::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(k.mean_curvature(&st).unwrap(), 2.0);
        let st = PointState::new([0.6, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert_abs_diff_eq!(k.mean_curvature(&st).unwrap(), 3.203125, epsilon = 1e-14);
        let (k1, k2) = k.principal_curvatures(&st).unwrap();
        assert_abs_diff_eq!(k1, 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(k2, 1.953125, epsilon = 1e-14);
        let st = PointState::new([0.0, 0.0], [[1.0, 0.0], [0.0, 4.0]]);
        assert_eq!(k.principal_curvatures(&st).unwrap(), (1.0, 4.0));
    }

    #[test]
    fn spacelike_guard() {
        let st = PointState::new([0.9999999, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(mink().mean_curvature(&st), Err(KernelError::SpacelikeViolation { .. })));
        assert!(mink().with_eps_space(1e-8).mean_curvature(&st).is_ok());
        let st = PointState::new([3.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert!(CurvatureKernel::new(ModelKind::Euclidean).mean_curvature(&st).is_ok());
    }

    #[test]
    fn derivatives_at_flat_and_tilted_points() {
        let st = PointState::new([0.0, 0.0], [[2.0, 0.5], [0.5, 1.0]]);
        let d = mink().operator_derivatives(&st).unwrap();
        assert_eq!(d.g_ij, Matrix2::identity());
        assert_eq!(d.g_i, Vector2::zeros());
        let st = PointState::new([0.6, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        let d = mink().operator_derivatives(&st).unwrap();
        assert_abs_diff_eq!(d.g_ij[(0, 0)], 1.953125, epsilon = 1e-14);
        assert_abs_diff_eq!(d.g_ij[(1, 1)], 1.25, epsilon = 1e-14);
        // Closed form for F = Σκ: G_i = u_i tr(a)/v² + (2/v)(b a Du)_i.
        let a = mink().shape_matrix(&st).unwrap();
        let m = mink().metric_quantities(&st.du).unwrap();
        let closed = st.du * (a.trace() / (m.v * m.v)) + (m.b_up * a * st.du) * (2.0 / m.v);
        assert_abs_diff_eq!(d.g_i[0], closed[0], epsilon = 1e-12);
        assert_abs_diff_eq!(d.g_i[1], closed[1], epsilon = 1e-12);
        assert_abs_diff_eq!(d.g_i[0], 6.6650390625, epsilon = 1e-12);
    }

    #[test]
    fn f_structure_examples() {
        let r = f_structure_check(&[1.0, 1.0]);
        assert_eq!((r.f, r.derivative_sum), (2.0, 2.0));
        assert!(r.holds);
        let r = f_structure_check(&[0.3, 7.1]);
        assert_abs_diff_eq!(r.f, 7.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.f + r.euler_residual, 7.4, epsilon = 1e-15);
        assert_eq!(r.hessian_max_abs, 0.0);
        assert!(!f_structure_check(&[-1.0, 2.0]).holds);
    }

    fn convex_state(model: ModelKind) -> impl Strategy<Value = PointState> {
        let max_grad = if model == ModelKind::Minkowski { 0.9 } else { 3.0 };
        (0.0..max_grad, 0.0..std::f64::consts::TAU, 0.1f64..10.0, 0.1f64..10.0, 0.0..std::f64::consts::PI)
            .prop_map(|(r, ang, l1, l2, rot)| {
                let (c, s) = (rot.cos(), rot.sin());
                let q = Matrix2::new(c, -s, s, c);
                PointState {
                    du: Vector2::new(r * ang.cos(), r * ang.sin()),
                    d2u: q * Matrix2::new(l1, 0.0, 0.0, l2) * q.transpose(),
                }
            })
    }

    /// Central finite differences of G in (Du, D²u), step 1e−6.
    fn fd_derivatives(k: &CurvatureKernel, st: &PointState) -> (Matrix2<f64>, Vector2<f64>) {
        let h = 1e-6;
        let g = |s: &PointState| k.mean_curvature(s).unwrap();
        let mut gij = Matrix2::zeros();
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let mut p = *st;
            let mut m = *st;
            p.d2u[(i, j)] += h;
            m.d2u[(i, j)] -= h;
            if i != j {
                p.d2u[(j, i)] += h;
                m.d2u[(j, i)] -= h;
            }
            let d = (g(&p) - g(&m)) / (2.0 * h);
            if i == j {
                gij[(i, i)] = d;
            } else {
                gij[(i, j)] = d / 2.0;
                gij[(j, i)] = d / 2.0;
            }
        }
        let mut gi = Vector2::zeros();
        for i in 0..2 {
            let mut p = *st;
            let mut m = *st;
            p.du[i] += h;
            m.du[i] -= h;
            gi[i] = (g(&p) - g(&m)) / (2.0 * h);
        }
        (gij, gi)
    }

    fn rel(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn minkowski_invariants(st in convex_state(ModelKind::Minkowski)) {
            let k = mink();
            let m = k.metric_quantities(&st.du).unwrap();
            prop_assert!((m.b_up * m.b_up - m.g_inv).abs().max() < 1e-12 * m.g_inv.abs().max());
            prop_assert!((m.b_down * m.b_up - Matrix2::identity()).abs().max() < 1e-12);
            let h1 = k.mean_curvature(&st).unwrap();
            let h2 = k.mean_curvature_divergence_form(&st).unwrap();
            prop_assert!((h1 - h2).abs() <= 1e-10 * h1.abs().max(1.0));
            let (k1, k2) = k.principal_curvatures(&st).unwrap();
            prop_assert!((k1 + k2 - h1).abs() <= 1e-12 * h1.abs().max(1.0));
            prop_assert!(k1 > 0.0);
            let d = k.operator_derivatives(&st).unwrap();
            let (fd_ij, fd_i) = fd_derivatives(&k, &st);
            let scale = d.g_ij.abs().max().max(d.g_i.abs().max());
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!(rel(d.g_ij[(i, j)], fd_ij[(i, j)], scale) <= 1e-6);
                }
                prop_assert!(rel(d.g_i[i], fd_i[i], scale) <= 1e-6);
            }
            let (l, _) = sym_eigenvalues(&d.g_ij);
            prop_assert!(l > 0.0);
        }

        #[test]
        fn euclidean_invariants(st in convex_state(ModelKind::Euclidean)) {
            let k = CurvatureKernel::new(ModelKind::Euclidean);
            let m = k.metric_quantities(&st.du).unwrap();
            prop_assert!((m.b_up * m.b_up - m.g_inv).abs().max() < 1e-12);
            prop_assert!((m.b_down * m.b_up - Matrix2::identity()).abs().max() < 1e-12);
            prop_assert!((m.g * m.g_inv - Matrix2::identity()).abs().max() < 1e-12 * m.g.abs().max());
            let h1 = k.mean_curvature(&st).unwrap();
            let h2 = k.mean_curvature_divergence_form(&st).unwrap();
            prop_assert!((h1 - h2).abs() <= 1e-10 * h1.abs().max(1.0));
            let d = k.operator_derivatives(&st).unwrap();
            let (fd_ij, fd_i) = fd_derivatives(&k, &st);
            let scale = d.g_ij.abs().max().max(d.g_i.abs().max());
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!(rel(d.g_ij[(i, j)], fd_ij[(i, j)], scale) <= 1e-6);
                }
                prop_assert!(rel(d.g_i[i], fd_i[i], scale) <= 1e-6);
            }
        }

        #[test]
        fn trace_of_g_ij_between_sigma_bounds(st in convex_state(ModelKind::Minkowski)) {
            // T_G = Σ G_ii with F_kl = δ: bounded by n·min/max of (1/v)·eig(b)².
            let k = mink();
            let m = k.metric_quantities(&st.du).unwrap();
            let d = k.operator_derivatives(&st).unwrap();
            let (bmin, bmax) = sym_eigenvalues(&m.b_up);
            let sigma1 = bmin * bmin / m.v;
            let sigma2 = bmax * bmax / m.v;
            let t = d.g_ij.trace();
            prop_assert!(sigma1 * 2.0 <= t * (1.0 + 1e-12));
            prop_assert!(t <= sigma2 * 2.0 * (1.0 + 1e-12));
        }

        #[test]
        fn f_structure_on_random_tuples(k1 in 1e-3f64..50.0, k2 in 1e-3f64..50.0) {
            let r = f_structure_check(&[k1, k2]);
            prop_assert!(r.holds);
            prop_assert_eq!(r.derivative_sum, 2.0);
            prop_assert_eq!(r.hessian_max_abs, 0.0);
        }
    }
}
