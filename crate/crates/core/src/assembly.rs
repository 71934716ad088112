//! Discrete nonlinear system and its analytic Jacobian.
//!
//! Unknowns are the nodal values `u_0..u_{N−1}` followed by `c`. Rows:
//!
//! - pole and interior nodes: `G(Du, D²u) − c`,
//! - boundary ring: `h_image(Du)`, the defining function of the gradient image,
//! - last row: `Σ w_k u_k` (mean zero).
//!
//! In the dual problem the grid covers the target, the interior operator is
//! `G̃(y, D²ũ) = −G(y, (D²ũ)⁻¹)` and the boundary rows use the defining
//! function of the original domain.
//!
//! The Jacobian differentiates exactly this residual: each row depends on the
//! Cartesian derivatives at its node, which are linear in `u` through the grid
//! stencils, so a row is `q · ∂(derivatives)/∂u` with `q` the operator
//! derivative in `(u_x, u_y, u_xx, u_xy, u_yy)`.
//!
//! Triplet dump format: a header line `row,col,value`, then one line per
//! stored entry; duplicates are to be summed.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::domain::{ConvexDomain, DomainError};
use crate::field::SolutionField;
use crate::grid::{GridError, MappedGrid, NodeKind};
use crate::kernel::{CurvatureKernel, KernelError, ModelKind, PointState, DEFAULT_EPS_SPACE};

/// Boundary samples used to check that the target lies inside the unit ball.
const SPACELIKE_SAMPLES: usize = 720;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Primal,
    Dual,
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("spacelike condition violated at node {node}: |Du| = {grad_norm}")]
    SpacelikeViolation { node: usize, grad_norm: f64 },
    #[error("target is not strictly inside the unit ball: max |y| = {max_norm} > {limit}")]
    TargetNotSpacelike { max_norm: f64, limit: f64 },
    #[error("singular Hessian at node {node}")]
    SingularHessian { node: usize },
    #[error("field does not match the problem: {0}")]
    FieldMismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A discretized problem instance.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub omega: ConvexDomain,
    pub omega_tilde: ConvexDomain,
    pub model: ModelKind,
    /// Covers `omega` for the primal problem and `omega_tilde` for the dual.
    pub grid: Arc<MappedGrid>,
    pub operator: OperatorKind,
    pub kernel: CurvatureKernel,
}

/// Residual value and operator derivative at one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowLinearization {
    /// Row value without the `−c` term.
    pub value: f64,
    /// Derivative in `(u_x, u_y, u_xx, u_xy, u_yy)`.
    pub q: [f64; 5],
}

impl ProblemSpec {
    pub fn new(
        model: ModelKind,
        omega: ConvexDomain,
        omega_tilde: ConvexDomain,
        n_rho: usize,
        n_phi: usize,
    ) -> Result<Self, AssemblyError> {
        let grid = Arc::new(MappedGrid::new(&omega, n_rho, n_phi)?);
        Self::with_grid(model, omega, omega_tilde, grid, OperatorKind::Primal, DEFAULT_EPS_SPACE)
    }

    /// Build from an existing grid; the grid must cover `omega` (primal) or
    /// `omega_tilde` (dual).
    pub fn with_grid(
        model: ModelKind,
        omega: ConvexDomain,
        omega_tilde: ConvexDomain,
        grid: Arc<MappedGrid>,
        operator: OperatorKind,
        eps_space: f64,
    ) -> Result<Self, AssemblyError> {
        let covered = match operator {
            OperatorKind::Primal => &omega,
            OperatorKind::Dual => &omega_tilde,
        };
        if grid.domain() != covered {
            return Err(AssemblyError::FieldMismatch("grid does not cover the solution domain".into()));
        }
        let spec = ProblemSpec {
            omega,
            omega_tilde,
            model,
            grid,
            operator,
            kernel: CurvatureKernel::new(model).with_eps_space(eps_space),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The dual problem on a grid over `omega_tilde`.
    pub fn dual(&self, n_rho: usize, n_phi: usize) -> Result<Self, AssemblyError> {
        let grid = Arc::new(MappedGrid::new(&self.omega_tilde, n_rho, n_phi)?);
        Self::with_grid(
            self.model,
            self.omega.clone(),
            self.omega_tilde.clone(),
            grid,
            OperatorKind::Dual,
            self.kernel.eps_space,
        )
    }

    /// Same problem data on another grid resolution.
    pub fn regrid(&self, n_rho: usize, n_phi: usize) -> Result<Self, AssemblyError> {
        let grid = Arc::new(MappedGrid::new(self.solution_domain(), n_rho, n_phi)?);
        Self::with_grid(
            self.model,
            self.omega.clone(),
            self.omega_tilde.clone(),
            grid,
            self.operator,
            self.kernel.eps_space,
        )
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        if self.model == ModelKind::Minkowski {
            let max_norm = max_boundary_norm(&self.omega_tilde)?;
            let limit = 1.0 - self.kernel.eps_space;
            if !(max_norm <= limit) {
                return Err(AssemblyError::TargetNotSpacelike { max_norm, limit });
            }
        }
        Ok(())
    }

    pub fn eps_space(&self) -> f64 {
        self.kernel.eps_space
    }

    pub fn is_dual(&self) -> bool {
        self.operator == OperatorKind::Dual
    }

    /// Domain covered by the grid.
    pub fn solution_domain(&self) -> &ConvexDomain {
        match self.operator {
            OperatorKind::Primal => &self.omega,
            OperatorKind::Dual => &self.omega_tilde,
        }
    }

    /// Domain whose defining function is imposed on `Du` at the boundary.
    pub fn image_domain(&self) -> &ConvexDomain {
        match self.operator {
            OperatorKind::Primal => &self.omega_tilde,
            OperatorKind::Dual => &self.omega,
        }
    }

    /// Number of unknowns (nodes plus `c`).
    pub fn len(&self) -> usize {
        self.grid.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn field(&self, u: Vec<f64>, c: f64) -> Result<SolutionField, AssemblyError> {
        Ok(SolutionField::new(
            self.grid.clone(),
            self.image_domain().clone(),
            self.model,
            self.is_dual(),
            u,
            c,
        )?)
    }

    pub fn check_field(&self, field: &SolutionField) -> Result<(), AssemblyError> {
        if field.model != self.model || field.dual != self.is_dual() {
            return Err(AssemblyError::FieldMismatch("model or primal/dual flag differs".into()));
        }
        if field.grid.domain() != self.solution_domain() || field.image != *self.image_domain() {
            return Err(AssemblyError::FieldMismatch("domains differ".into()));
        }
        if field.grid.n_rho() != self.grid.n_rho() || field.grid.n_phi() != self.grid.n_phi() {
            return Err(AssemblyError::FieldMismatch("grid resolution differs".into()));
        }
        Ok(())
    }

    /// Row value and derivative at node `k` from its Cartesian derivatives.
    pub fn linearize_row(&self, k: usize, cart: &[f64; 5]) -> Result<RowLinearization, AssemblyError> {
        let du = Vector2::new(cart[0], cart[1]);
        if self.grid.kind(k) == NodeKind::Boundary {
            let e = self.image_domain().eval_defining(&du);
            return Ok(RowLinearization { value: e.value, q: [e.grad[0], e.grad[1], 0.0, 0.0, 0.0] });
        }
        let d2u = nalgebra::Matrix2::new(cart[2], cart[3], cart[3], cart[4]);
        let spacelike = |e: KernelError| match e {
            KernelError::SpacelikeViolation { grad_norm, .. } => AssemblyError::SpacelikeViolation { node: k, grad_norm },
        };
        match self.operator {
            OperatorKind::Primal => {
                let od = self.kernel.operator_derivatives(&PointState { du, d2u }).map_err(spacelike)?;
                Ok(RowLinearization {
                    value: od.value,
                    q: [od.g_i[0], od.g_i[1], od.g_ij[(0, 0)], od.g_ij[(0, 1)] + od.g_ij[(1, 0)], od.g_ij[(1, 1)]],
                })
            }
            OperatorKind::Dual => {
                let det = d2u.determinant();
                let scale = d2u.abs().max().powi(2);
                if !(det.abs() > 1e-14 * scale) {
                    return Err(AssemblyError::SingularHessian { node: k });
                }
                let inv = d2u.try_inverse().ok_or(AssemblyError::SingularHessian { node: k })?;
                let y = self.grid.node(k);
                let od = self.kernel.operator_derivatives(&PointState { du: y, d2u: inv }).map_err(spacelike)?;
                let d = inv * od.g_ij * inv;
                Ok(RowLinearization {
                    value: -od.value,
                    q: [0.0, 0.0, d[(0, 0)], d[(0, 1)] + d[(1, 0)], d[(1, 1)]],
                })
            }
        }
    }

    fn row_cart(&self, u: &[f64], k: usize) -> [f64; 5] {
        self.grid.cart_derivatives(u, k)
    }

    /// Residual of length `N + 1`.
    pub fn residual(&self, u: &[f64], c: f64) -> Result<Vec<f64>, AssemblyError> {
        self.grid.check_len(u.len())?;
        let mut out: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|k| {
                if self.grid.kind(k) == NodeKind::Boundary {
                    let g = self.grid.node_derivatives(u, k).du;
                    return Ok(self.image_domain().h(&g));
                }
                let row = self.linearize_row(k, &self.row_cart(u, k))?;
                Ok(row.value - c)
            })
            .collect::<Result<_, AssemblyError>>()?;
        out.push(self.grid.integrate(u));
        Ok(out)
    }

    /// Row linearizations at every node.
    pub fn linearize(&self, u: &[f64]) -> Result<Vec<RowLinearization>, AssemblyError> {
        self.grid.check_len(u.len())?;
        (0..self.grid.len())
            .into_par_iter()
            .map(|k| self.linearize_row(k, &self.row_cart(u, k)))
            .collect()
    }

    /// Visit the `u`-column entries of row `k` given its operator derivative
    /// `q`. The order and count of visits depend only on the grid, the diagonal
    /// comes last.
    pub fn for_each_row_entry(&self, k: usize, q: &[f64; 5], mut f: impl FnMut(usize, f64)) {
        let mut diag = 0.0;
        if self.grid.kind(k) == NodeKind::Boundary {
            self.grid.for_each_gradient_entry(k, |m, cc| {
                let v = q[0] * cc[0] + q[1] * cc[1];
                diag -= v;
                f(m, v);
            });
        } else {
            self.grid.for_each_cart_entry(k, |m, cc| {
                let v = q[0] * cc[0] + q[1] * cc[1] + q[2] * cc[2] + q[3] * cc[3] + q[4] * cc[4];
                diag -= v;
                f(m, v);
            });
        }
        f(k, diag);
    }

    /// Full `(N+1) × (N+1)` Jacobian as `(row, col, value)` triplets
    /// (duplicates summed by the consumer).
    pub fn jacobian_triplets(&self, u: &[f64]) -> Result<Vec<(usize, usize, f64)>, AssemblyError> {
        let rows = self.linearize(u)?;
        let n = self.grid.len();
        let mut out: Vec<(usize, usize, f64)> = rows
            .par_iter()
            .enumerate()
            .flat_map_iter(|(k, row)| {
                let mut entries = Vec::new();
                self.for_each_row_entry(k, &row.q, |m, v| entries.push((k, m, v)));
                if self.grid.kind(k) != NodeKind::Boundary {
                    entries.push((k, n, -1.0));
                }
                entries
            })
            .collect();
        out.extend(self.grid.weights().iter().enumerate().map(|(m, w)| (n, m, *w)));
        Ok(out)
    }

    /// Dense Jacobian (small grids only; used for checks).
    pub fn jacobian_dense(&self, u: &[f64]) -> Result<nalgebra::DMatrix<f64>, AssemblyError> {
        let n = self.len();
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for (r, c, v) in self.jacobian_triplets(u)? {
            a[(r, c)] += v;
        }
        Ok(a)
    }
}

/// Residual of a field against its problem.
pub fn residual(spec: &ProblemSpec, field: &SolutionField) -> Result<Vec<f64>, AssemblyError> {
    spec.check_field(field)?;
    spec.residual(&field.u, field.c)
}

/// Jacobian triplets of a field against its problem.
pub fn jacobian(spec: &ProblemSpec, field: &SolutionField) -> Result<Vec<(usize, usize, f64)>, AssemblyError> {
    spec.check_field(field)?;
    spec.jacobian_triplets(&field.u)
}

/// Write triplets in the documented `row,col,value` text format.
pub fn write_triplets(path: &Path, triplets: &[(usize, usize, f64)]) -> Result<(), AssemblyError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "row,col,value")?;
    for (r, c, v) in triplets {
        writeln!(w, "{r},{c},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Largest `|y|` over the boundary of a domain (exact for discs, sampled
/// otherwise).
pub fn max_boundary_norm(domain: &ConvexDomain) -> Result<f64, DomainError> {
    if let Some((center, radius)) = domain.as_ball() {
        return Ok(center.norm() + radius);
    }
    let mut best: f64 = 0.0;
    for k in 0..SPACELIKE_SAMPLES {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / SPACELIKE_SAMPLES as f64;
        best = best.max(domain.boundary_point(phi)?.norm());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::RadialSolution;
    use rand::{Rng, SeedableRng};

    fn ball(cx: f64, cy: f64, r: f64) -> ConvexDomain {
        ConvexDomain::ball([cx, cy], r).unwrap()
    }

    fn radial_spec(n_rho: usize, n_phi: usize) -> ProblemSpec {
        ProblemSpec::new(ModelKind::Minkowski, ball(0.0, 0.0, 1.0), ball(0.0, 0.0, 0.5), n_rho, n_phi).unwrap()
    }

    #[test]
    fn target_outside_unit_ball_is_rejected() {
        let e = ProblemSpec::new(ModelKind::Minkowski, ball(0.0, 0.0, 1.0), ball(0.0, 0.0, 1.01), 8, 16);
        assert!(matches!(e, Err(AssemblyError::TargetNotSpacelike { .. })));
        assert!(ProblemSpec::new(ModelKind::Euclidean, ball(0.0, 0.0, 1.0), ball(0.0, 0.0, 1.01), 8, 16).is_ok());
    }

    #[test]
    fn zero_field_residual() {
        let spec = ProblemSpec::new(ModelKind::Minkowski, ball(0.0, 0.0, 1.0), ball(0.1, 0.0, 0.5), 8, 16).unwrap();
        let r = spec.residual(&vec![0.0; spec.grid.len()], 0.0).unwrap();
        let h0 = spec.omega_tilde.h(&Vector2::zeros());
        assert!(h0 > 0.0);
        for k in 0..spec.grid.len() {
            let expect = if spec.grid.kind(k) == NodeKind::Boundary { h0 } else { 0.0 };
            assert!((r[k] - expect).abs() < 1e-14);
        }
        assert_eq!(r.len(), spec.len());
    }

    #[test]
    fn quadratic_maps_ball_boundary_onto_target_boundary() {
        let lambda = 0.45;
        let spec = ProblemSpec::new(ModelKind::Minkowski, ball(0.0, 0.0, 1.0), ball(0.0, 0.0, lambda), 16, 32).unwrap();
        let u: Vec<f64> = spec.grid.nodes().iter().map(|x| 0.5 * lambda * x.norm_squared()).collect();
        let r = spec.residual(&u, 1.0).unwrap();
        for k in spec.grid.boundary_nodes() {
            assert!(r[k].abs() <= 1e-9);
        }
    }

    #[test]
    fn exact_radial_residual_converges_at_second_order() {
        let sol = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.5).unwrap();
        let err = |n: usize| {
            let spec = radial_spec(n, 2 * n);
            let u = sol.seed(&spec.grid, Vector2::zeros(), Vector2::zeros());
            let r = spec.residual(&u, sol.c).unwrap();
            r[..spec.grid.len()].iter().fold(0.0f64, |a, b| a.max(b.abs()))
        };
        let (e1, e2, e3) = (err(8), err(16), err(32));
        assert!((e1 / e2).log2() >= 1.8, "{e1} {e2}");
        assert!((e2 / e3).log2() >= 1.8, "{e2} {e3}");
    }

    #[test]
    fn c_column_structure() {
        let spec = radial_spec(6, 12);
        let u: Vec<f64> = spec.grid.nodes().iter().map(|x| 0.2 * x.norm_squared()).collect();
        let a = spec.jacobian_dense(&u).unwrap();
        let n = spec.grid.len();
        for k in 0..n {
            let expect = if spec.grid.kind(k) == NodeKind::Boundary { 0.0 } else { -1.0 };
            assert_eq!(a[(k, n)], expect);
        }
        assert_eq!(a[(n, n)], 0.0);
        // Rows annihilate constants.
        for k in 0..n {
            let s: f64 = (0..n).map(|m| a[(k, m)]).sum();
            assert!(s.abs() < 1e-9 * (0..n).map(|m| a[(k, m)].abs()).fold(0.0, f64::max));
        }
    }

    fn random_convex_field(spec: &ProblemSpec, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: f64 = rng.gen_range(0.2..0.4);
        let b: f64 = rng.gen_range(0.2..0.4);
        let cxy: f64 = rng.gen_range(-0.05..0.05);
        let s: Vector2<f64> = Vector2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let amp: f64 = rng.gen_range(0.0..0.02);
        spec.grid
            .nodes()
            .iter()
            .map(|x| {
                0.5 * a * x[0] * x[0] + cxy * x[0] * x[1] + 0.5 * b * x[1] * x[1] + s.dot(x)
                    + amp * (1.3 * x[0] - 0.7 * x[1]).sin()
            })
            .collect()
    }

    fn fd_check(spec: &ProblemSpec, u: &[f64], c: f64) -> f64 {
        fd_check_step(spec, u, c, 1e-6)
    }

    fn fd_check_step(spec: &ProblemSpec, u: &[f64], c: f64, h: f64) -> f64 {
        let a = spec.jacobian_dense(u).unwrap();
        let n = spec.len();
        let mut worst: f64 = 0.0;
        let scale = a.abs().max();
        for col in 0..n {
            let (mut up, mut um) = (u.to_vec(), u.to_vec());
            let (mut cp, mut cm) = (c, c);
            if col < n - 1 {
                up[col] += h;
                um[col] -= h;
            } else {
                cp += h;
                cm -= h;
            }
            let rp = spec.residual(&up, cp).unwrap();
            let rm = spec.residual(&um, cm).unwrap();
            for row in 0..n {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                worst = worst.max((fd - a[(row, col)]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences_primal() {
        for (seed, dom) in [(1u64, ball(0.0, 0.0, 1.0)), (2, ConvexDomain::ellipse([0.1, 0.0], [1.0, 0.8]).unwrap())] {
            for model in [ModelKind::Minkowski, ModelKind::Euclidean] {
                let spec = ProblemSpec::new(model, dom.clone(), ConvexDomain::ellipse([0.05, 0.0], [0.4, 0.3]).unwrap(), 12, 24)
                    .unwrap();
                let u = random_convex_field(&spec, seed);
                let worst = fd_check(&spec, &u, 0.7);
                assert!(worst <= 1e-5, "{model} relative error {worst}");
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_dual() {
        let primal = ProblemSpec::new(
            ModelKind::Minkowski,
            ConvexDomain::ellipse([0.0, 0.0], [1.0, 0.8]).unwrap(),
            ball(0.0, 0.0, 0.4),
            8,
            16,
        )
        .unwrap();
        let spec = primal.dual(8, 16).unwrap();
        let u: Vec<f64> = spec.grid.nodes().iter().map(|y| 1.5 * y[0] * y[0] + 1.2 * y[1] * y[1] + 0.3 * y[0] * y[1]).collect();
        // G̃ is strongly curved in D²ũ; the central-difference error drops as h².
        let coarse = fd_check_step(&spec, &u, -1.0, 1e-6);
        let worst = fd_check_step(&spec, &u, -1.0, 1e-7);
        assert!(worst <= 1e-5, "relative error {worst}");
        assert!(coarse / worst > 50.0);
    }

    #[test]
    fn dual_rows_match_inverse_hessian_identity() {
        let primal = radial_spec(8, 16);
        let spec = primal.dual(8, 16).unwrap();
        let lambda = 0.45;
        let u: Vec<f64> = spec.grid.nodes().iter().map(|y| y.norm_squared() / (2.0 * lambda)).collect();
        let r = spec.residual(&u, 0.0).unwrap();
        for k in 0..spec.grid.len() {
            if spec.grid.kind(k) == NodeKind::Boundary {
                continue;
            }
            let y = spec.grid.node(k);
            let g = spec.kernel.mean_curvature(&PointState { du: y, d2u: nalgebra::Matrix2::identity() * lambda }).unwrap();
            assert!((r[k] + g).abs() < 1e-9);
        }
    }

    #[test]
    fn spacelike_violation_is_reported() {
        let spec = radial_spec(8, 16);
        let u: Vec<f64> = spec.grid.nodes().iter().map(|x| 0.6 * x.norm_squared()).collect();
        match spec.residual(&u, 0.0) {
            Err(AssemblyError::SpacelikeViolation { grad_norm, .. }) => assert!(grad_norm >= 1.0 - 1e-6),
            other => panic!("expected spacelike violation, got {other:?}"),
        }
        // Non-convex states are fine.
        let u: Vec<f64> = spec.grid.nodes().iter().map(|x| -0.1 * x.norm_squared()).collect();
        assert!(spec.residual(&u, 0.0).is_ok());
    }

    #[test]
    fn triplet_dump() {
        let spec = radial_spec(4, 8);
        let u = vec![0.0; spec.grid.len()];
        let t = spec.jacobian_triplets(&u).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j.txt");
        write_triplets(&p, &t).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), t.len() + 1);
        assert!(text.starts_with("row,col,value\n"));
    }
}
