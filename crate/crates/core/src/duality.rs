//! Legendre transform of solved fields and the independent dual solve.
//!
//! For a convex `u` on `Ω` with `Du(Ω) = Ω̃` the conjugate is
//! `ũ(y) = x·y − u(x)` with `y = Du(x)`, so `Dũ(y) = x` and
//! `D²ũ(y) = [D²u(x)]⁻¹`. The dual equation reads `G̃(y, D²ũ) = −c`.
//!
//! A dual field is an ordinary [`SolutionField`] with `dual = true`: its grid
//! covers `Ω̃`, its image domain is `Ω`, and its constant is the dual system's
//! own constant (`−c` when it matches a primal field).

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

use crate::assembly::{AssemblyError, OperatorKind, ProblemSpec};
use crate::field::SolutionField;
use crate::grid::{GridError, MappedGrid, NodeKind};
use crate::homotopy::{run_homotopy, HomotopyError, HomotopyOutcome, HomotopyProblem, HomotopySchedule};
use crate::kernel::{CurvatureKernel, KernelError, ModelKind, PointState};
use crate::numerics::sym_eigenvalues;
use crate::solver::{IterationRecord, SolveOptions};

pub const INVERSION_MAX_ITER: usize = 30;
pub const INVERSION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DualityError {
    #[error("gradient inversion failed at y = ({}, {}): |Du(x) − y| = {residual}, boundary gap {boundary_gap}", y[0], y[1])]
    InversionFailure { y: Vector2<f64>, residual: f64, boundary_gap: f64 },
    #[error("singular Hessian at dual node {node}")]
    SingularHessian { node: usize },
    #[error("dual grid must cover the gradient image of the field")]
    GridMismatch,
    #[error("spacelike condition violated at dual node {node}")]
    Spacelike { node: usize },
    #[error("dual constant {c_tilde} does not match −c = {expected}")]
    SignMismatch { c_tilde: f64, expected: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Homotopy(#[from] HomotopyError),
}

/// A field on the gradient image, with preimages when it came from a transform.
#[derive(Clone, Debug)]
pub struct DualField {
    pub field: SolutionField,
    /// `x` with `Du(x) = y` per dual node (transform only).
    pub preimages: Option<Vec<Vector2<f64>>>,
}

impl DualField {
    pub fn grid(&self) -> &MappedGrid {
        &self.field.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.field.u
    }

    pub fn c(&self) -> f64 {
        self.field.c
    }
}

/// Interpolant of a field's nodal gradient and Hessian.
struct DerivativeInterpolant<'a> {
    grid: &'a MappedGrid,
    u: &'a [f64],
    comps: [Vec<f64>; 5],
}

impl<'a> DerivativeInterpolant<'a> {
    fn new(field: &'a SolutionField) -> Result<Self, GridError> {
        let d = field.grid.derivatives(&field.u)?;
        let comp = |f: fn(&crate::grid::NodeDerivatives) -> f64| d.iter().map(f).collect::<Vec<_>>();
        Ok(DerivativeInterpolant {
            grid: &field.grid,
            u: &field.u,
            comps: [
                comp(|n| n.du[0]),
                comp(|n| n.du[1]),
                comp(|n| n.d2u[(0, 0)]),
                comp(|n| n.d2u[(0, 1)]),
                comp(|n| n.d2u[(1, 1)]),
            ],
        })
    }

    fn eval(&self, x: &Vector2<f64>) -> Result<(f64, Vector2<f64>, Matrix2<f64>), GridError> {
        let w = self.grid.interpolation_weights(x)?;
        let at = |v: &[f64]| w.iter().map(|(m, c)| v[*m] * c).sum::<f64>();
        let c = [at(&self.comps[0]), at(&self.comps[1]), at(&self.comps[2]), at(&self.comps[3]), at(&self.comps[4])];
        Ok((at(self.u), Vector2::new(c[0], c[1]), Matrix2::new(c[2], c[3], c[3], c[4])))
    }

    fn gradient(&self, x: &Vector2<f64>) -> Result<Vector2<f64>, GridError> {
        Ok(self.eval(x)?.1)
    }
}

fn boundary_gap(field: &SolutionField) -> f64 {
    let g = &field.grid;
    g.boundary_nodes()
        .map(|k| field.image.h(&g.node_derivatives(&field.u, k).du).abs())
        .fold(0.0, f64::max)
}

/// Solve `Du(x) = y` by Newton on the interpolated gradient from `x0`.
fn invert_gradient(
    interp: &DerivativeInterpolant,
    y: &Vector2<f64>,
    x0: Vector2<f64>,
) -> Result<Vector2<f64>, (Vector2<f64>, f64)> {
    let mut x = x0;
    let Ok((_, mut g, _)) = interp.eval(&x) else {
        return Err((x, f64::INFINITY));
    };
    let mut res = (g - y).norm();
    for _ in 0..INVERSION_MAX_ITER {
        if res <= INVERSION_TOL {
            return Ok(x);
        }
        let Ok((_, _, hess)) = interp.eval(&x) else { break };
        let Some(step) = hess.try_inverse().map(|h| h * (y - g)) else { break };
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-4 {
            let trial = x + step * alpha;
            if let Ok(gt) = interp.gradient(&trial) {
                let rt = (gt - y).norm();
                if rt < res {
                    x = trial;
                    g = gt;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res <= INVERSION_TOL {
        Ok(x)
    } else {
        Err((x, res))
    }
}

/// Conjugate of `field` sampled on `grid`, which must cover the field's image.
///
/// The result lives on `grid` with the roles of the domains exchanged and
/// the constant negated; no normalization is applied to its values.
pub fn legendre_transform(field: &SolutionField, grid: Arc<MappedGrid>) -> Result<DualField, DualityError> {
    if *grid.domain() != field.image {
        return Err(DualityError::GridMismatch);
    }
    let interp = DerivativeInterpolant::new(field)?;
    let primal = &field.grid;
    let grads: Vec<Vector2<f64>> = interp.comps[0].iter().zip(&interp.comps[1]).map(|(a, b)| Vector2::new(*a, *b)).collect();
    let solved: Vec<(f64, Vector2<f64>)> = grid
        .nodes()
        .par_iter()
        .map(|y| {
            let nearest = (0..grads.len())
                .min_by(|a, b| (grads[*a] - y).norm_squared().total_cmp(&(grads[*b] - y).norm_squared()))
                .expect("grid has nodes");
            let x = invert_gradient(&interp, y, primal.node(nearest)).map_err(|(_, residual)| {
                DualityError::InversionFailure { y: *y, residual, boundary_gap: boundary_gap(field) }
            })?;
            let (u, _, _) = interp.eval(&x)?;
            Ok((x.dot(y) - u, x))
        })
        .collect::<Result<_, DualityError>>()?;
    let (values, preimages): (Vec<f64>, Vec<Vector2<f64>>) = solved.into_iter().unzip();
    let out = SolutionField::new(grid, primal.domain().clone(), field.model, !field.dual, values, -field.c)
        .map_err(|e| DualityError::Assembly(AssemblyError::FieldMismatch(e.to_string())))?;
    Ok(DualField { field: out, preimages: Some(preimages) })
}

/// Per-node dual operator residual.
#[derive(Clone, Debug, PartialEq)]
pub struct DualResidual {
    /// `G̃(y, D²ũ) − c̃` per node; boundary nodes hold 0.
    pub values: Vec<f64>,
    /// Largest magnitude over pole and interior nodes.
    pub max_abs: f64,
}

/// `G̃(y, D²ũ) + c` at every non-boundary dual node, where `c = −c̃`.
pub fn dual_residual(dual: &DualField, model: ModelKind) -> Result<DualResidual, DualityError> {
    let f = &dual.field;
    let kernel = CurvatureKernel::new(model).with_eps_space(0.0);
    let values: Vec<f64> = (0..f.grid.len())
        .into_par_iter()
        .map(|k| {
            if f.grid.kind(k) == NodeKind::Boundary {
                return Ok(0.0);
            }
            let d = f.grid.node_derivatives(&f.u, k);
            let g = dual_operator(&kernel, &f.grid.node(k), &d.d2u).map_err(|e| match e {
                DualOpError::Singular => DualityError::SingularHessian { node: k },
                DualOpError::Spacelike => DualityError::Spacelike { node: k },
            })?;
            Ok(g - f.c)
        })
        .collect::<Result<_, DualityError>>()?;
    let max_abs = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(DualResidual { values, max_abs })
}

enum DualOpError {
    Singular,
    Spacelike,
}

/// `G̃(y, r) = −G(y, r⁻¹)`.
fn dual_operator(kernel: &CurvatureKernel, y: &Vector2<f64>, r: &Matrix2<f64>) -> Result<f64, DualOpError> {
    let det = r.determinant();
    if !(det.abs() > 1e-14 * r.abs().max().powi(2)) {
        return Err(DualOpError::Singular);
    }
    let inv = r.try_inverse().ok_or(DualOpError::Singular)?;
    kernel
        .mean_curvature(&PointState { du: *y, d2u: inv })
        .map(|h| -h)
        .map_err(|_: KernelError| DualOpError::Spacelike)
}

/// Coefficient matrix `s` with `G(y, r) = tr(s r)`:
/// `s = (I + σ y yᵀ / v²) / v`, `v = √(1 − σ|y|²)`.
pub fn trace_coefficients(model: ModelKind, y: &Vector2<f64>) -> Matrix2<f64> {
    let v = model.v_of(y.norm_squared());
    (Matrix2::identity() + y * y.transpose() * (model.sigma() / (v * v))) / v
}

/// Guaranteed lower eigenvalue of [`trace_coefficients`]: `1/v` for
/// Minkowski, `1/v³` for Euclidean.
pub fn trace_coefficient_floor(model: ModelKind, y: &Vector2<f64>) -> f64 {
    let v = model.v_of(y.norm_squared());
    match model {
        ModelKind::Minkowski => 1.0 / v,
        ModelKind::Euclidean => 1.0 / (v * v * v),
    }
}

/// Smallest `λ_min(s) − floor` over the dual nodes (non-negative when the
/// lower bound holds).
pub fn trace_coefficient_margin(dual: &DualField) -> f64 {
    let model = dual.field.model;
    dual.grid()
        .nodes()
        .iter()
        .map(|y| sym_eigenvalues(&trace_coefficients(model, y)).0 - trace_coefficient_floor(model, y))
        .fold(f64::INFINITY, f64::min)
}

/// `max |Dũ(Du(x)) − x|` over the pole and interior primal nodes.
pub fn involution_error(field: &SolutionField, dual: &DualField) -> Result<f64, DualityError> {
    let interp = DerivativeInterpolant::new(&dual.field)?;
    let g = &field.grid;
    (0..g.len())
        .into_par_iter()
        .filter(|k| g.kind(*k) != NodeKind::Boundary)
        .map(|k| {
            let y = g.node_derivatives(&field.u, k).du;
            Ok((interp.gradient(&y)? - g.node(k)).norm())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// `max |det D²u(x) · det D²ũ(Du(x)) − 1|` over the pole and interior nodes.
pub fn hessian_reciprocity(field: &SolutionField, dual: &DualField) -> Result<f64, DualityError> {
    let interp = DerivativeInterpolant::new(&dual.field)?;
    let g = &field.grid;
    (0..g.len())
        .into_par_iter()
        .filter(|k| g.kind(*k) != NodeKind::Boundary)
        .map(|k| {
            let d = g.node_derivatives(&field.u, k);
            let (_, _, h) = interp.eval(&d.du)?;
            Ok((d.d2u.determinant() * h.determinant() - 1.0).abs())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// `max |(ũ − mean ũ) − (w − mean w)|` between two fields on the same grid.
pub fn normalized_distance(a: &SolutionField, b: &SolutionField) -> Result<f64, DualityError> {
    if a.grid.domain() != b.grid.domain() || a.u.len() != b.u.len() {
        return Err(DualityError::GridMismatch);
    }
    let mut x = a.u.clone();
    let mut y = b.u.clone();
    a.grid.project_mean_zero(&mut x);
    a.grid.project_mean_zero(&mut y);
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

/// Richardson estimate of the gradient error of a solved field, from an
/// independent solve on the half-resolution grid: `max |Du_h − Du_2h| / 3`
/// over shared nodes (second-order scheme).
pub fn grid_tolerance(fine: &SolutionField, coarse: &SolutionField) -> Result<f64, DualityError> {
    Ok(fine.grid.gradient_gap(&fine.u, &coarse.grid, &coarse.u)? / 3.0)
}

/// Independently solve the dual problem of `spec` on an `n_rho × n_phi`
/// grid over the target, with the same continuation machinery as the
/// primal. The returned constant is the dual system's own.
pub fn dual_solve(
    spec: &ProblemSpec,
    n_rho: usize,
    n_phi: usize,
    schedule: &HomotopySchedule,
    opts: &SolveOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<(DualField, HomotopyOutcome), DualityError> {
    let problem = HomotopyProblem {
        model: spec.model,
        omega: spec.omega.clone(),
        omega_tilde: spec.omega_tilde.clone(),
        operator: OperatorKind::Dual,
        n_rho,
        n_phi,
        schedule: schedule.clone(),
        opts: opts.clone(),
    };
    let out = run_homotopy(&problem, observer)?;
    Ok((DualField { field: out.field.clone(), preimages: None }, out))
}

/// Check the sign convention `c̃ = −c` within `tol`.
pub fn check_dual_constant(c: f64, c_tilde: f64, tol: f64) -> Result<f64, DualityError> {
    let gap = (c_tilde + c).abs();
    if gap <= tol {
        Ok(gap)
    } else {
        Err(DualityError::SignMismatch { c_tilde, expected: -c })
    }
}
