//! Damped Newton iteration for `(u, c)`.
//!
//! The Jacobian has the constants in its `u`-kernel (every node row is a
//! function of derivatives only). The linear step writes `δu = δv + s·1` with
//! `δv_pole = 0`, solves the node rows for `(δc, δv)` with the pole column
//! replaced by the `c` column, and recovers `s` from the mean-zero row. This is
//! the bordered Newton system without the dense border, which keeps the sparse
//! LU cheap.
//!
//! Progress lines have the fixed form
//! `t=<t> iter=<k> res=<‖F‖∞> alpha=<step> c=<c>`, numbers with 9 significant digits.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, OperatorKind, ProblemSpec};
use crate::field::SolutionField;
use crate::grid::NodeKind;
use crate::kernel::{ModelKind, DEFAULT_EPS_SPACE};
use crate::numerics::sym_eigenvalues;

/// Steps below this are rejected.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Stop when `‖F‖∞ ≤ tol_residual · (1 + |c|)`.
    pub tol_residual: f64,
    pub max_newton: usize,
    pub armijo_factor: f64,
    pub armijo_c: f64,
    pub eps_convexity: f64,
    pub eps_space: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_residual: 1e-10,
            max_newton: 40,
            armijo_factor: 0.5,
            armijo_c: 1e-4,
            eps_convexity: 1e-8,
            eps_space: DEFAULT_EPS_SPACE,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("tol_residual", self.tol_residual),
            ("armijo_c", self.armijo_c),
            ("eps_convexity", self.eps_convexity),
            ("eps_space", self.eps_space),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SolveError::InvalidOptions(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_newton == 0 {
            return Err(SolveError::InvalidOptions("max_newton must be positive".into()));
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return Err(SolveError::InvalidOptions(format!(
                "armijo_factor must lie in (0, 1), got {}",
                self.armijo_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} Newton iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64, best_u: Vec<f64>, best_c: f64 },
    #[error("line search rejected every step down to {alpha:.1e} at iteration {iteration} (residual {residual:.3e})")]
    StepRejection { iteration: usize, residual: f64, alpha: f64, reason: Inadmissible },
    #[error("convexity lost at node {node}: smallest Hessian eigenvalue {lambda_min:.3e}")]
    ConvexityLoss { node: usize, lambda_min: f64 },
    #[error("spacelike condition violated at node {node}: |Du| = {grad_norm}")]
    SpacelikeViolation { node: usize, grad_norm: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Why a state or trial step is not admissible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inadmissible {
    /// Armijo decrease failed on an otherwise admissible trial.
    NoDecrease,
    Convexity { node: usize, lambda_min: f64 },
    Spacelike { node: usize, grad_norm: f64 },
    Singular { node: usize },
}

impl Inadmissible {
    fn into_error(self, iteration: usize, residual: f64) -> SolveError {
        match self {
            Inadmissible::Convexity { node, lambda_min } => SolveError::ConvexityLoss { node, lambda_min },
            Inadmissible::Spacelike { node, grad_norm } => SolveError::SpacelikeViolation { node, grad_norm },
            reason => SolveError::StepRejection { iteration, residual, alpha: MIN_STEP, reason },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: f64,
    pub iter: usize,
    pub residual_inf: f64,
    pub alpha: f64,
    pub c: f64,
}

impl IterationRecord {
    pub fn log_line(&self) -> String {
        format!(
            "t={:.9} iter={} res={:.8e} alpha={:.8e} c={:.8e}",
            self.t, self.iter, self.residual_inf, self.alpha, self.c
        )
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub field: SolutionField,
    pub iterations: usize,
    pub residual_inf: f64,
    pub history: Vec<IterationRecord>,
}

/// Admissibility measurements of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuardReport {
    pub min_eigenvalue: f64,
    pub min_eigenvalue_node: usize,
    pub max_grad: f64,
    pub max_grad_node: usize,
}

/// Smallest Hessian eigenvalue and largest gradient norm over all nodes.
pub fn guard_report(spec: &ProblemSpec, u: &[f64]) -> Result<GuardReport, AssemblyError> {
    let d = spec.grid.derivatives(u)?;
    let mut r = GuardReport { min_eigenvalue: f64::INFINITY, min_eigenvalue_node: 0, max_grad: 0.0, max_grad_node: 0 };
    for (k, nd) in d.iter().enumerate() {
        let (lo, _) = sym_eigenvalues(&nd.d2u);
        if !(lo >= r.min_eigenvalue) {
            r.min_eigenvalue = lo;
            r.min_eigenvalue_node = k;
        }
        let g = nd.du.norm();
        if !(g <= r.max_grad) {
            r.max_grad = g;
            r.max_grad_node = k;
        }
    }
    Ok(r)
}

fn check_guards(spec: &ProblemSpec, u: &[f64], opts: &SolveOptions) -> Result<(), Inadmissible> {
    let r = guard_report(spec, u).map_err(|_| Inadmissible::Singular { node: 0 })?;
    if spec.model == ModelKind::Minkowski && spec.operator == OperatorKind::Primal && !(r.max_grad <= 1.0 - opts.eps_space)
    {
        return Err(Inadmissible::Spacelike { node: r.max_grad_node, grad_norm: r.max_grad });
    }
    if !(r.min_eigenvalue >= opts.eps_convexity) {
        return Err(Inadmissible::Convexity { node: r.min_eigenvalue_node, lambda_min: r.min_eigenvalue });
    }
    Ok(())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Sparse structure of the reduced Newton matrix, reusable for every grid
/// with the same resolution and operator kind.
struct Pattern {
    key: (usize, usize, OperatorKind),
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

/// Reusable linear-algebra state across Newton solves.
#[derive(Default)]
pub struct NewtonWorkspace {
    pattern: Option<Pattern>,
}

impl NewtonWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Newton direction `(δu, δc)` for residual `f` at state `u`.
    pub fn direction(&mut self, spec: &ProblemSpec, u: &[f64], f: &[f64]) -> Result<(Vec<f64>, f64), SolveError> {
        let n = spec.grid.len();
        let rows = spec.linearize(u)?;
        // Reduced matrix: column 0 carries δc, column m ≥ 1 carries δv_m.
        let per_row: Vec<(Vec<(usize, f64)>, f64)> = rows
            .par_iter()
            .enumerate()
            .map(|(k, row)| {
                let mut entries = Vec::new();
                spec.for_each_row_entry(k, &row.q, |m, v| {
                    if m != 0 {
                        entries.push((m, v));
                    }
                });
                if spec.grid.kind(k) != NodeKind::Boundary {
                    entries.push((0, -1.0));
                }
                let scale = entries.iter().fold(0.0f64, |a, (_, v)| a.max(v.abs()));
                let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
                for e in entries.iter_mut() {
                    e.1 *= scale;
                }
                (entries, scale)
            })
            .collect();

        let key = (spec.grid.n_rho(), spec.grid.n_phi(), spec.operator);
        if self.pattern.as_ref().map(|p| p.key) != Some(key) {
            let idx: Vec<Pair<usize, usize>> = per_row
                .iter()
                .enumerate()
                .flat_map(|(k, (e, _))| e.iter().map(move |(m, _)| Pair { row: k, col: *m }))
                .collect();
            let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &idx)
                .map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
            let lu = SymbolicLu::try_new(symbolic.as_ref()).map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
            self.pattern = Some(Pattern { key, symbolic, argsort, lu });
        }
        let pattern = self.pattern.as_ref().expect("pattern built above");
        let values: Vec<f64> = per_row.iter().flat_map(|(e, _)| e.iter().map(|(_, v)| *v)).collect();
        let mat = SparseColMat::new_from_argsort(pattern.symbolic.clone(), &pattern.argsort, &values)
            .map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(pattern.lu.clone(), mat.as_ref())
            .map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
        let mut rhs = Mat::<f64>::from_fn(n, 1, |k, _| -f[k] * per_row[k].1);
        lu.solve_in_place(rhs.as_mut());
        let z: Vec<f64> = (0..n).map(|k| rhs[(k, 0)]).collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::LinearSolve("singular Newton matrix".into()));
        }
        let dc = z[0];
        let w = spec.grid.weights();
        let mut du = z;
        du[0] = 0.0;
        let wsum: f64 = w.iter().sum();
        let shift = (-f[n] - w.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>()) / wsum;
        for v in du.iter_mut() {
            *v += shift;
        }
        Ok((du, dc))
    }
}

/// Outcome of a successful line search.
#[derive(Clone, Debug)]
pub struct AcceptedStep {
    pub u: Vec<f64>,
    pub c: f64,
    pub residual: Vec<f64>,
    pub alpha: f64,
}

/// Backtracking line search: the largest `α ∈ {1, ρ, ρ², …}` whose trial is
/// admissible (guards pass, residual defined) and satisfies the Armijo
/// decrease `‖F(α)‖₂² ≤ (1 − 2 c_A α) ‖F‖₂²`.
pub fn damped_step(
    spec: &ProblemSpec,
    u: &[f64],
    c: f64,
    f: &[f64],
    direction: (&[f64], f64),
    opts: &SolveOptions,
) -> Result<AcceptedStep, Inadmissible> {
    let f2 = sq_norm(f);
    let mut alpha = 1.0;
    let mut last = Inadmissible::NoDecrease;
    while alpha >= MIN_STEP {
        let trial: Vec<f64> = u.iter().zip(direction.0).map(|(a, d)| a + alpha * d).collect();
        let tc = c + alpha * direction.1;
        match check_guards(spec, &trial, opts) {
            Err(reason) => last = reason,
            Ok(()) => match spec.residual(&trial, tc) {
                Err(AssemblyError::SpacelikeViolation { node, grad_norm }) => {
                    last = Inadmissible::Spacelike { node, grad_norm }
                }
                Err(AssemblyError::SingularHessian { node }) => last = Inadmissible::Singular { node },
                Err(_) => last = Inadmissible::Singular { node: 0 },
                Ok(r) => {
                    if sq_norm(&r) <= (1.0 - 2.0 * opts.armijo_c * alpha) * f2 {
                        return Ok(AcceptedStep { u: trial, c: tc, residual: r, alpha });
                    }
                    last = Inadmissible::NoDecrease;
                }
            },
        }
        alpha *= opts.armijo_factor;
    }
    Err(last)
}

/// Newton solve from `(u0, c0)` with default logging disabled.
pub fn newton_solve(spec: &ProblemSpec, initial: &SolutionField, opts: &SolveOptions) -> Result<SolveOutcome, SolveError> {
    spec.check_field(initial)?;
    newton_solve_with(spec, initial.u.clone(), initial.c, opts, &mut NewtonWorkspace::new(), 1.0, &mut |_| {})
}

/// Newton solve with an explicit workspace, homotopy parameter (for logging)
/// and per-iteration observer.
pub fn newton_solve_with(
    spec: &ProblemSpec,
    mut u: Vec<f64>,
    mut c: f64,
    opts: &SolveOptions,
    workspace: &mut NewtonWorkspace,
    t: f64,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<SolveOutcome, SolveError> {
    opts.validate()?;
    spec.grid.check_len(u.len()).map_err(AssemblyError::from)?;
    let mut f = spec.residual(&u, c)?;
    let mut res = inf_norm(&f);
    check_guards(spec, &u, opts).map_err(|r| r.into_error(0, res))?;
    let mut history = vec![IterationRecord { t, iter: 0, residual_inf: res, alpha: 0.0, c }];
    observer(&history[0]);
    let mut iter = 0;
    while res > opts.tol_residual * (1.0 + c.abs()) {
        if iter == opts.max_newton {
            return Err(SolveError::NonConvergence { iterations: iter, residual: res, best_u: u, best_c: c });
        }
        iter += 1;
        let (du, dc) = workspace.direction(spec, &u, &f)?;
        let step = match damped_step(spec, &u, c, &f, (&du, dc), opts) {
            Ok(s) => s,
            Err(Inadmissible::NoDecrease) => {
                return Err(SolveError::NonConvergence { iterations: iter, residual: res, best_u: u, best_c: c })
            }
            Err(reason) => return Err(reason.into_error(iter, res)),
        };
        u = step.u;
        c = step.c;
        f = step.residual;
        res = inf_norm(&f);
        let rec = IterationRecord { t, iter, residual_inf: res, alpha: step.alpha, c };
        observer(&rec);
        history.push(rec);
    }
    let field = spec.field(u, c)?;
    Ok(SolveOutcome { field, iterations: iter, residual_inf: res, history })
}
