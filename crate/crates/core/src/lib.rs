//! Numerical solver for the second boundary value problem of constant mean
//! curvature graphs.
//!
//! Given two uniformly convex planar domains `Ω` and `Ω̃`, the crate computes a
//! uniformly convex potential `u` on `Ω` and a constant `c` such that
//!
//! ```text
//!   div(Du / √(1 − |Du|²)) = c   in Ω      (spacelike graph in Minkowski space)
//!   div(Du / √(1 + |Du|²)) = c   in Ω      (Euclidean graph)
//!   Du(Ω) = Ω̃
//! ```
//!
//! The gradient-image constraint is imposed as the oblique boundary condition
//! `h̃(Du) = 0` on `∂Ω`, with `h̃` a concave defining function of the target.
//!
//! Layout:
//!
//! - [`domain`]: convex domains through smooth concave defining functions.
//! - [`kernel`]: pointwise geometry of the graph (metric, shape matrix,
//!   curvatures) and the derivatives of the curvature operator.
//! - [`grid`]: boundary-fitted polar grid, Cartesian derivative recovery and
//!   quadrature.
//! - [`field`]: the `(u, c)` pair and its CSV/JSON on-disk format.
//! - [`assembly`]: discrete residual and analytic Jacobian.
//! - [`solver`]: damped Newton with convexity and spacelike guards.
//! - [`homotopy`]: continuation from an exactly solvable ball pair.
//! - [`duality`]: Legendre transform, dual problem, cross-validation.
//! - [`diagnostics`]: a-priori bounds and identities checked on solutions.
//! - [`radial`]: closed-form radial solutions on concentric balls.

pub mod assembly;
pub mod diagnostics;
pub mod domain;
pub mod duality;
pub mod field;
pub mod grid;
pub mod homotopy;
pub mod kernel;
mod numerics;
pub mod radial;
pub mod solver;

pub use assembly::{AssemblyError, OperatorKind, ProblemSpec};
pub use diagnostics::{full_report, CheckStatus, DiagnosticsReport, ReportTolerances};
pub use domain::{ConvexDomain, DefiningEval, DomainError, Shape};
pub use duality::{legendre_transform, DualField, DualityError};
pub use field::{FieldError, SolutionField};
pub use grid::{GridError, MappedGrid, NodeDerivatives, NodeKind};
pub use homotopy::{run_homotopy, HomotopyError, HomotopyOutcome, HomotopyProblem, HomotopySchedule, HomotopyState};
pub use kernel::{CurvatureKernel, KernelError, ModelKind, PointState};
pub use radial::{quadratic_seed, seed_field, RadialError, RadialSolution};
pub use solver::{newton_solve, newton_solve_with, IterationRecord, NewtonWorkspace, SolveError, SolveOptions, SolveOutcome};

/// Fixed spatial dimension of the PDE grid.
pub const DIM: usize = 2;
