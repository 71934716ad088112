//! Checks a solved field against the a-priori identities and bounds.
//!
//! Every check reports its value and never errors on a violation; the
//! report collects them with pass flags at declared tolerances.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::assembly::{max_boundary_norm, AssemblyError, ProblemSpec};
use crate::domain::{ConvexDomain, DomainError};
use crate::duality::{dual_residual, DualField, DualityError};
use crate::field::SolutionField;
use crate::grid::{GridError, NodeKind};
use crate::kernel::{CurvatureKernel, ModelKind, PointState};
use crate::numerics::sym_eigenvalues;
use crate::DIM;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("diagnostics apply to primal fields; got a dual field")]
    DualField,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Duality(#[from] DualityError),
}

/// Lower and upper bounds on the constant from the domain pair alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaBounds {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Bounds on `c` for a solution mapping `omega` onto `omega_tilde`.
///
/// Minkowski: `Λ₁ = n (|Ω̃|/|Ω|)^{1/n}`,
/// `Λ₂ = (|∂Ω|/|Ω|) max_{∂Ω̃} |y|/√(1−|y|²)`.
/// Euclidean: the Gauss curvature is `det D²u / (1+|Du|²)^{(n+2)/2}`, so the
/// area ratio is divided by `max (1+|y|²)^{(n+2)/2}` in `Λ₁`, and `Λ₂` uses
/// the weight `|y|/√(1+|y|²)`.
pub fn lambda_bounds(model: ModelKind, omega: &ConvexDomain, omega_tilde: &ConvexDomain) -> Result<LambdaBounds, DomainError> {
    let n = DIM as f64;
    let m = omega.measures();
    let area_tilde = omega_tilde.measures().area;
    let ymax = max_boundary_norm(omega_tilde)?;
    let v = model.v_of(ymax * ymax);
    let ratio = match model {
        ModelKind::Minkowski => area_tilde / m.area,
        ModelKind::Euclidean => area_tilde / (m.area * v.powf(n + 2.0)),
    };
    Ok(LambdaBounds { lambda1: n * ratio.powf(1.0 / n), lambda2: m.perimeter / m.area * ymax / v })
}

/// Per boundary node `⟨β, ν⟩` with `β = Dh_image(Du)/|Dh_image(Du)|` and
/// `ν` the inward normal of the solution domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ObliquenessProfile {
    pub values: Vec<f64>,
    pub min: f64,
}

pub fn obliqueness_profile(spec: &ProblemSpec, field: &SolutionField) -> ObliquenessProfile {
    let g = &field.grid;
    let values: Vec<f64> = g
        .boundary_nodes()
        .enumerate()
        .map(|(j, k)| {
            let du = g.node_derivatives(&field.u, k).du;
            let dh = spec.image_domain().eval_defining(&du).grad;
            let beta = dh / dh.norm();
            beta.dot(&-g.outward_normal(j))
        })
        .collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    ObliquenessProfile { values, min }
}

/// `|∫ det D²u − |image|| / |image|`.
pub fn mass_balance(spec: &ProblemSpec, field: &SolutionField) -> Result<f64, DiagnosticsError> {
    let d = field.grid.derivatives(&field.u)?;
    let det: Vec<f64> = d.iter().map(|n| n.d2u.determinant()).collect();
    let target = spec.image_domain().measures().area;
    Ok((field.grid.integrate(&det) - target).abs() / target)
}

fn boundary_flux(model: ModelKind, field: &SolutionField) -> f64 {
    let g = &field.grid;
    g.integrate_boundary(|j, k| {
        let du = g.node_derivatives(&field.u, k).du;
        du.dot(&g.outward_normal(j)) / model.v_of(du.norm_squared())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxIdentity {
    /// `(1/|Ω|) ∮ Du·ν_out / v ds`.
    pub mean_flux: f64,
    /// `|c − mean_flux| / |c|`.
    pub rel_err: f64,
}

/// Compare `c` with the mean outward flux of `Du/v`.
pub fn flux_identity(spec: &ProblemSpec, field: &SolutionField) -> FluxIdentity {
    let mean_flux = boundary_flux(spec.model, field) / spec.solution_domain().measures().area;
    FluxIdentity { mean_flux, rel_err: (field.c - mean_flux).abs() / field.c.abs() }
}

/// `|∮ Du·ν_out/v − ∫ div(Du/v)| / |∮ …|` for any admissible field.
pub fn divergence_consistency(spec: &ProblemSpec, field: &SolutionField) -> Result<f64, DiagnosticsError> {
    let kernel = CurvatureKernel::new(spec.model).with_eps_space(0.0);
    let g = &field.grid;
    let div: Vec<f64> = g
        .derivatives(&field.u)?
        .iter()
        .map(|d| kernel.mean_curvature(&PointState { du: d.du, d2u: d.d2u }).unwrap_or(f64::NAN))
        .collect();
    let flux = boundary_flux(spec.model, field);
    Ok((flux - g.integrate(&div)).abs() / flux.abs())
}

/// Hessian eigenvalue extremes over pole and interior nodes, and the
/// largest gradient norm over all nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pinching {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub grad_max: f64,
}

pub fn hessian_pinching(field: &SolutionField) -> Result<Pinching, DiagnosticsError> {
    let g = &field.grid;
    let d = g.derivatives(&field.u)?;
    let (lo, hi) = d
        .par_iter()
        .enumerate()
        .filter(|(k, _)| g.kind(*k) != NodeKind::Boundary)
        .map(|(_, n)| sym_eigenvalues(&n.d2u))
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    let grad_max = d.iter().map(|n| n.du.norm()).fold(0.0, |a: f64, b| if b.is_nan() { b } else { a.max(b) });
    Ok(Pinching { min_eigenvalue: lo, max_eigenvalue: hi, grad_max })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotEvaluated,
}

impl CheckStatus {
    fn of(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotEvaluated => "not evaluated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportTolerances {
    /// Slack on the bounds as a multiple of the absolute flux-identity error.
    pub lambda_slack_factor: f64,
    pub obliqueness_floor: f64,
    pub min_eigenvalue: f64,
    pub mass_balance: f64,
    pub flux_identity: f64,
    /// Relative to `|c|`.
    pub dual_consistency: f64,
}

impl Default for ReportTolerances {
    fn default() -> Self {
        ReportTolerances {
            lambda_slack_factor: 3.0,
            obliqueness_floor: 0.05,
            min_eigenvalue: 1e-8,
            mass_balance: 0.02,
            flux_identity: 0.02,
            dual_consistency: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub lambda_bounds: CheckStatus,
    pub obliqueness: CheckStatus,
    pub hessian: CheckStatus,
    pub spacelike: CheckStatus,
    pub mass_balance: CheckStatus,
    pub flux_identity: CheckStatus,
    pub dual_consistency: CheckStatus,
}

impl Checks {
    pub fn all_pass(&self) -> bool {
        [
            self.lambda_bounds,
            self.obliqueness,
            self.hessian,
            self.spacelike,
            self.mass_balance,
            self.flux_identity,
            self.dual_consistency,
        ]
        .iter()
        .all(|s| *s != CheckStatus::Fail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub model: ModelKind,
    pub n_rho: usize,
    pub n_phi: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub c: f64,
    pub obliqueness_min: f64,
    /// `[min λ_min, max λ_max]` over pole and interior nodes.
    pub hessian_eig_range: [f64; 2],
    pub grad_max: f64,
    pub mass_balance_rel_err: f64,
    pub flux_identity_rel_err: f64,
    /// Largest `|G̃ + c| / |c|` over the dual nodes; `None` without a dual.
    pub dual_consistency: Option<f64>,
    pub checks: Checks,
    pub tolerances: ReportTolerances,
    pub all_pass: bool,
}

impl DiagnosticsReport {
    /// Slack on the `Λ` bounds implied by the measured flux error.
    pub fn lambda_slack(&self) -> f64 {
        self.tolerances.lambda_slack_factor * self.flux_identity_rel_err * self.c.abs()
    }

    /// Pass flags recomputed from the stored values and tolerances.
    pub fn evaluate_checks(&self) -> Checks {
        let t = &self.tolerances;
        let slack = self.lambda_slack();
        Checks {
            lambda_bounds: CheckStatus::of(self.lambda1 - slack <= self.c && self.c <= self.lambda2 + slack),
            obliqueness: CheckStatus::of(self.obliqueness_min >= t.obliqueness_floor),
            hessian: CheckStatus::of(
                self.hessian_eig_range[0] >= t.min_eigenvalue && self.hessian_eig_range[1].is_finite(),
            ),
            spacelike: CheckStatus::of(match self.model {
                ModelKind::Minkowski => self.grad_max < 1.0,
                ModelKind::Euclidean => self.grad_max.is_finite(),
            }),
            mass_balance: CheckStatus::of(self.mass_balance_rel_err <= t.mass_balance),
            flux_identity: CheckStatus::of(self.flux_identity_rel_err <= t.flux_identity),
            dual_consistency: match self.dual_consistency {
                None => CheckStatus::NotEvaluated,
                Some(v) => CheckStatus::of(v <= t.dual_consistency),
            },
        }
    }

    /// Flags and the overall verdict agree with the stored values.
    pub fn is_consistent(&self) -> bool {
        let c = self.evaluate_checks();
        c == self.checks && c.all_pass() == self.all_pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Human-readable table with 9 significant digits.
    pub fn to_table(&self) -> String {
        let t = &self.tolerances;
        let c = &self.checks;
        let slack = self.lambda_slack();
        let mut out = String::new();
        let mut row = |name: &str, value: String, tol: String, status: CheckStatus| {
            let _ = writeln!(out, "{name:<22} {value:>34} {tol:>24}  {}", status.label());
        };
        row("c", sig9(self.c), String::new(), CheckStatus::NotEvaluated);
        row(
            "lambda bounds",
            format!("[{}, {}]", sig9(self.lambda1), sig9(self.lambda2)),
            format!("slack {}", sig9(slack)),
            c.lambda_bounds,
        );
        row("obliqueness min", sig9(self.obliqueness_min), format!(">= {}", sig9(t.obliqueness_floor)), c.obliqueness);
        row(
            "hessian eigenvalues",
            format!("[{}, {}]", sig9(self.hessian_eig_range[0]), sig9(self.hessian_eig_range[1])),
            format!("min >= {}", sig9(t.min_eigenvalue)),
            c.hessian,
        );
        row("grad max", sig9(self.grad_max), String::new(), c.spacelike);
        row("mass balance", sig9(self.mass_balance_rel_err), format!("<= {}", sig9(t.mass_balance)), c.mass_balance);
        row("flux identity", sig9(self.flux_identity_rel_err), format!("<= {}", sig9(t.flux_identity)), c.flux_identity);
        row(
            "dual consistency",
            self.dual_consistency.map(sig9).unwrap_or_else(|| "-".into()),
            format!("<= {}", sig9(t.dual_consistency)),
            c.dual_consistency,
        );
        let table = out;
        format!("{table}overall: {}\n", if self.all_pass { "pass" } else { "FAIL" })
    }
}

/// Scientific notation with 9 significant digits.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Run every check on a primal field; `dual` (typically the Legendre
/// transform of `field`) fills `dual_consistency`.
/// Recorded as the dual consistency when the dual residual cannot be evaluated.
pub const DUAL_FAILURE: f64 = f64::MAX;

pub fn full_report(
    spec: &ProblemSpec,
    field: &SolutionField,
    dual: Option<&DualField>,
    tolerances: &ReportTolerances,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    if field.dual || spec.is_dual() {
        return Err(DiagnosticsError::DualField);
    }
    spec.check_field(field)?;
    let bounds = lambda_bounds(spec.model, &spec.omega, &spec.omega_tilde)?;
    let pinch = hessian_pinching(field)?;
    let dual_consistency = match dual {
        None => None,
        Some(d) => Some(match dual_residual(d, spec.model) {
            Ok(r) => r.max_abs / field.c.abs(),
            Err(_) => DUAL_FAILURE,
        }),
    };
    let mut report = DiagnosticsReport {
        model: spec.model,
        n_rho: field.grid.n_rho(),
        n_phi: field.grid.n_phi(),
        lambda1: bounds.lambda1,
        lambda2: bounds.lambda2,
        c: field.c,
        obliqueness_min: obliqueness_profile(spec, field).min,
        hessian_eig_range: [pinch.min_eigenvalue, pinch.max_eigenvalue],
        grad_max: pinch.grad_max,
        mass_balance_rel_err: mass_balance(spec, field)?,
        flux_identity_rel_err: flux_identity(spec, field).rel_err,
        dual_consistency,
        checks: Checks {
            lambda_bounds: CheckStatus::NotEvaluated,
            obliqueness: CheckStatus::NotEvaluated,
            hessian: CheckStatus::NotEvaluated,
            spacelike: CheckStatus::NotEvaluated,
            mass_balance: CheckStatus::NotEvaluated,
            flux_identity: CheckStatus::NotEvaluated,
            dual_consistency: CheckStatus::NotEvaluated,
        },
        tolerances: tolerances.clone(),
        all_pass: false,
    };
    report.checks = report.evaluate_checks();
    report.all_pass = report.checks.all_pass();
    Ok(report)
}

/// Closed-form Hessian eigenvalue range of a radial profile over the radii
/// of the pole and interior nodes of a grid centered at `center`.
pub fn radial_eigen_range(
    sol: &crate::radial::RadialSolution,
    field: &SolutionField,
    center: Vector2<f64>,
) -> (f64, f64) {
    let g = &field.grid;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in (0..g.len()).filter(|k| g.kind(*k) != NodeKind::Boundary) {
        let r = (g.node(k) - center).norm();
        let a = sol.second_derivative(r);
        let b = if r == 0.0 { a } else { sol.slope(r) / r };
        lo = lo.min(a.min(b));
        hi = hi.max(a.max(b));
    }
    (lo, hi)
}
