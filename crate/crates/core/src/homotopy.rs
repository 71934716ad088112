//! Continuation from a ball pair to the target pair.
//!
//! Domain family: with `B` the ball centered at a domain's peak with its
//! inradius, `Ω_t` has defining function `(1 − t) h_B + t h_Ω` (and likewise
//! for the target), so `t = 0` is a ball pair with a closed-form radial
//! solution and `t = 1` is the original pair. Every `Ω_t` is convex because
//! the blend of concave functions is concave.
//!
//! Each step warm-starts from the previous solution transferred by parameter
//! coordinates. A failed step is bisected (up to `max_bisections` times)
//! before giving up.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::assembly::{AssemblyError, OperatorKind, ProblemSpec};
use crate::domain::{ConvexDomain, DomainError};
use crate::field::SolutionField;
use crate::grid::MappedGrid;
use crate::kernel::ModelKind;
use crate::radial::{seed_field, RadialError};
use crate::solver::{newton_solve_with, IterationRecord, NewtonWorkspace, SolveError, SolveOptions};

pub const DEFAULT_STEPS: usize = 12;
pub const DEFAULT_BISECTIONS: usize = 4;

#[derive(Debug, Error)]
pub enum HomotopyError {
    #[error("homotopy failed at t = {t}: {source}")]
    StepFailure { t: f64, source: SolveError },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Seed(#[from] RadialError),
}

/// Increasing parameter values ending at 1; the first value is the start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub ts: Vec<f64>,
    pub max_bisections: usize,
}

impl HomotopySchedule {
    /// `steps` equally spaced values from 0 to 1 inclusive.
    pub fn uniform(steps: usize) -> Self {
        let ts = if steps <= 1 {
            vec![1.0]
        } else {
            (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
        };
        HomotopySchedule { ts, max_bisections: DEFAULT_BISECTIONS }
    }

    pub fn validate(&self) -> Result<(), HomotopyError> {
        if self.ts.last() != Some(&1.0) {
            return Err(HomotopyError::Schedule("schedule must end at t = 1".into()));
        }
        if self.ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(HomotopyError::Schedule("values must lie in [0, 1]".into()));
        }
        if self.ts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HomotopyError::Schedule("values must increase".into()));
        }
        Ok(())
    }
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        Self::uniform(DEFAULT_STEPS)
    }
}

/// Converged state at one parameter value.
#[derive(Clone, Debug)]
pub struct HomotopyState {
    pub t: f64,
    pub omega_t: ConvexDomain,
    pub omega_tilde_t: ConvexDomain,
    pub field: SolutionField,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct HomotopyOutcome {
    /// Problem at `t = 1`.
    pub spec: ProblemSpec,
    pub field: SolutionField,
    pub states: Vec<HomotopyState>,
    /// `(t, c)` at every accepted step.
    pub c_history: Vec<(f64, f64)>,
    pub bisections: usize,
}

impl HomotopyOutcome {
    pub fn max_iterations(&self) -> usize {
        self.states.iter().map(|s| s.iterations).max().unwrap_or(0)
    }
}

/// Ball at the peak with the inradius.
pub fn anchor_ball(domain: &ConvexDomain) -> Result<ConvexDomain, DomainError> {
    let p = domain.peak();
    ConvexDomain::ball([p[0], p[1]], domain.inradius())
}

/// `(Ω_t, Ω̃_t)`; exactly the anchor balls at `t = 0` and the inputs at `t = 1`.
pub fn homotopy_pair(
    omega: &ConvexDomain,
    omega_tilde: &ConvexDomain,
    t: f64,
) -> Result<(ConvexDomain, ConvexDomain), DomainError> {
    let member = |d: &ConvexDomain| -> Result<ConvexDomain, DomainError> {
        if t >= 1.0 || d.as_ball().is_some() {
            return Ok(d.clone());
        }
        let b = anchor_ball(d)?;
        if t <= 0.0 {
            Ok(b)
        } else {
            ConvexDomain::blend(&b, d, t)
        }
    };
    Ok((member(omega)?, member(omega_tilde)?))
}

#[derive(Clone, Debug)]
pub struct HomotopyProblem {
    pub model: ModelKind,
    pub omega: ConvexDomain,
    pub omega_tilde: ConvexDomain,
    pub operator: OperatorKind,
    pub n_rho: usize,
    pub n_phi: usize,
    pub schedule: HomotopySchedule,
    pub opts: SolveOptions,
}

impl HomotopyProblem {
    fn spec_at(&self, t: f64) -> Result<ProblemSpec, HomotopyError> {
        let (o, ot) = homotopy_pair(&self.omega, &self.omega_tilde, t)?;
        let covered = match self.operator {
            OperatorKind::Primal => &o,
            OperatorKind::Dual => &ot,
        };
        let grid = Arc::new(MappedGrid::new(covered, self.n_rho, self.n_phi).map_err(AssemblyError::from)?);
        Ok(ProblemSpec::with_grid(self.model, o, ot, grid, self.operator, self.opts.eps_space)?)
    }
}

/// Run the continuation; ball pairs collapse to a single solve at `t = 1`.
pub fn run_homotopy(
    problem: &HomotopyProblem,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<HomotopyOutcome, HomotopyError> {
    problem.schedule.validate()?;
    let both_balls = problem.omega.as_ball().is_some() && problem.omega_tilde.as_ball().is_some();
    let ts: Vec<f64> = if both_balls { vec![1.0] } else { problem.schedule.ts.clone() };

    let mut workspace = NewtonWorkspace::new();
    let mut states: Vec<HomotopyState> = Vec::new();
    let mut pending: Vec<f64> = ts.into_iter().rev().collect();
    let mut bisections_here = 0;
    let mut bisections = 0;
    let mut last: Option<(ProblemSpec, SolutionField, f64)> = None;

    while let Some(t) = pending.pop() {
        let spec = problem.spec_at(t)?;
        let (u0, c0) = match &last {
            None => {
                let seed = seed_field(&spec)?;
                (seed.u, seed.c)
            }
            Some((prev, field, _)) => {
                let mut u = spec.grid.resample_from(&prev.grid, &field.u).map_err(AssemblyError::from)?;
                spec.grid.project_mean_zero(&mut u);
                (u, field.c)
            }
        };
        match newton_solve_with(&spec, u0, c0, &problem.opts, &mut workspace, t, observer) {
            Ok(out) => {
                bisections_here = 0;
                states.push(HomotopyState {
                    t,
                    omega_t: spec.omega.clone(),
                    omega_tilde_t: spec.omega_tilde.clone(),
                    field: out.field.clone(),
                    iterations: out.iterations,
                });
                last = Some((spec, out.field, t));
            }
            Err(source) => {
                let Some((_, _, t_prev)) = &last else {
                    return Err(HomotopyError::StepFailure { t, source });
                };
                if bisections_here >= problem.schedule.max_bisections {
                    return Err(HomotopyError::StepFailure { t, source });
                }
                bisections_here += 1;
                bisections += 1;
                pending.push(t);
                pending.push(0.5 * (t_prev + t));
            }
        }
    }
    let (spec, field, _) = last.expect("schedule is non-empty");
    let c_history = states.iter().map(|s| (s.t, s.field.c)).collect();
    Ok(HomotopyOutcome { spec, field, states, c_history, bisections })
}
