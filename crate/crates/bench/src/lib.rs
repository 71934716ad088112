//! Fixtures shared by the benchmarks.

use cmcgrad::{seed_field, ConvexDomain, ModelKind, ProblemSpec, SolutionField};

/// Ellipse onto a centered ball, Minkowski model.
pub fn ellipse_problem(n_rho: usize, n_phi: usize) -> ProblemSpec {
    let omega = ConvexDomain::ellipse([0.0, 0.0], [1.0, 0.8]).expect("valid ellipse");
    let target = ConvexDomain::ball([0.0, 0.0], 0.4).expect("valid ball");
    ProblemSpec::new(ModelKind::Minkowski, omega, target, n_rho, n_phi).expect("valid problem")
}

/// Concentric balls, where the seed is the exact radial profile.
pub fn ball_problem(n_rho: usize, n_phi: usize) -> ProblemSpec {
    let omega = ConvexDomain::ball([0.0, 0.0], 1.0).expect("valid ball");
    let target = ConvexDomain::ball([0.0, 0.0], 0.5).expect("valid ball");
    ProblemSpec::new(ModelKind::Minkowski, omega, target, n_rho, n_phi).expect("valid problem")
}

pub fn seed(spec: &ProblemSpec) -> SolutionField {
    seed_field(spec).expect("admissible seed")
}
