//! Closed-form rotationally symmetric solutions on concentric balls.
//!
//! With flux `w = u'/v(u')`, the equation reduces to `(r^{n−1} w)' = c r^{n−1}`,
//! so `w = c r / n` and the boundary slope `u'(R) = t` fixes
//! `c = n t / (R √(1 − σ t²))`.

use nalgebra::Vector2;
use thiserror::Error;

use crate::assembly::{OperatorKind, ProblemSpec};
use crate::field::SolutionField;
use crate::grid::{MappedGrid, NodeKind};
use crate::kernel::ModelKind;
use crate::DIM;

/// Smallest quadratic coefficient tried by [`seed_field`].
pub const MIN_SEED_CURVATURE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadialError {
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("t0 must be < 1 for the minkowski model, got {0}")]
    TargetNotSpacelike(f64),
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("r = {r} outside [0, {r0}]")]
    OutOfRange { r: f64, r0: f64 },
    #[error("no admissible seed: {0}")]
    SeedFailure(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialSolution {
    pub n: usize,
    pub model: ModelKind,
    pub omega_radius: f64,
    pub target_radius: f64,
    pub c: f64,
}

/// Result of integrating the radial ODE numerically against the closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeCheck {
    /// `u(R) − u(0)` from the ODE.
    pub rise: f64,
    /// `u'(R)` from the ODE.
    pub boundary_slope: f64,
    /// Largest deviation of the ODE flux from `c r / n`.
    pub max_flux_deviation: f64,
    /// Largest deviation of the ODE profile from the closed form.
    pub max_profile_deviation: f64,
}

impl RadialSolution {
    pub fn new(model: ModelKind, omega_radius: f64, target_radius: f64) -> Result<Self, RadialError> {
        Self::in_dimension(DIM, model, omega_radius, target_radius)
    }

    pub fn in_dimension(n: usize, model: ModelKind, omega_radius: f64, target_radius: f64) -> Result<Self, RadialError> {
        if n < 2 {
            return Err(RadialError::Dimension(n));
        }
        if !(omega_radius > 0.0) {
            return Err(RadialError::NonPositiveRadius(omega_radius));
        }
        if !(target_radius >= 0.0) {
            return Err(RadialError::NonPositiveRadius(target_radius));
        }
        if model == ModelKind::Minkowski && target_radius >= 1.0 {
            return Err(RadialError::TargetNotSpacelike(target_radius));
        }
        let c = n as f64 * target_radius / (omega_radius * model.v_of(target_radius * target_radius));
        Ok(RadialSolution { n, model, omega_radius, target_radius, c })
    }

    fn k(&self) -> f64 {
        self.c / self.n as f64
    }

    /// `(u(r) − u(0), u'(r), u''(r))` for `r ∈ [0, R0]`.
    pub fn radial_profile(&self, r: f64) -> Result<(f64, f64, f64), RadialError> {
        if !(0.0..=self.omega_radius).contains(&r) {
            return Err(RadialError::OutOfRange { r, r0: self.omega_radius });
        }
        Ok((self.profile(r), self.slope(r), self.second_derivative(r)))
    }

    /// `u(r) − u(0)`.
    pub fn profile(&self, r: f64) -> f64 {
        let k = self.k();
        if k == 0.0 {
            return 0.0;
        }
        let kr2 = (k * r).powi(2);
        match self.model {
            ModelKind::Minkowski => kr2 / (k * ((1.0 + kr2).sqrt() + 1.0)),
            ModelKind::Euclidean => kr2 / (k * (1.0 + (1.0 - kr2).sqrt())),
        }
    }

    pub fn slope(&self, r: f64) -> f64 {
        let w = self.k() * r;
        w / (1.0 + self.model.sigma() * w * w).sqrt()
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        let k = self.k();
        k / (1.0 + self.model.sigma() * (k * r).powi(2)).powf(1.5)
    }

    /// Legendre transform of the profile: `ũ(s) − ũ(0)` for `|s| ≤ t`.
    pub fn dual_profile(&self, s: f64) -> f64 {
        let s2 = s * s;
        if self.k() == 0.0 {
            return 0.0;
        }
        let nc = 1.0 / self.k();
        match self.model {
            ModelKind::Minkowski => nc * s2 / (1.0 + (1.0 - s2).sqrt()),
            ModelKind::Euclidean => nc * s2 / ((1.0 + s2).sqrt() + 1.0),
        }
    }

    /// Radius at which the slope equals `s` (inverse of [`Self::slope`]).
    pub fn radius_of_slope(&self, s: f64) -> f64 {
        s / (self.k() * (1.0 - self.model.sigma() * s * s).sqrt())
    }

    /// Integrate the flux ODE `w' = c − (n − 1) w / r` with `u' = w / √(1 + σ w²)`
    /// by classical RK4 from the center and compare with the closed form.
    pub fn ode_crosscheck(&self, steps: usize) -> OdeCheck {
        let n = self.n as f64;
        let c = self.c;
        let s = self.model.sigma();
        let rhs = |r: f64, y: [f64; 2]| -> [f64; 2] {
            let w_over_r = if r == 0.0 { c / n } else { y[0] / r };
            [c - (n - 1.0) * w_over_r, y[0] / (1.0 + s * y[0] * y[0]).sqrt()]
        };
        let h = self.omega_radius / steps as f64;
        let mut y = [0.0, 0.0];
        let mut dev: f64 = 0.0;
        let mut flux_dev: f64 = 0.0;
        for i in 0..steps {
            let r = i as f64 * h;
            let k1 = rhs(r, y);
            let k2 = rhs(r + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
            let k3 = rhs(r + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
            let k4 = rhs(r + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for q in 0..2 {
                y[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            }
            dev = dev.max((y[1] - self.profile(r + h)).abs());
            flux_dev = flux_dev.max((y[0] - c * (r + h) / n).abs());
        }
        OdeCheck {
            rise: y[1],
            boundary_slope: y[0] / (1.0 + s * y[0] * y[0]).sqrt(),
            max_flux_deviation: flux_dev,
            max_profile_deviation: dev,
        }
    }

    /// `u(x) = U(|x − center|) + shift · (x − center)`, projected to mean zero.
    /// With `shift = 0` and `center` the common center this is the exact
    /// solution; otherwise its gradient image is the target ball moved by `shift`.
    pub fn seed(&self, grid: &MappedGrid, center: Vector2<f64>, shift: Vector2<f64>) -> Vec<f64> {
        let mut u: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| {
                let d = x - center;
                self.profile(d.norm()) + shift.dot(&d)
            })
            .collect();
        grid.project_mean_zero(&mut u);
        u
    }

    /// Exact gradient of [`Self::seed`] at `x`.
    pub fn seed_gradient(&self, x: &Vector2<f64>, center: Vector2<f64>, shift: Vector2<f64>) -> Vector2<f64> {
        let d = x - center;
        let r = d.norm();
        if r == 0.0 {
            return shift;
        }
        d * (self.slope(r) / r) + shift
    }

    /// Legendre-dual seed on a grid over the target: `ũ(y) = Ũ(|y − shift|) + center · y`.
    pub fn dual_seed(&self, grid: &MappedGrid, center: Vector2<f64>, shift: Vector2<f64>) -> Vec<f64> {
        let mut u: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|y| self.dual_profile((y - shift).norm()) + center.dot(y))
            .collect();
        grid.project_mean_zero(&mut u);
        u
    }
}

/// Initial guess for a problem.
///
/// Ball pairs get the radial profile about the domain center, shifted so the
/// gradient image is centered on the target center (the dual problem gets its
/// Legendre transform). Otherwise the quadratic
/// `½α|x − x_p|² + y_p·(x − x_p)` with `x_p`, `y_p` the peaks of the solution
/// and image domains and `α = inradius(image) / circumradius(domain)`,
/// halved until the gradient image fits inside the image domain.
///
/// `c` is set so the pole row of the residual vanishes.
pub fn seed_field(spec: &ProblemSpec) -> Result<SolutionField, RadialError> {
    let grid = &spec.grid;
    let fail = |e: crate::assembly::AssemblyError| RadialError::SeedFailure(e.to_string());
    if let (Some((p, r0)), Some((q, t0))) = (spec.omega.as_ball(), spec.omega_tilde.as_ball()) {
        let sol = RadialSolution::new(spec.model, r0, t0)?;
        let (u, c) = match spec.operator {
            OperatorKind::Primal => (sol.seed(grid, p, q), sol.c),
            OperatorKind::Dual => (sol.dual_seed(grid, p, q), -sol.c),
        };
        return spec.field(u, c).map_err(fail);
    }
    quadratic_seed(spec)
}

/// The quadratic branch of [`seed_field`], used whatever the domain shapes.
pub fn quadratic_seed(spec: &ProblemSpec) -> Result<SolutionField, RadialError> {
    let grid = &spec.grid;
    let fail = |e: crate::assembly::AssemblyError| RadialError::SeedFailure(e.to_string());
    let domain = spec.solution_domain();
    let image = spec.image_domain();
    let xp = domain.peak();
    let yp = image.peak();
    let mut alpha = image.inradius() / domain.circumradius();
    while alpha >= MIN_SEED_CURVATURE {
        let mut u: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| {
                let d = x - xp;
                0.5 * alpha * d.norm_squared() + yp.dot(&d)
            })
            .collect();
        grid.project_mean_zero(&mut u);
        let fits = grid.boundary_nodes().all(|k| {
            let g = grid.node_derivatives(&u, k).du;
            image.h(&g) >= -image.boundary_tolerance()
        });
        if fits {
            let pole = spec.linearize_row(0, &grid.cart_derivatives(&u, 0));
            if let Ok(row) = pole {
                debug_assert_eq!(grid.kind(0), NodeKind::Pole);
                return spec.field(u, row.value).map_err(fail);
            }
        }
        alpha *= 0.5;
    }
    Err(RadialError::SeedFailure(format!("no quadratic with curvature ≥ {MIN_SEED_CURVATURE} maps into the image")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn constants_of_the_reference_instances() {
        let m = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(m.c, 2.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.c, 1.1547005, epsilon = 1e-7);
        assert_abs_diff_eq!(m.profile(1.0), 2.0 - 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.slope(1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.second_derivative(0.0), m.c / 2.0, epsilon = 1e-15);
        let e = RadialSolution::new(ModelKind::Euclidean, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(e.c, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.profile(1.0), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.slope(1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn invalid_radii() {
        let e = RadialSolution::new(ModelKind::Minkowski, 1.0, 1.2).unwrap_err();
        assert!(e.to_string().contains("t0 must be < 1"));
        assert!(RadialSolution::new(ModelKind::Minkowski, 0.0, 0.5).is_err());
        assert!(RadialSolution::in_dimension(1, ModelKind::Minkowski, 1.0, 0.5).is_err());
        assert!(RadialSolution::new(ModelKind::Euclidean, 1.0, 2.0).is_ok());
        let s = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.5).unwrap();
        assert!(matches!(s.radial_profile(1.5), Err(RadialError::OutOfRange { .. })));
        assert_eq!(s.radial_profile(0.0).unwrap(), (0.0, 0.0, s.c / 2.0));
    }

    #[test]
    fn vanishing_target_gives_vanishing_constant() {
        let s = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.0).unwrap();
        assert_eq!(s.c, 0.0);
        let chk = s.ode_crosscheck(100);
        assert_eq!(chk.max_flux_deviation, 0.0);
        assert_eq!(s.profile(0.7), 0.0);
        let small = RadialSolution::new(ModelKind::Minkowski, 1.0, 1e-6).unwrap();
        assert!(small.c < 3e-6);
    }

    #[test]
    fn general_dimension_ode_check() {
        let s = RadialSolution::in_dimension(3, ModelKind::Minkowski, 2.0, 0.7).unwrap();
        let chk = s.ode_crosscheck(10_000);
        assert!(chk.max_flux_deviation <= 1e-10);
        assert!(chk.max_profile_deviation <= 1e-10);
        assert!((chk.boundary_slope - 0.7).abs() <= 1e-10);
    }

    #[test]
    fn ode_agrees_with_closed_form() {
        for (model, t) in [(ModelKind::Minkowski, 0.5), (ModelKind::Euclidean, 1.0)] {
            let s = RadialSolution::new(model, 1.0, t).unwrap();
            let chk = s.ode_crosscheck(10_000);
            assert!(chk.max_flux_deviation < 1e-10);
            assert!((chk.rise - s.profile(1.0)).abs() < 1e-10);
            assert!((chk.boundary_slope - t).abs() < 1e-10);
            assert!(chk.max_profile_deviation < 1e-10);
        }
    }

    #[test]
    fn dual_profile_is_the_legendre_transform() {
        for (model, t) in [(ModelKind::Minkowski, 0.5), (ModelKind::Euclidean, 1.0)] {
            let s = RadialSolution::new(model, 1.3, t).unwrap();
            for q in 1..10 {
                let slope = t * q as f64 / 10.0;
                let r = s.radius_of_slope(slope);
                assert_abs_diff_eq!(s.slope(r), slope, epsilon = 1e-14);
                assert_abs_diff_eq!(s.dual_profile(slope), slope * r - s.profile(r), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn seeds_for_ball_and_general_pairs() {
        use crate::domain::ConvexDomain;
        let b1 = ConvexDomain::ball([0.0, 0.0], 1.0).unwrap();
        let spec = ProblemSpec::new(ModelKind::Minkowski, b1.clone(), ConvexDomain::ball([0.2, 0.0], 0.3).unwrap(), 12, 24)
            .unwrap();
        let f = seed_field(&spec).unwrap();
        let sol = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.3).unwrap();
        assert_eq!(f.c, sol.c);
        for k in spec.grid.boundary_nodes() {
            let g = spec.grid.node_derivatives(&f.u, k).du;
            assert!(((g - Vector2::new(0.2, 0.0)).norm() - 0.3).abs() < 1e-5);
        }
        let ell = ConvexDomain::ellipse([0.0, 0.0], [1.0, 0.8]).unwrap();
        let tgt = ConvexDomain::ball([0.0, 0.0], 0.4).unwrap();
        let spec = ProblemSpec::new(ModelKind::Minkowski, ell, tgt.clone(), 12, 24).unwrap();
        let f = seed_field(&spec).unwrap();
        for k in 0..spec.grid.len() {
            let d = spec.grid.node_derivatives(&f.u, k);
            assert!(tgt.h(&d.du) >= -1e-12);
            assert!(d.d2u[(0, 0)] > 0.0);
        }
        let r = spec.residual(&f.u, f.c).unwrap();
        assert!(r[0].abs() < 1e-12);
        let dual = spec.dual(12, 24).unwrap();
        let f = seed_field(&dual).unwrap();
        assert!(f.dual);
        assert!(dual.residual(&f.u, f.c).unwrap()[0].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn profile_solves_the_flux_equation(r0 in 0.2f64..3.0, t in 0.05f64..0.95, x in 0.05f64..1.0) {
            for model in [ModelKind::Minkowski, ModelKind::Euclidean] {
                let s = RadialSolution::new(model, r0, t).unwrap();
                let r = x * r0;
                // div(Du/v) for radial u: u''/v³ + u'/(r v)
                let p = s.slope(r);
                let v = model.v_of(p * p);
                let lhs = s.second_derivative(r) / v.powi(3) + p / (r * v);
                prop_assert!((lhs - s.c).abs() < 1e-10 * s.c.max(1.0));
                // Same through the kernel at a point on an arbitrary ray.
                let e = Vector2::new(0.6, 0.8);
                let d2u = e * e.transpose() * s.second_derivative(r)
                    + (nalgebra::Matrix2::identity() - e * e.transpose()) * (p / r);
                let st = crate::kernel::PointState { du: e * p, d2u };
                let kernel = crate::kernel::CurvatureKernel::new(model).with_eps_space(1e-12);
                let h_kernel = kernel.mean_curvature(&st).unwrap();
                prop_assert!((h_kernel - s.c).abs() < 1e-10 * s.c.max(1.0));
                let h = 1e-5 * r0;
                let fd = (s.profile(r + h) - s.profile(r - h)) / (2.0 * h);
                prop_assert!((fd - p).abs() < 1e-7);
                if model == ModelKind::Minkowski {
                    prop_assert!(p < 1.0);
                }
                prop_assert!(s.slope(r * 0.99) < p);
            }
        }

        #[test]
        fn shifted_seed_moves_the_gradient_image(sx in -0.3f64..0.3, sy in -0.3f64..0.3) {
            // Adding a linear function leaves D²u alone and translates Du.
            let s = RadialSolution::new(ModelKind::Minkowski, 1.0, 0.4).unwrap();
            let dom = crate::domain::ConvexDomain::ball([0.0, 0.0], 1.0).unwrap();
            let grid = MappedGrid::new(&dom, 12, 24).unwrap();
            let shift = Vector2::new(sx, sy);
            let a = grid.derivatives(&s.seed(&grid, Vector2::zeros(), Vector2::zeros())).unwrap();
            let b = grid.derivatives(&s.seed(&grid, Vector2::zeros(), shift)).unwrap();
            for (da, db) in a.iter().zip(&b) {
                prop_assert!((da.d2u - db.d2u).abs().max() < 1e-9);
                prop_assert!((db.du - da.du - shift).abs().max() < 1e-11);
            }
            for k in grid.boundary_nodes() {
                let g = s.seed_gradient(&grid.node(k), Vector2::zeros(), shift);
                prop_assert!(((g - shift).norm() - 0.4).abs() < 1e-12);
            }
        }
    }
}
