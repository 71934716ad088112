//! Uniformly convex planar domains described by smooth concave defining
//! functions.
//!
//! A domain is `{x : h(x) > 0}` for a defining function `h` with `h = 0` on the
//! boundary and `D²h ≤ −θ I`. Every kind available here has a quadratic
//! defining function, so the Hessian is constant and `θ`, the peak and
//! `h_max` are exact.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::numerics::{safeguarded_newton, sym_eigenvalues};

/// Relative boundary tolerance: `|h(x)| ≤ BOUNDARY_TOL · diam` counts as on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Smallest admissible super-level parameter for [`ConvexDomain::sublevel_domain`].
pub const SUBLEVEL_T_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid domain parameter: {0}")]
    InvalidParameter(String),
    #[error("point is not on the boundary: |h(x)| = {value:e} exceeds {tol:e}")]
    NotOnBoundary { value: f64, tol: f64 },
    #[error("super-level parameter t = {t} is below the floor {floor}")]
    DegenerateSublevel { t: f64, floor: f64 },
    #[error("boundary radius along direction {phi} could not be bracketed")]
    RootFindFailure { phi: f64 },
}

/// Value, gradient and Hessian of a defining function at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefiningEval {
    pub value: f64,
    pub grad: Vector2<f64>,
    pub hess: Matrix2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `h(x) = (R² − |x − x₀|²) / (2R)`: `|Dh| = 1` on the boundary, `D²h = −I/R`.
    Ball { center: [f64; 2], radius: f64 },
    /// `h(x) = ½ s (1 − (x₁/a)² − (x₂/b)²)` with `s = max(a, b)`, so that
    /// `|Dh| ∈ [1, max/min]` on the boundary and a circle matches [`Shape::Ball`].
    Ellipse { center: [f64; 2], semi_axes: [f64; 2] },
    /// `h = (1 − w) h_from + w h_to`; concave, and its positivity set lies in the
    /// union of the two domains.
    Blend {
        from: Box<ConvexDomain>,
        to: Box<ConvexDomain>,
        weight: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DomainRepr {
    shape: Shape,
    #[serde(default)]
    level: f64,
}

/// A uniformly convex domain `{x : h_shape(x) − level > 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct ConvexDomain {
    shape: Shape,
    level: f64,
    theta: f64,
    h_max: f64,
    peak: Vector2<f64>,
    diameter: f64,
}

impl TryFrom<DomainRepr> for ConvexDomain {
    type Error = DomainError;
    fn try_from(r: DomainRepr) -> Result<Self, DomainError> {
        ConvexDomain::from_shape(r.shape, r.level)
    }
}

impl From<ConvexDomain> for DomainRepr {
    fn from(d: ConvexDomain) -> Self {
        DomainRepr { shape: d.shape, level: d.level }
    }
}

fn positive(name: &str, v: f64) -> Result<(), DomainError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DomainError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite_point(name: &str, p: [f64; 2]) -> Result<(), DomainError> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DomainError::InvalidParameter(format!("{name} must be finite")))
    }
}

impl ConvexDomain {
    pub fn ball(center: [f64; 2], radius: f64) -> Result<Self, DomainError> {
        finite_point("center", center)?;
        positive("radius", radius)?;
        Self::from_shape(Shape::Ball { center, radius }, 0.0)
    }

    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2]) -> Result<Self, DomainError> {
        finite_point("center", center)?;
        positive("semi-axis a", semi_axes[0])?;
        positive("semi-axis b", semi_axes[1])?;
        Self::from_shape(Shape::Ellipse { center, semi_axes }, 0.0)
    }

    /// Convex combination `(1 − weight)·h_from + weight·h_to` of two defining functions.
    pub fn blend(from: &ConvexDomain, to: &ConvexDomain, weight: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(DomainError::InvalidParameter(format!("blend weight {weight} outside [0, 1]")));
        }
        Self::from_shape(
            Shape::Blend { from: Box::new(from.clone()), to: Box::new(to.clone()), weight },
            0.0,
        )
    }

    fn from_shape(shape: Shape, level: f64) -> Result<Self, DomainError> {
        if !level.is_finite() {
            return Err(DomainError::InvalidParameter("level must be finite".into()));
        }
        let mut d = ConvexDomain {
            shape,
            level,
            theta: 0.0,
            h_max: 0.0,
            peak: Vector2::zeros(),
            diameter: 0.0,
        };
        d.peak = d.locate_peak();
        let at_peak = d.eval_defining(&d.peak);
        let (_, lmax) = sym_eigenvalues(&at_peak.hess);
        if !(lmax < 0.0) {
            return Err(DomainError::InvalidParameter("defining function is not uniformly concave".into()));
        }
        d.theta = -lmax;
        d.h_max = at_peak.value;
        if !(d.h_max > 0.0) {
            return Err(DomainError::InvalidParameter("domain is empty (h_max ≤ 0)".into()));
        }
        let mut diam: f64 = 0.0;
        for k in 0..64 {
            let phi = k as f64 * PI / 64.0;
            diam = diam.max(d.boundary_radius(phi)? + d.boundary_radius(phi + PI)?);
        }
        d.diameter = diam;
        Ok(d)
    }

    fn locate_peak(&self) -> Vector2<f64> {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Ellipse { center, .. } => Vector2::new(center[0], center[1]),
            Shape::Blend { from, to, weight } => {
                let mut x = from.peak * (1.0 - weight) + to.peak * *weight;
                for _ in 0..50 {
                    let e = self.eval_defining(&x);
                    let Some(inv) = e.hess.try_inverse() else { break };
                    let step = inv * e.grad;
                    x -= step;
                    if step.norm() <= 1e-15 * (1.0 + x.norm()) {
                        break;
                    }
                }
                x
            }
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Constant subtracted from the shape's defining function.
    pub fn level(&self) -> f64 {
        self.level
    }

    /// Uniform concavity constant: `D²h ≤ −θ I`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Unique maximizer of the defining function.
    pub fn peak(&self) -> Vector2<f64> {
        self.peak
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn boundary_tolerance(&self) -> f64 {
        BOUNDARY_TOL * self.diameter
    }

    fn eval_shape(shape: &Shape, x: &Vector2<f64>) -> DefiningEval {
        match shape {
            Shape::Ball { center, radius } => {
                let d = x - Vector2::new(center[0], center[1]);
                DefiningEval {
                    value: (radius * radius - d.norm_squared()) / (2.0 * radius),
                    grad: -d / *radius,
                    hess: -Matrix2::identity() / *radius,
                }
            }
            Shape::Ellipse { center, semi_axes } => {
                let [a, b] = *semi_axes;
                let s = a.max(b);
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                DefiningEval {
                    value: 0.5 * s * (1.0 - (dx / a).powi(2) - (dy / b).powi(2)),
                    grad: Vector2::new(-s * dx / (a * a), -s * dy / (b * b)),
                    hess: Matrix2::new(-s / (a * a), 0.0, 0.0, -s / (b * b)),
                }
            }
            Shape::Blend { from, to, weight } => {
                let f = from.eval_defining(x);
                let t = to.eval_defining(x);
                let w = *weight;
                DefiningEval {
                    value: (1.0 - w) * f.value + w * t.value,
                    grad: f.grad * (1.0 - w) + t.grad * w,
                    hess: f.hess * (1.0 - w) + t.hess * w,
                }
            }
        }
    }

    /// Value, gradient and Hessian of the defining function (smooth on all of ℝ²).
    pub fn eval_defining(&self, x: &Vector2<f64>) -> DefiningEval {
        let mut e = Self::eval_shape(&self.shape, x);
        e.value -= self.level;
        e
    }

    pub fn h(&self, x: &Vector2<f64>) -> f64 {
        self.eval_defining(x).value
    }

    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        self.h(x) > 0.0
    }

    /// Unit inward normal `Dh/|Dh|` at a boundary point.
    pub fn inward_normal(&self, x: &Vector2<f64>) -> Result<Vector2<f64>, DomainError> {
        let e = self.eval_defining(x);
        let tol = self.boundary_tolerance();
        if e.value.abs() > tol {
            return Err(DomainError::NotOnBoundary { value: e.value.abs(), tol });
        }
        Ok(e.grad / e.grad.norm())
    }

    /// Distance from the peak to the boundary along direction `phi`.
    pub fn boundary_radius(&self, phi: f64) -> Result<f64, DomainError> {
        let dir = Vector2::new(phi.cos(), phi.sin());
        let f = |r: f64| {
            let e = self.eval_defining(&(self.peak + dir * r));
            (e.value, e.grad.dot(&dir))
        };
        // Quadratic decay from the peak gives a first estimate of the scale.
        let curvature = -(dir.transpose() * self.eval_defining(&self.peak).hess * dir)[(0, 0)];
        let mut hi = if curvature > 0.0 { (2.0 * self.h_max / curvature).sqrt() } else { 1.0 };
        let mut tries = 0;
        while f(hi).0 >= 0.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(DomainError::RootFindFailure { phi });
            }
        }
        safeguarded_newton(f, 0.0, hi, 200).ok_or(DomainError::RootFindFailure { phi })
    }

    /// Boundary point in direction `phi` from the peak.
    pub fn boundary_point(&self, phi: f64) -> Result<Vector2<f64>, DomainError> {
        Ok(self.peak + Vector2::new(phi.cos(), phi.sin()) * self.boundary_radius(phi)?)
    }

    /// Radius of the largest ball centered at the peak contained in the closure.
    pub fn inradius(&self) -> f64 {
        self.radius_extreme(f64::min, f64::INFINITY)
    }

    /// Radius of the smallest ball centered at the peak containing the domain.
    pub fn circumradius(&self) -> f64 {
        self.radius_extreme(f64::max, 0.0)
    }

    fn radius_extreme(&self, pick: fn(f64, f64) -> f64, init: f64) -> f64 {
        if let Some((_, r)) = self.as_ball() {
            return r;
        }
        (0..720)
            .map(|k| self.boundary_radius(k as f64 * PI / 360.0).expect("valid domain has a boundary radius"))
            .fold(init, pick)
    }

    /// `Some((center, radius))` when the domain is a disc.
    pub fn as_ball(&self) -> Option<(Vector2<f64>, f64)> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r2 = radius * radius - 2.0 * radius * self.level;
                Some((Vector2::new(center[0], center[1]), r2.sqrt()))
            }
            Shape::Ellipse { center, semi_axes } if semi_axes[0] == semi_axes[1] => {
                let k = (1.0 - 2.0 * self.level / semi_axes[0]).sqrt();
                Some((Vector2::new(center[0], center[1]), k * semi_axes[0]))
            }
            _ => None,
        }
    }

    /// The super-level domain `{h ≥ (1 − t) h_max}` with defining function
    /// `h − (1 − t) h_max`. At `t = 1` the domain is returned unchanged.
    pub fn sublevel_domain(&self, t: f64) -> Result<ConvexDomain, DomainError> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(DomainError::InvalidParameter(format!("t = {t} outside (0, 1]")));
        }
        if t < SUBLEVEL_T_FLOOR {
            return Err(DomainError::DegenerateSublevel { t, floor: SUBLEVEL_T_FLOOR });
        }
        Self::from_shape(self.shape.clone(), self.level + (1.0 - t) * self.h_max)
    }

    /// Area and perimeter.
    pub fn measures(&self) -> Measures {
        match &self.shape {
            Shape::Ball { .. } => {
                let (_, r) = self.as_ball().expect("ball");
                Measures { area: PI * r * r, perimeter: 2.0 * PI * r }
            }
            Shape::Ellipse { semi_axes, .. } => {
                let [a, b] = *semi_axes;
                let k = (1.0 - 2.0 * self.level / a.max(b)).sqrt();
                let (a, b) = (k * a, k * b);
                Measures { area: PI * a * b, perimeter: ellipse_perimeter(a, b) }
            }
            Shape::Blend { .. } => {
                // Periodic trapezoid in the peak-centered polar parameterization.
                let n = 512;
                let dphi = 2.0 * PI / n as f64;
                let mut area = 0.0;
                let mut perimeter = 0.0;
                for k in 0..n {
                    let phi = k as f64 * dphi;
                    let r = self.boundary_radius(phi).expect("valid domain has a boundary radius");
                    let e = Vector2::new(phi.cos(), phi.sin());
                    let e_perp = Vector2::new(-phi.sin(), phi.cos());
                    let g = self.eval_defining(&(self.peak + e * r)).grad;
                    let dr = -r * g.dot(&e_perp) / g.dot(&e);
                    area += 0.5 * r * r * dphi;
                    perimeter += (r * r + dr * dr).sqrt() * dphi;
                }
                Measures { area, perimeter }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measures {
    pub area: f64,
    pub perimeter: f64,
}

/// Arc length of the ellipse with semi-axes `a`, `b` by the periodic trapezoid
/// rule on the angular parameterization (spectrally accurate).
fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let n = 1024;
    let dt = 2.0 * PI / n as f64;
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt()
        })
        .sum::<f64>()
        * dt
}
