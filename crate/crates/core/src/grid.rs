//! Boundary-fitted polar grid on a convex domain.
//!
//! Nodes sit at `x = peak + ρ_i r(φ_j) e(φ_j)`, where `peak` is the maximum of
//! the defining function, `r(φ)` the boundary radius, `ρ_i = i/n_rho` and
//! `φ_j = 2πj/n_phi`. Node 0 is the pole (`ρ = 0`); ring `i ≥ 1`, angle `j`
//! has index `1 + (i − 1) n_phi + j`.
//!
//! Derivatives are taken in the parameter plane and mapped to Cartesian ones
//! by the chain rule, with the metric terms differentiated by the same
//! operators (so affine functions are reproduced to roundoff):
//!
//! - `∂φ`, `∂φφ`: Fourier pseudo-spectral on each ring,
//! - `∂ρ`: 5-point 4th-order stencils; ring 1 reaches across the pole onto
//!   the opposite ray,
//! - `∂ρρ`: 3-point central, 4-point one-sided on the boundary ring,
//! - `∂ρφ`: `∂φ` applied to `∂ρ`.
//!
//! At the pole a least-squares quadratic over the first two rings supplies
//! the gradient and Hessian.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

use crate::domain::{ConvexDomain, DomainError};
use crate::numerics::{fd_weights, lagrange_weights, FourierRows};

pub const MIN_RINGS: usize = 4;
pub const MIN_ANGLES: usize = 8;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid too coarse: n_rho = {n_rho} (min {MIN_RINGS}), n_phi = {n_phi} (min {MIN_ANGLES})")]
    TooCoarse { n_rho: usize, n_phi: usize },
    #[error("n_phi must be even, got {0}")]
    OddAngularCount(usize),
    #[error("degenerate mapping at node {node}: det = {det}")]
    DegenerateMapping { node: usize, det: f64 },
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Pole,
    Interior,
    Boundary,
}

/// Cartesian gradient and Hessian at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeDerivatives {
    pub du: Vector2<f64>,
    pub d2u: Matrix2<f64>,
}

impl NodeDerivatives {
    /// From `(u_x, u_y, u_xx, u_xy, u_yy)`.
    pub fn from_cart(c: [f64; 5]) -> Self {
        NodeDerivatives {
            du: Vector2::new(c[0], c[1]),
            d2u: Matrix2::new(c[2], c[3], c[3], c[4]),
        }
    }
}

type Map5 = SMatrix<f64, 5, 5>;

#[derive(Clone, Debug)]
pub struct MappedGrid {
    domain: ConvexDomain,
    n_rho: usize,
    n_phi: usize,
    peak: Vector2<f64>,
    radii: Vec<f64>,
    nodes: Vec<Vector2<f64>>,
    fourier: FourierRows,
    /// Ring 1, per angle: weights on [reflected ring-1 node, pole, rings 1..=3].
    rho1_first_ring: Vec<[f64; 5]>,
    /// Rings ≥ 2: first ring of the stencil and weights on five consecutive rings.
    rho1_rings: Vec<(usize, [f64; 5])>,
    /// Per ring: (first ring, weights) for `∂ρρ`.
    rho2_rings: Vec<(usize, Vec<f64>)>,
    /// Per node: parameter derivatives → Cartesian derivatives.
    transforms: Vec<Map5>,
    /// Pole: Cartesian coefficients of `u_m − u_pole`.
    pole_stencil: Vec<(usize, [f64; 5])>,
    weights: Vec<f64>,
    arc_lengths: Vec<f64>,
}

impl MappedGrid {
    pub fn new(domain: &ConvexDomain, n_rho: usize, n_phi: usize) -> Result<Self, GridError> {
        if n_rho < MIN_RINGS || n_phi < MIN_ANGLES {
            return Err(GridError::TooCoarse { n_rho, n_phi });
        }
        if n_phi % 2 != 0 {
            return Err(GridError::OddAngularCount(n_phi));
        }
        let peak = domain.peak();
        let dphi = 2.0 * PI / n_phi as f64;
        let radii = (0..n_phi)
            .map(|j| domain.boundary_radius(j as f64 * dphi))
            .collect::<Result<Vec<_>, _>>()?;
        let drho = 1.0 / n_rho as f64;
        let mut nodes = Vec::with_capacity(1 + n_rho * n_phi);
        nodes.push(peak);
        for i in 1..=n_rho {
            for (j, r) in radii.iter().enumerate() {
                let phi = j as f64 * dphi;
                nodes.push(peak + Vector2::new(phi.cos(), phi.sin()) * (i as f64 * drho * r));
            }
        }

        let rho1_first_ring = (0..n_phi)
            .map(|j| {
                let s = -drho * radii[(j + n_phi / 2) % n_phi] / radii[j];
                let w = fd_weights(drho, &[s, 0.0, drho, 2.0 * drho, 3.0 * drho], 1);
                [w[1][0], w[1][1], w[1][2], w[1][3], w[1][4]]
            })
            .collect();
        let rho1_rings = (0..=n_rho)
            .map(|i| {
                let start = if i < 2 { 0 } else { (i - 2).min(n_rho - 4) };
                let xs: Vec<f64> = (start..start + 5).map(|q| q as f64 * drho).collect();
                let w = fd_weights(i as f64 * drho, &xs, 1);
                (start, [w[1][0], w[1][1], w[1][2], w[1][3], w[1][4]])
            })
            .collect();
        let rho2_rings = (0..=n_rho)
            .map(|i| {
                let start = if i == n_rho { n_rho - 3 } else { i.saturating_sub(1) };
                let len = if i == n_rho { 4 } else { 3 };
                let xs: Vec<f64> = (start..start + len).map(|q| q as f64 * drho).collect();
                (start, fd_weights(i as f64 * drho, &xs, 2)[2].clone())
            })
            .collect();

        let mut grid = MappedGrid {
            domain: domain.clone(),
            n_rho,
            n_phi,
            peak,
            radii,
            nodes,
            fourier: FourierRows::new(n_phi),
            rho1_first_ring,
            rho1_rings,
            rho2_rings,
            transforms: Vec::new(),
            pole_stencil: Vec::new(),
            weights: Vec::new(),
            arc_lengths: Vec::new(),
        };
        grid.build_transforms()?;
        grid.build_pole_stencil();
        grid.build_quadrature();
        Ok(grid)
    }

    fn build_transforms(&mut self) -> Result<(), GridError> {
        let transforms: Result<Vec<Map5>, GridError> = (0..self.len())
            .into_par_iter()
            .map(|k| {
                if k == 0 {
                    return Ok(Map5::identity());
                }
                let xp = self.param_derivatives_of_coords(k);
                let jac = Matrix2::from_columns(&[xp[0], xp[1]]);
                let det = jac.determinant();
                if !(det > 0.0) {
                    return Err(GridError::DegenerateMapping { node: k, det });
                }
                let a = jac.try_inverse().expect("nonzero determinant").transpose();
                let mut t = Map5::zeros();
                for col in 0..5 {
                    let mut p = [0.0; 5];
                    p[col] = 1.0;
                    let c = cart_from_param(&p, &xp, &a);
                    for row in 0..5 {
                        t[(row, col)] = c[row];
                    }
                }
                Ok(t)
            })
            .collect();
        self.transforms = transforms?;
        Ok(())
    }

    fn param_derivatives_of_coords(&self, k: usize) -> [Vector2<f64>; 5] {
        let xk = self.nodes[k];
        let mut out = [Vector2::zeros(); 5];
        self.for_each_param_entry(k, |m, pc| {
            let d = self.nodes[m] - xk;
            for t in 0..5 {
                out[t] += d * pc[t];
            }
        });
        out
    }

    fn build_pole_stencil(&mut self) {
        let scale = 1.0 / self.n_rho as f64 * self.radii.iter().cloned().fold(0.0, f64::max);
        let mut members = Vec::with_capacity(2 * self.n_phi);
        let mut normal = SMatrix::<f64, 5, 5>::zeros();
        for i in 1..=2 {
            for j in 0..self.n_phi {
                let m = self.node_index(i, j);
                let d = (self.nodes[m] - self.peak) / scale;
                let row = SVector::<f64, 5>::new(d[0], d[1], d[0] * d[0], d[0] * d[1], d[1] * d[1]);
                normal += row * row.transpose();
                members.push((m, row));
            }
        }
        let inv = normal.try_inverse().expect("pole fit is well posed on two full rings");
        let s2 = scale * scale;
        self.pole_stencil = members
            .into_iter()
            .map(|(m, row)| {
                let c = inv * row;
                (m, [c[0] / scale, c[1] / scale, 2.0 * c[2] / s2, c[3] / s2, 2.0 * c[4] / s2])
            })
            .collect();
    }

    fn build_quadrature(&mut self) {
        let n = self.n_rho;
        let drho = 1.0 / n as f64;
        let dphi = 2.0 * PI / self.n_phi as f64;
        let mut w = vec![0.0; self.len()];
        let sum_r2: f64 = self.radii.iter().map(|r| r * r).sum();
        w[0] = drho * drho / 8.0 * sum_r2 * dphi;
        for i in 1..=n {
            let m = if i == n {
                (1.0 - (1.0 - 0.5 * drho).powi(2)) / 2.0
            } else {
                i as f64 * drho * drho
            };
            for j in 0..self.n_phi {
                w[self.node_index(i, j)] = dphi * self.radii[j] * self.radii[j] * m;
            }
        }
        self.weights = w;
        self.arc_lengths = (0..self.n_phi)
            .map(|j| self.param_derivatives_of_coords(self.node_index(n, j))[1].norm() * dphi)
            .collect();
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        1 + self.n_rho * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn peak(&self) -> Vector2<f64> {
        self.peak
    }

    pub fn nodes(&self) -> &[Vector2<f64>] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Vector2<f64> {
        self.nodes[k]
    }

    pub fn boundary_radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn drho(&self) -> f64 {
        1.0 / self.n_rho as f64
    }

    pub fn dphi(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    /// Index of ring `i`, angle `j` (taken mod `n_phi`); ring 0 is the pole.
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        if i == 0 {
            0
        } else {
            1 + (i - 1) * self.n_phi + j % self.n_phi
        }
    }

    /// `(ring, angle)` of a node; the pole is `(0, 0)`.
    pub fn ring_angle(&self, k: usize) -> (usize, usize) {
        if k == 0 {
            (0, 0)
        } else {
            (1 + (k - 1) / self.n_phi, (k - 1) % self.n_phi)
        }
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        match self.ring_angle(k).0 {
            0 => NodeKind::Pole,
            i if i == self.n_rho => NodeKind::Boundary,
            _ => NodeKind::Interior,
        }
    }

    pub fn boundary_nodes(&self) -> std::ops::Range<usize> {
        let first = self.node_index(self.n_rho, 0);
        first..first + self.n_phi
    }

    /// Quadrature weights; `Σ w f` integrates `f` over the domain.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Boundary arc-length weights, indexed by angle.
    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_lengths
    }

    /// Unit outward normal at boundary angle `j`.
    pub fn outward_normal(&self, j: usize) -> Vector2<f64> {
        let g = self.domain.eval_defining(&self.nodes[self.node_index(self.n_rho, j)]).grad;
        -g / g.norm()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn integrate_boundary(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        self.boundary_nodes()
            .enumerate()
            .map(|(j, k)| self.arc_lengths[j] * f(j, k))
            .sum()
    }

    /// Subtract the weighted mean so that `Σ w u = 0`.
    pub fn project_mean_zero(&self, u: &mut [f64]) {
        let mean = self.integrate(u) / self.weights.iter().sum::<f64>();
        for v in u.iter_mut() {
            *v -= mean;
        }
    }

    pub fn check_len(&self, got: usize) -> Result<(), GridError> {
        if got != self.len() {
            return Err(GridError::LengthMismatch { expected: self.len(), got });
        }
        Ok(())
    }

    fn rho1_stencil(&self, i: usize, j: usize) -> [(usize, f64); 5] {
        if i == 1 {
            let w = &self.rho1_first_ring[j % self.n_phi];
            [
                (self.node_index(1, j + self.n_phi / 2), w[0]),
                (0, w[1]),
                (self.node_index(1, j), w[2]),
                (self.node_index(2, j), w[3]),
                (self.node_index(3, j), w[4]),
            ]
        } else {
            let (start, w) = &self.rho1_rings[i];
            std::array::from_fn(|q| (self.node_index(start + q, j), w[q]))
        }
    }

    /// Visit every `(m, c)` such that the parameter derivatives
    /// `(u_ρ, u_φ, u_ρρ, u_ρφ, u_φφ)` at non-pole node `k` equal
    /// `Σ c (u_m − u_k)`. Nodes may be visited more than once.
    pub fn for_each_param_entry(&self, k: usize, mut f: impl FnMut(usize, [f64; 5])) {
        let (i, j) = self.ring_angle(k);
        debug_assert!(i > 0, "the pole has no parameter stencil");
        for (m, w) in self.rho1_stencil(i, j) {
            f(m, [w, 0.0, 0.0, 0.0, 0.0]);
        }
        let (start, w2) = &self.rho2_rings[i];
        for (q, w) in w2.iter().enumerate() {
            f(self.node_index(start + q, j), [0.0, 0.0, *w, 0.0, 0.0]);
        }
        for l in 1..self.n_phi {
            let d1 = self.fourier.d1[l];
            f(self.node_index(i, j + l), [0.0, d1, 0.0, 0.0, self.fourier.d2[l]]);
            if d1 != 0.0 {
                for (m, w) in self.rho1_stencil(i, j + l) {
                    f(m, [0.0, 0.0, 0.0, d1 * w, 0.0]);
                }
            }
        }
    }

    /// Visit every `(m, c)` such that `(u_x, u_y, u_xx, u_xy, u_yy)` at node
    /// `k` equals `Σ c (u_m − u_k)`.
    pub fn for_each_cart_entry(&self, k: usize, mut f: impl FnMut(usize, [f64; 5])) {
        if k == 0 {
            for (m, c) in &self.pole_stencil {
                f(*m, *c);
            }
            return;
        }
        let t = &self.transforms[k];
        self.for_each_param_entry(k, |m, pc| {
            let p = SVector::<f64, 5>::from(pc);
            let c = t * p;
            f(m, [c[0], c[1], c[2], c[3], c[4]]);
        });
    }

    /// Like [`Self::for_each_cart_entry`] restricted to the gradient
    /// `(u_x, u_y)`, visiting only the first-derivative stencils.
    pub fn for_each_gradient_entry(&self, k: usize, mut f: impl FnMut(usize, [f64; 2])) {
        if k == 0 {
            for (m, c) in &self.pole_stencil {
                f(*m, [c[0], c[1]]);
            }
            return;
        }
        let t = &self.transforms[k];
        let map = |a: f64, b: f64| [t[(0, 0)] * a + t[(0, 1)] * b, t[(1, 0)] * a + t[(1, 1)] * b];
        let (i, j) = self.ring_angle(k);
        for (m, w) in self.rho1_stencil(i, j) {
            f(m, map(w, 0.0));
        }
        for l in 1..self.n_phi {
            f(self.node_index(i, j + l), map(0.0, self.fourier.d1[l]));
        }
    }

    /// `(u_x, u_y, u_xx, u_xy, u_yy)` at node `k`.
    pub fn cart_derivatives(&self, u: &[f64], k: usize) -> [f64; 5] {
        let uk = u[k];
        if k == 0 {
            let mut c = [0.0; 5];
            for (m, w) in &self.pole_stencil {
                let d = u[*m] - uk;
                for t in 0..5 {
                    c[t] += w[t] * d;
                }
            }
            return c;
        }
        let mut p = SVector::<f64, 5>::zeros();
        self.for_each_param_entry(k, |m, pc| {
            let d = u[m] - uk;
            for t in 0..5 {
                p[t] += pc[t] * d;
            }
        });
        let c = self.transforms[k] * p;
        [c[0], c[1], c[2], c[3], c[4]]
    }

    pub fn node_derivatives(&self, u: &[f64], k: usize) -> NodeDerivatives {
        NodeDerivatives::from_cart(self.cart_derivatives(u, k))
    }

    /// Derivatives at every node.
    pub fn derivatives(&self, u: &[f64]) -> Result<Vec<NodeDerivatives>, GridError> {
        self.check_len(u.len())?;
        Ok((0..self.len()).into_par_iter().map(|k| self.node_derivatives(u, k)).collect())
    }

    /// `(ρ, φ)` of a point, with `φ ∈ [0, 2π)`.
    pub fn param_of(&self, x: &Vector2<f64>) -> Result<(f64, f64), GridError> {
        let d = x - self.peak;
        let dist = d.norm();
        if dist == 0.0 {
            return Ok((0.0, 0.0));
        }
        let phi = d[1].atan2(d[0]).rem_euclid(2.0 * PI);
        Ok((dist / self.domain.boundary_radius(phi)?, phi))
    }

    /// Bicubic Lagrange weights in `(ρ, φ)`; the `ρ` stencil continues across
    /// the pole onto the opposite ray. Points slightly outside are extrapolated.
    pub fn interpolation_weights(&self, x: &Vector2<f64>) -> Result<Vec<(usize, f64)>, GridError> {
        let (rho, phi) = self.param_of(x)?;
        let n = self.n_rho as isize;
        let half = self.n_phi / 2;
        let drho = self.drho();
        let dphi = self.dphi();
        let jf = (phi / dphi).floor() as isize;
        let angles: Vec<isize> = (jf - 1..=jf + 2).collect();
        let phis: Vec<f64> = angles.iter().map(|&a| a as f64 * dphi).collect();
        let wphi = lagrange_weights(phi, &phis);
        let i0 = ((rho / drho).floor() as isize - 1).clamp(-2, n - 3);
        let mut out = Vec::with_capacity(16);
        for (a, wp) in angles.iter().zip(&wphi) {
            let j = a.rem_euclid(self.n_phi as isize) as usize;
            let mut pos = [0.0; 4];
            let mut idx = [0usize; 4];
            for q in 0..4 {
                let ring = i0 + q as isize;
                if ring >= 0 {
                    pos[q] = ring as f64 * drho;
                    idx[q] = self.node_index(ring as usize, j);
                } else {
                    let r = (-ring) as usize;
                    pos[q] = -(r as f64) * drho * self.radii[(j + half) % self.n_phi] / self.radii[j];
                    idx[q] = self.node_index(r, j + half);
                }
            }
            for (m, w) in idx.iter().zip(lagrange_weights(rho, &pos)) {
                out.push((*m, w * wp));
            }
        }
        Ok(out)
    }

    pub fn interpolate(&self, values: &[f64], x: &Vector2<f64>) -> Result<f64, GridError> {
        Ok(self.interpolation_weights(x)?.iter().map(|(m, w)| values[*m] * w).sum())
    }

    /// Half-resolution grid whose nodes are the even rings and angles of this one.
    pub fn coarsened(&self) -> Result<MappedGrid, GridError> {
        if self.n_rho % 2 != 0 || self.n_phi % 4 != 0 {
            return Err(GridError::TooCoarse { n_rho: self.n_rho / 2, n_phi: self.n_phi / 2 });
        }
        MappedGrid::new(&self.domain, self.n_rho / 2, self.n_phi / 2)
    }

    /// Truncation estimate of the gradient of fixed nodal data: the largest
    /// gradient difference between this grid and its [`Self::coarsened`]
    /// subgrid over the nodes they share.
    pub fn gradient_defect(&self, u: &[f64]) -> Result<f64, GridError> {
        self.check_len(u.len())?;
        let coarse = self.coarsened()?;
        let restricted: Vec<f64> = (0..coarse.len()).map(|k| u[self.shared_node(&coarse, k)]).collect();
        self.gradient_gap(u, &coarse, &restricted)
    }

    /// Largest `|Du − Dv|` over the nodes shared with `coarse`, a grid of half
    /// the resolution on the same domain carrying `v`.
    pub fn gradient_gap(&self, u: &[f64], coarse: &MappedGrid, v: &[f64]) -> Result<f64, GridError> {
        self.check_len(u.len())?;
        coarse.check_len(v.len())?;
        if coarse.domain != self.domain || 2 * coarse.n_rho != self.n_rho || 2 * coarse.n_phi != self.n_phi {
            return Err(GridError::TooCoarse { n_rho: coarse.n_rho, n_phi: coarse.n_phi });
        }
        Ok((0..coarse.len())
            .into_par_iter()
            .map(|k| (self.node_derivatives(u, self.shared_node(coarse, k)).du - coarse.node_derivatives(v, k).du).norm())
            .reduce(|| 0.0, f64::max))
    }

    fn shared_node(&self, coarse: &MappedGrid, k: usize) -> usize {
        if k == 0 {
            return 0;
        }
        let (i, j) = coarse.ring_angle(k);
        self.node_index(2 * i, 2 * j)
    }

    /// Transfer nodal values from `src` by matching parameter coordinates:
    /// a plain copy for equal resolutions, otherwise trigonometric in `φ` on
    /// each source ring and cubic in `ρ` (continued across the pole).
    pub fn resample_from(&self, src: &MappedGrid, values: &[f64]) -> Result<Vec<f64>, GridError> {
        src.check_len(values.len())?;
        if src.n_rho == self.n_rho && src.n_phi == self.n_phi {
            return Ok(values.to_vec());
        }
        let ring_value = |i: usize, phi: f64| -> f64 {
            if i == 0 {
                return values[0];
            }
            periodic_weights(phi, src.n_phi)
                .iter()
                .enumerate()
                .map(|(j, w)| w * values[src.node_index(i, j)])
                .sum()
        };
        let n = src.n_rho as isize;
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                if k == 0 {
                    return Ok(values[0]);
                }
                let (i, j) = self.ring_angle(k);
                let rho = i as f64 * self.drho();
                let phi = j as f64 * self.dphi();
                let opposite = (phi + PI).rem_euclid(2.0 * PI);
                let scale = src.domain.boundary_radius(opposite)? / src.domain.boundary_radius(phi)?;
                let i0 = ((rho / src.drho()).floor() as isize - 1).clamp(-2, n - 3);
                let mut pos = [0.0; 4];
                let mut val = [0.0; 4];
                for q in 0..4 {
                    let ring = i0 + q as isize;
                    if ring >= 0 {
                        pos[q] = ring as f64 * src.drho();
                        val[q] = ring_value(ring as usize, phi);
                    } else {
                        pos[q] = ring as f64 * src.drho() * scale;
                        val[q] = ring_value((-ring) as usize, opposite);
                    }
                }
                Ok(lagrange_weights(rho, &pos).iter().zip(&val).map(|(w, v)| w * v).sum())
            })
            .collect()
    }
}

/// Weights of the trigonometric interpolant through `n` (even) equally spaced
/// samples on `[0, 2π)`, evaluated at `phi`.
fn periodic_weights(phi: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|j| {
            let x = phi - j as f64 * h;
            let half = 0.5 * x;
            if half.sin().abs() < 1e-14 {
                if (0.5 * n as f64 * x).cos() > 0.0 { 1.0 } else { -1.0 }
            } else {
                (0.5 * n as f64 * x).sin() / (n as f64 * half.tan())
            }
        })
        .collect()
}

/// Cartesian derivatives from parameter derivatives `p` given the coordinate
/// derivatives `xp` and `a = J^{-T}`.
fn cart_from_param(p: &[f64; 5], xp: &[Vector2<f64>; 5], a: &Matrix2<f64>) -> [f64; 5] {
    let g = a * Vector2::new(p[0], p[1]);
    let m = Matrix2::new(
        p[2] - g.dot(&xp[2]),
        p[3] - g.dot(&xp[3]),
        p[3] - g.dot(&xp[3]),
        p[4] - g.dot(&xp[4]),
    );
    let h = a * m * a.transpose();
    [g[0], g[1], h[(0, 0)], 0.5 * (h[(0, 1)] + h[(1, 0)]), h[(1, 1)]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> ConvexDomain {
        ConvexDomain::ball([0.0, 0.0], 1.0).unwrap()
    }

    fn ellipse() -> ConvexDomain {
        ConvexDomain::ellipse([0.2, -0.1], [1.0, 0.8]).unwrap()
    }

    fn sample(grid: &MappedGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        grid.nodes().iter().map(|x| f(x[0], x[1])).collect()
    }

    #[test]
    fn indexing_and_kinds() {
        let g = MappedGrid::new(&ball(), 8, 16).unwrap();
        assert_eq!(g.len(), 1 + 8 * 16);
        assert_eq!(g.node_index(1, 0), 1);
        assert_eq!(g.node_index(2, 3), 1 + 16 + 3);
        assert_eq!(g.node_index(1, 17), 2);
        assert_eq!(g.ring_angle(1 + 16 + 3), (2, 3));
        assert_eq!(g.kind(0), NodeKind::Pole);
        assert_eq!(g.kind(5), NodeKind::Interior);
        assert_eq!(g.kind(g.len() - 1), NodeKind::Boundary);
        assert_eq!(g.boundary_nodes().len(), 16);
        for k in g.boundary_nodes() {
            assert!(g.domain().h(&g.node(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_resolutions() {
        assert!(matches!(MappedGrid::new(&ball(), 3, 16), Err(GridError::TooCoarse { .. })));
        assert!(matches!(MappedGrid::new(&ball(), 8, 6), Err(GridError::TooCoarse { .. })));
        assert!(matches!(MappedGrid::new(&ball(), 8, 17), Err(GridError::OddAngularCount(17))));
    }

    #[test]
    fn affine_functions_are_reproduced() {
        for dom in [ball(), ellipse()] {
            let g = MappedGrid::new(&dom, 16, 32).unwrap();
            let u = sample(&g, |x, y| 1.0 + 2.0 * x - 3.0 * y);
            for d in g.derivatives(&u).unwrap() {
                assert!((d.du - Vector2::new(2.0, -3.0)).abs().max() < 1e-12);
                assert!(d.d2u.abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn quadratics_are_reproduced() {
        let f = |x: f64, y: f64| 0.5 * x * x + 0.3 * x * y + 0.2 * y * y - x;
        let exact = |x: f64, y: f64| {
            (Vector2::new(x + 0.3 * y - 1.0, 0.3 * x + 0.4 * y), Matrix2::new(1.0, 0.3, 0.3, 0.4))
        };
        for (dom, tol) in [(ball(), 1e-10), (ellipse(), 1e-8)] {
            let g = MappedGrid::new(&dom, 16, 64).unwrap();
            let u = sample(&g, f);
            let mut worst: f64 = 0.0;
            for (k, d) in g.derivatives(&u).unwrap().iter().enumerate() {
                let x = g.node(k);
                let (du, d2u) = exact(x[0], x[1]);
                worst = worst.max((d.du - du).abs().max()).max((d.d2u - d2u).abs().max());
            }
            assert!(worst < tol, "worst {worst}");
        }
    }

    #[test]
    fn gradient_defect_bounds_the_error() {
        let f = |x: f64, y: f64| (0.7 * x + 0.4 * y).exp() + (x * y).sin();
        let g = MappedGrid::new(&ellipse(), 16, 32).unwrap();
        let c = g.coarsened().unwrap();
        assert_eq!(c.node(c.node_index(3, 5)), g.node(g.node_index(6, 10)));
        let u = sample(&g, f);
        let defect = g.gradient_defect(&u).unwrap();
        let mut err: f64 = 0.0;
        for (k, d) in g.derivatives(&u).unwrap().iter().enumerate() {
            let (x, y) = (g.node(k)[0], g.node(k)[1]);
            let ex = (0.7 * x + 0.4 * y).exp();
            let du = Vector2::new(0.7 * ex + y * (x * y).cos(), 0.4 * ex + x * (x * y).cos());
            err = err.max((d.du - du).norm());
        }
        assert!(defect > 0.0 && err <= defect, "err {err} defect {defect}");
        let b = MappedGrid::new(&ball(), 16, 32).unwrap();
        let quad = sample(&b, |x, y| x * x + 0.5 * y * y);
        assert!(b.gradient_defect(&quad).unwrap() < 1e-9);
        assert!(MappedGrid::new(&ball(), 8, 12).unwrap().coarsened().is_err());
    }

    #[test]
    fn derivative_error_drops_on_refinement() {
        let f = |x: f64, y: f64| (0.7 * x + 0.4 * y).exp() + (x * y).sin();
        let err = |n: usize| {
            let g = MappedGrid::new(&ellipse(), n, 2 * n).unwrap();
            let u = sample(&g, f);
            let mut e: f64 = 0.0;
            for (k, d) in g.derivatives(&u).unwrap().iter().enumerate() {
                let (x, y) = (g.node(k)[0], g.node(k)[1]);
                let ex = (0.7 * x + 0.4 * y).exp();
                let du = Vector2::new(0.7 * ex + y * (x * y).cos(), 0.4 * ex + x * (x * y).cos());
                let s = (x * y).sin();
                let c = (x * y).cos();
                let d2 = Matrix2::new(
                    0.49 * ex - y * y * s,
                    0.28 * ex + c - x * y * s,
                    0.28 * ex + c - x * y * s,
                    0.16 * ex - x * x * s,
                );
                e = e.max((d.du - du).abs().max()).max((d.d2u - d2).abs().max());
            }
            e
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    }

    #[test]
    fn quadrature_and_arc_length() {
        let g = MappedGrid::new(&ball(), 16, 32).unwrap();
        let area: f64 = g.weights().iter().sum();
        assert!((area - PI).abs() < 1e-12);
        let per: f64 = g.arc_lengths().iter().sum();
        assert!((per - 2.0 * PI).abs() < 1e-12);
        let e = ConvexDomain::ellipse([0.0, 0.0], [1.0, 0.6]).unwrap();
        let g = MappedGrid::new(&e, 16, 64).unwrap();
        let m = e.measures();
        assert!((g.weights().iter().sum::<f64>() - m.area).abs() < 1e-10);
        assert!((g.arc_lengths().iter().sum::<f64>() - m.perimeter).abs() < 1e-8);
    }

    #[test]
    fn second_moment_converges() {
        let err = |n: usize| {
            let g = MappedGrid::new(&ball(), n, 2 * n).unwrap();
            (g.integrate(&sample(&g, |x, _| x * x)) - PI / 4.0).abs()
        };
        assert!(err(8) / err(16) > 3.5);
    }

    #[test]
    fn mean_zero_projection() {
        let g = MappedGrid::new(&ellipse(), 8, 16).unwrap();
        let mut u = sample(&g, |x, y| 3.0 + x * x + y);
        g.project_mean_zero(&mut u);
        assert!(g.integrate(&u).abs() < 1e-13);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_accurate_between() {
        let g = MappedGrid::new(&ellipse(), 24, 48).unwrap();
        let f = |x: f64, y: f64| (0.5 * x - 0.3 * y).exp();
        let u = sample(&g, f);
        for k in [0, 7, 100, g.len() - 3] {
            assert!((g.interpolate(&u, &g.node(k)).unwrap() - u[k]).abs() < 1e-12);
        }
        for p in [[0.21, -0.08], [0.5, 0.3], [-0.6, -0.2], [1.1, -0.1]] {
            let x = Vector2::new(p[0], p[1]);
            assert!((g.interpolate(&u, &x).unwrap() - f(p[0], p[1])).abs() < 1e-5);
        }
    }

    #[test]
    fn resampling_copies_or_interpolates() {
        let a = MappedGrid::new(&ball(), 8, 16).unwrap();
        let b = MappedGrid::new(&ellipse(), 8, 16).unwrap();
        let u: Vec<f64> = (0..a.len()).map(|k| k as f64).collect();
        assert_eq!(b.resample_from(&a, &u).unwrap(), u);
        let fine = MappedGrid::new(&ball(), 16, 32).unwrap();
        let v = sample(&a, |x, y| x - 2.0 * y);
        let w = fine.resample_from(&a, &v).unwrap();
        for k in 0..fine.len() {
            let x = fine.node(k);
            assert!((w[k] - (x[0] - 2.0 * x[1])).abs() < 2e-3);
        }
        // Curvature survives the transfer closely enough to keep convexity.
        let coarse = MappedGrid::new(&ellipse(), 16, 32).unwrap();
        let fine = MappedGrid::new(&ellipse(), 32, 64).unwrap();
        let q = sample(&coarse, |x, y| 0.5 * x * x + 0.3 * y * y);
        let w = fine.resample_from(&coarse, &q).unwrap();
        for k in 0..fine.len() {
            let d = fine.node_derivatives(&w, k).d2u;
            assert!((d[(0, 0)] - 1.0).abs() < 0.1 && (d[(1, 1)] - 0.6).abs() < 0.1, "node {k}: {d}");
        }
        assert!(a.resample_from(&fine, &v).is_err());
    }
}
