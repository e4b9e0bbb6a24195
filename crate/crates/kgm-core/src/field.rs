//! Nodal scalar fields, boundary data, and the norms the solver reports.

use crate::error::Error;
use crate::grid::Grid;
use crate::math;
use crate::Result;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

/// Function space a nodal field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Zero trace: the field vanishes on every boundary node.
    Dirichlet,
    /// No boundary constraint (natural/Neumann problems).
    Neumann,
}

impl Space {
    fn name(self) -> &'static str {
        match self {
            Space::Dirichlet => "Dirichlet",
            Space::Neumann => "Neumann",
        }
    }
}

/// Norms understood by [`ScalarField::norm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    L3,
    L6,
    LInf,
    /// `||grad f||_2`; Dirichlet fields only.
    H10,
    /// `(||grad f||_2^2 + mean(f)^2)^(1/2)`.
    H1,
}

/// A scalar sample per grid node.
///
/// Dirichlet fields keep their boundary entries exactly zero; constructors
/// enforce this, so downstream code may rely on it.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    space: Space,
    values: Vec<f64>,
}

impl ScalarField {
    /// The zero field.
    pub fn zeros(grid: &Arc<Grid>, space: Space) -> ScalarField {
        ScalarField { grid: grid.clone(), space, values: vec![0.0; grid.node_count()] }
    }

    /// Sample `f` at node positions.  Dirichlet fields get their boundary
    /// entries forced to zero regardless of `f`.
    pub fn from_fn(
        grid: &Arc<Grid>,
        space: Space,
        mut f: impl FnMut([f64; 3]) -> f64,
    ) -> ScalarField {
        let mut values: Vec<f64> = (0..grid.node_count()).map(|i| f(grid.position(i))).collect();
        if space == Space::Dirichlet {
            for &b in grid.boundary_nodes() {
                values[b] = 0.0;
            }
        }
        ScalarField { grid: grid.clone(), space, values }
    }

    /// Wrap an existing value vector.  Rejects wrong lengths and Dirichlet
    /// data with a nonzero trace.
    pub fn from_values(grid: &Arc<Grid>, space: Space, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.node_count() {
            return Err(Error::BadParameter("value vector length != node count"));
        }
        if space == Space::Dirichlet {
            for &b in grid.boundary_nodes() {
                if values[b] != 0.0 {
                    return Err(Error::SpaceMismatch {
                        expected: "zero boundary trace",
                        got: "nonzero boundary values",
                    });
                }
            }
        }
        Ok(ScalarField { grid: grid.clone(), space, values })
    }

    /// Dirichlet wrapper that zeroes the boundary entries instead of
    /// rejecting them (used by solvers whose iterates only touch the
    /// interior).
    pub(crate) fn dirichlet_from_interior(grid: &Arc<Grid>, mut values: Vec<f64>) -> ScalarField {
        for &b in grid.boundary_nodes() {
            values[b] = 0.0;
        }
        ScalarField { grid: grid.clone(), space: Space::Dirichlet, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True if both fields live on the same grid (same shape and extent).
    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Quadrature of the field.
    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Weighted mean over the box.
    pub fn mean(&self) -> f64 {
        self.grid.mean(&self.values)
    }

    /// `L^p` norm for a real `p >= 1` under the lumped quadrature.
    pub fn lp_norm(&self, p: f64) -> f64 {
        debug_assert!(p >= 1.0);
        let mut acc = 0.0;
        for (w, v) in self.grid.volume_weights().iter().zip(&self.values) {
            acc += w * math::powf(math::abs(*v), p);
        }
        math::powf(acc, 1.0 / p)
    }

    /// Norm of the field; `H10` requires a Dirichlet field.
    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        let g = &self.grid;
        Ok(match kind {
            NormKind::L2 => {
                let mut acc = 0.0;
                for (w, v) in g.volume_weights().iter().zip(&self.values) {
                    acc += w * v * v;
                }
                math::sqrt(acc)
            }
            NormKind::L3 => {
                let mut acc = 0.0;
                for (w, v) in g.volume_weights().iter().zip(&self.values) {
                    let a = math::abs(*v);
                    acc += w * a * a * a;
                }
                math::cbrt(acc)
            }
            NormKind::L6 => {
                let mut acc = 0.0;
                for (w, v) in g.volume_weights().iter().zip(&self.values) {
                    let s = v * v;
                    acc += w * s * s * s;
                }
                math::sqrt(math::cbrt(acc))
            }
            NormKind::LInf => {
                self.values.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)))
            }
            NormKind::H10 => {
                if self.space != Space::Dirichlet {
                    return Err(Error::SpaceMismatch {
                        expected: Space::Dirichlet.name(),
                        got: self.space.name(),
                    });
                }
                math::sqrt(g.grad_sq(&self.values))
            }
            NormKind::H1 => {
                let mean = self.mean();
                math::sqrt(g.grad_sq(&self.values) + mean * mean)
            }
        })
    }

    /// Pointwise map preserving the space (the caller must keep Dirichlet
    /// traces at zero; `f(0) = 0` suffices).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self.values.iter().map(|v| f(*v)).collect();
        ScalarField { grid: self.grid.clone(), space: self.space, values }
    }

    /// `self + c * other`; both fields must share grid and space.
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Result<ScalarField> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        if self.space != other.space {
            return Err(Error::SpaceMismatch {
                expected: self.space.name(),
                got: other.space.name(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(ScalarField { grid: self.grid.clone(), space: self.space, values })
    }

    /// `c * self`.
    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// The field reflected across the midplane of `axis` (values permuted,
    /// space preserved).
    pub fn mirrored(&self, axis: usize) -> ScalarField {
        let g = &self.grid;
        let n = g.n();
        let values = (0..g.node_count())
            .map(|i| {
                let mut c = g.coords(i);
                c[axis] = n[axis] - 1 - c[axis];
                self.values[g.index(c)]
            })
            .collect();
        ScalarField { grid: self.grid.clone(), space: self.space, values }
    }
}

/// One value per boundary node (Neumann data, traces).
///
/// Values align with `Grid::boundary_nodes()`.  A node shared by several
/// faces carries a single value; the canonical way to build data from
/// per-face functions is [`BoundaryField::from_face_fns`], which stores the
/// surface-weight average at such nodes so that face-wise fluxes are
/// preserved exactly.
#[derive(Clone, Debug)]
pub struct BoundaryField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl BoundaryField {
    /// Constant data on the whole boundary.
    pub fn constant(grid: &Arc<Grid>, value: f64) -> BoundaryField {
        BoundaryField { grid: grid.clone(), values: vec![value; grid.boundary_nodes().len()] }
    }

    /// Sample a globally defined function at boundary nodes.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut([f64; 3]) -> f64) -> BoundaryField {
        let values = grid.boundary_nodes().iter().map(|&b| f(grid.position(b))).collect();
        BoundaryField { grid: grid.clone(), values }
    }

    /// Build data from a per-face flux function `g(axis, side, position)`.
    ///
    /// At edge and corner nodes the stored value is the surface-weight
    /// average of the incident faces' fluxes.  With this choice the ghost
    /// elimination at such a node reproduces the per-face fluxes exactly in
    /// the weighted system, and the total flux equals the sum of face-wise
    /// trapezoidal quadratures.
    pub fn from_face_fns(
        grid: &Arc<Grid>,
        mut g: impl FnMut(usize, crate::grid::Side, [f64; 3]) -> f64,
    ) -> BoundaryField {
        let values = grid
            .boundary_nodes()
            .iter()
            .map(|&b| {
                let c = grid.coords(b);
                let pos = grid.position(b);
                let mut wsum = 0.0;
                let mut acc = 0.0;
                for (axis, side) in grid.faces_of(&c) {
                    let w = grid.face_weight(&c, axis);
                    wsum += w;
                    acc += w * g(axis, side, pos);
                }
                acc / wsum
            })
            .collect();
        BoundaryField { grid: grid.clone(), values }
    }

    /// Wrap explicit per-slot values.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<BoundaryField> {
        if values.len() != grid.boundary_nodes().len() {
            return Err(Error::BadParameter("value vector length != boundary node count"));
        }
        Ok(BoundaryField { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total flux `A = integral of the data over the boundary` under the
    /// surface quadrature.
    pub fn total_flux(&self) -> f64 {
        self.grid
            .surface_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Surface `L^2` norm.
    pub fn l2_norm(&self) -> f64 {
        let acc: f64 = self
            .grid
            .surface_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v * v)
            .sum();
        math::sqrt(acc)
    }

    /// Discrete fractional trace norm
    /// `(||a||_{L2}^2 + sum_{x != y} |a(x)-a(y)|^2 / |x-y|^dim w_x w_y)^(1/2)`,
    /// with the double sum over ordered pairs of boundary nodes and
    /// Euclidean distances in the ambient box.  Cost is quadratic in the
    /// boundary node count.
    pub fn h_half_norm(&self) -> f64 {
        let g = &self.grid;
        let nodes = g.boundary_nodes();
        let nb = nodes.len();
        let dim = g.dim();
        let mut positions = Vec::with_capacity(nb);
        for &b in nodes {
            positions.push(g.position(b));
        }
        let mut acc = self.l2_norm();
        acc = acc * acc;
        for i in 0..nb {
            let (pi, vi, wi) = (positions[i], self.values[i], g.surface_weight(i));
            for j in (i + 1)..nb {
                let pj = positions[j];
                let mut d2 = 0.0;
                for k in 0..dim {
                    d2 += math::sq(pi[k] - pj[k]);
                }
                let dist_pow = match dim {
                    2 => d2,
                    _ => d2 * math::sqrt(d2),
                };
                let dv = vi - self.values[j];
                // Both ordered pairs (i, j) and (j, i).
                acc += 2.0 * dv * dv / dist_pow * wi * g.surface_weight(j);
            }
        }
        math::sqrt(acc)
    }

    /// `c * self`.
    pub fn scale(&self, c: f64) -> BoundaryField {
        BoundaryField { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn unit_cube(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(3, &[n, n, n], &[1.0, 1.0, 1.0]).unwrap())
    }

    #[test]
    fn dirichlet_fields_have_exact_zero_trace() {
        let g = unit_cube(5);
        let f = ScalarField::from_fn(&g, Space::Dirichlet, |_| 1.0);
        for &b in g.boundary_nodes() {
            assert_eq!(f.values()[b], 0.0);
        }
        // from_values rejects a nonzero trace outright.
        let bad = vec![1.0; g.node_count()];
        assert!(ScalarField::from_values(&g, Space::Dirichlet, bad).is_err());
    }

    #[test]
    fn h10_norm_of_neumann_field_is_an_error() {
        let g = unit_cube(5);
        let f = ScalarField::from_fn(&g, Space::Neumann, |p| p[0]);
        assert!(matches!(f.norm(NormKind::H10), Err(Error::SpaceMismatch { .. })));
        assert!(f.norm(NormKind::H1).is_ok());
    }

    #[test]
    fn lp_norms_of_a_constant_match_closed_forms() {
        let g = unit_cube(6);
        let f = ScalarField::from_fn(&g, Space::Neumann, |_| -2.0);
        // |O| = 1, so every L^p norm of the constant 2 is 2.
        assert!((f.norm(NormKind::L2).unwrap() - 2.0).abs() < 1e-12);
        assert!((f.norm(NormKind::L3).unwrap() - 2.0).abs() < 1e-12);
        assert!((f.norm(NormKind::L6).unwrap() - 2.0).abs() < 1e-12);
        assert!((f.norm(NormKind::LInf).unwrap() - 2.0).abs() < 1e-15);
        assert!((f.lp_norm(1.2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn h1_norm_of_constant_is_its_mean() {
        let g = unit_cube(5);
        let f = ScalarField::from_fn(&g, Space::Neumann, |_| 3.0);
        assert!((f.norm(NormKind::H1).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn face_indicator_flux_is_exact() {
        use crate::grid::Side;
        let g = unit_cube(9);
        // Unit flux through the upper x_0 face only.
        let alpha = BoundaryField::from_face_fns(&g, |axis, side, _| {
            if axis == 0 && side == Side::Upper {
                1.0
            } else {
                0.0
            }
        });
        assert!((alpha.total_flux() - 1.0).abs() < 1e-13);
        // Opposite-face dipole has exactly zero net flux.
        let dipole = BoundaryField::from_face_fns(&g, |axis, side, _| match (axis, side) {
            (0, Side::Upper) => 1.0,
            (0, Side::Lower) => -1.0,
            _ => 0.0,
        });
        assert!(dipole.total_flux().abs() < 1e-13);
    }

    #[test]
    fn constant_boundary_flux_matches_area() {
        let g = unit_cube(7);
        let alpha = BoundaryField::constant(&g, 0.5);
        assert!((alpha.total_flux() - 3.0).abs() < 1e-12);
        assert!((alpha.l2_norm() - 0.5 * math::sqrt(6.0)).abs() < 1e-12);
    }

    #[test]
    fn h_half_norm_is_l2_for_constants_and_scales_linearly() {
        let g = unit_cube(5);
        let a = BoundaryField::constant(&g, 2.0);
        // No variation: the double sum vanishes.
        assert!((a.h_half_norm() - a.l2_norm()).abs() < 1e-12);
        let b = BoundaryField::from_fn(&g, |p| math::cos(PI * p[0]) + p[1]);
        let n1 = b.h_half_norm();
        let n3 = b.scale(-3.0).h_half_norm();
        assert!((n3 - 3.0 * n1).abs() < 1e-10 * n1.max(1.0));
    }
}
