//! Uniform tensor grid on an axis-aligned box, with the lumped quadrature
//! and discrete-gradient conventions used by every operator in this crate.
//!
//! Conventions (normative for all modules and for any external re-check):
//!
//! * Nodes along axis `k` sit at `x = i * h_k`, `i = 0..n_k-1`, with
//!   `h_k = extent_k / (n_k - 1)`; boundary nodes are included.
//! * Node order is lexicographic in `(i_0, i_1, i_2)` with `i_0` most
//!   significant: `index = (i_0 * n_1 + i_1) * n_2 + i_2`.
//! * Volume quadrature is the tensor trapezoidal rule: the 1-D weight is
//!   `h_k/2` at the two end nodes and `h_k` inside, and a node's volume
//!   weight is the product over axes.  Weights sum exactly to `|O|`.
//! * Surface quadrature on a face is the same rule in the face's axes; a
//!   node shared by several faces carries the *sum* of its per-face
//!   weights, so surface weights sum exactly to `|dO|`.
//! * The discrete gradient lives on edges: for the edge from node `a` to
//!   its axis-`k` successor `b`, the directional derivative is the forward
//!   difference `(f_b - f_a)/h_k`, integrated with weight
//!   `h_k * prod_{j != k} w_j(c_j)` (the perpendicular trapezoidal weights
//!   of the edge's shared coordinates).  `||grad f||_2^2` is the sum of the
//!   weighted squares over all edges; equivalently `f' L f` for the
//!   ghost-node Laplacian assembled from the same edge coefficients.

use crate::error::Error;
use crate::math;
use crate::Result;
use alloc::vec;
use alloc::vec::Vec;

/// Maximum spatial dimension the grid supports.
pub const MAX_DIM: usize = 3;

/// Which side of an axis a boundary face lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Coordinate 0.
    Lower,
    /// Coordinate `extent`.
    Upper,
}

/// Uniform tensor grid over `[0, extent_0] x ... x [0, extent_{dim-1}]`.
///
/// Trailing axes beyond `dim` are collapsed to a single node with unit
/// 1-D weight so all index arithmetic can stay three-dimensional.
#[derive(Debug)]
pub struct Grid {
    dim: usize,
    n: [usize; MAX_DIM],
    extent: [f64; MAX_DIM],
    h: [f64; MAX_DIM],
    /// 1-D trapezoidal weights per axis (length `n[k]`; `[1.0]` for
    /// collapsed axes).
    w1d: [Vec<f64>; MAX_DIM],
    /// Tensor-product volume weight per node.
    volume_w: Vec<f64>,
    /// Node indices on the boundary, ascending.
    boundary_nodes: Vec<usize>,
    /// Total surface weight per boundary slot (aligned with
    /// `boundary_nodes`).
    surface_w: Vec<f64>,
    /// node index -> boundary slot, `usize::MAX` for interior nodes.
    boundary_slot: Vec<usize>,
    /// Diagonal of the pure-Neumann stiffness matrix (sum of incident edge
    /// coefficients); cached because every Jacobi preconditioner needs it.
    lap_diag: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.extent == other.extent
    }
}

impl Grid {
    /// Build a grid with `n[k]` nodes (boundary included) on each of the
    /// first `dim` axes.  Requires `dim` in {2, 3}, at least 3 nodes and a
    /// positive extent per axis.
    pub fn new(dim: usize, n: &[usize], extent: &[f64]) -> Result<Grid> {
        if dim < 2 || dim > MAX_DIM {
            return Err(Error::DimUnsupported(dim));
        }
        if n.len() != dim || extent.len() != dim {
            return Err(Error::BadParameter("n/extent length must equal dim"));
        }
        let mut nn = [1usize; MAX_DIM];
        let mut ee = [1.0f64; MAX_DIM];
        let mut hh = [0.0f64; MAX_DIM];
        for k in 0..dim {
            if n[k] < 3 {
                return Err(Error::GridTooSmall { axis: k, n: n[k] });
            }
            if !(extent[k] > 0.0) {
                return Err(Error::NonpositiveExtent { axis: k });
            }
            nn[k] = n[k];
            ee[k] = extent[k];
            hh[k] = extent[k] / (n[k] - 1) as f64;
        }

        let w1d = core::array::from_fn(|k| {
            if k < dim {
                let (nk, hk) = (nn[k], hh[k]);
                (0..nk)
                    .map(|i| if i == 0 || i == nk - 1 { 0.5 * hk } else { hk })
                    .collect()
            } else {
                vec![1.0]
            }
        });

        let mut grid = Grid {
            dim,
            n: nn,
            extent: ee,
            h: hh,
            w1d,
            volume_w: Vec::new(),
            boundary_nodes: Vec::new(),
            surface_w: Vec::new(),
            boundary_slot: Vec::new(),
            lap_diag: Vec::new(),
        };
        let count = grid.node_count();

        grid.volume_w = (0..count)
            .map(|i| {
                let c = grid.coords(i);
                (0..MAX_DIM).map(|k| grid.w1d[k][c[k]]).product()
            })
            .collect();

        grid.boundary_slot = vec![usize::MAX; count];
        for i in 0..count {
            if grid.on_boundary(i) {
                grid.boundary_slot[i] = grid.boundary_nodes.len();
                grid.boundary_nodes.push(i);
                let c = grid.coords(i);
                let mut w = 0.0;
                for k in 0..dim {
                    if c[k] == 0 || c[k] == nn[k] - 1 {
                        w += grid.face_weight(&c, k);
                    }
                }
                grid.surface_w.push(w);
            }
        }

        let mut diag = vec![0.0f64; count];
        grid.for_each_edge(|a, b, coef| {
            diag[a] += coef;
            diag[b] += coef;
        });
        grid.lap_diag = diag;

        Ok(grid)
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis (collapsed axes report 1).
    pub fn n(&self) -> [usize; MAX_DIM] {
        self.n
    }

    /// Box side lengths.
    pub fn extent(&self) -> [f64; MAX_DIM] {
        self.extent
    }

    /// Grid spacing per axis.
    pub fn h(&self) -> [f64; MAX_DIM] {
        self.h
    }

    /// Total number of nodes.
    pub fn node_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// Flat index of the node with per-axis indices `c`.
    #[inline]
    pub fn index(&self, c: [usize; MAX_DIM]) -> usize {
        debug_assert!(c[0] < self.n[0] && c[1] < self.n[1] && c[2] < self.n[2]);
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    /// Per-axis indices of flat node `i`.
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; MAX_DIM] {
        let c2 = i % self.n[2];
        let r = i / self.n[2];
        [r / self.n[1], r % self.n[1], c2]
    }

    /// Physical position of flat node `i`.
    pub fn position(&self, i: usize) -> [f64; MAX_DIM] {
        let c = self.coords(i);
        core::array::from_fn(|k| c[k] as f64 * self.h[k])
    }

    /// Volume quadrature weight of node `i`.
    #[inline]
    pub fn volume_weight(&self, i: usize) -> f64 {
        self.volume_w[i]
    }

    /// All volume weights, node-ordered.
    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_w
    }

    /// Box volume `|O|` (weights sum to this exactly, up to round-off).
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.extent[k]).product()
    }

    /// Boundary measure `|dO|`.
    pub fn boundary_area(&self) -> f64 {
        let vol = self.volume();
        (0..self.dim).map(|k| 2.0 * vol / self.extent[k]).sum()
    }

    /// True if node `i` lies on the boundary of the box.
    #[inline]
    pub fn on_boundary(&self, i: usize) -> bool {
        let c = self.coords(i);
        (0..self.dim).any(|k| c[k] == 0 || c[k] == self.n[k] - 1)
    }

    /// Boundary node indices, ascending; `BoundaryField` values align with
    /// this ordering.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Slot of node `i` in `boundary_nodes`, if it is a boundary node.
    #[inline]
    pub fn boundary_slot(&self, i: usize) -> Option<usize> {
        match self.boundary_slot[i] {
            usize::MAX => None,
            s => Some(s),
        }
    }

    /// Total surface weight of boundary slot `s` (summed over the faces the
    /// node belongs to).
    #[inline]
    pub fn surface_weight(&self, s: usize) -> f64 {
        self.surface_w[s]
    }

    /// Surface weights aligned with `boundary_nodes`.
    pub fn surface_weights(&self) -> &[f64] {
        &self.surface_w
    }

    /// Trapezoidal weight of the node with per-axis indices `c` within the
    /// face normal to `axis` (the product of 1-D weights over the other
    /// axes).
    pub fn face_weight(&self, c: &[usize; MAX_DIM], axis: usize) -> f64 {
        (0..MAX_DIM).filter(|&j| j != axis).map(|j| self.w1d[j][c[j]]).product()
    }

    /// Faces the node with per-axis indices `c` lies on.
    pub fn faces_of(&self, c: &[usize; MAX_DIM]) -> impl Iterator<Item = (usize, Side)> + '_ {
        let c = *c;
        (0..self.dim).filter_map(move |k| {
            if c[k] == 0 {
                Some((k, Side::Lower))
            } else if c[k] == self.n[k] - 1 {
                Some((k, Side::Upper))
            } else {
                None
            }
        })
    }

    /// Visit every grid edge once as `(node, axis-successor, coefficient)`.
    ///
    /// The coefficient is `perp_weight / h_k`, so `sum coef * (f_b - f_a)^2`
    /// over all edges is the discrete `||grad f||_2^2`, and scattering
    /// `coef * (f_a - f_b)` into both rows assembles the weighted
    /// (ghost-node) Neumann stiffness matrix.
    pub fn for_each_edge<F: FnMut(usize, usize, f64)>(&self, mut f: F) {
        for k in 0..self.dim {
            let stride = match k {
                0 => self.n[1] * self.n[2],
                1 => self.n[2],
                _ => 1,
            };
            let inv_h = 1.0 / self.h[k];
            for i in 0..self.node_count() {
                let c = self.coords(i);
                if c[k] + 1 < self.n[k] {
                    let coef = self.face_weight(&c, k) * inv_h;
                    f(i, i + stride, coef);
                }
            }
        }
    }

    /// Diagonal of the pure-Neumann stiffness matrix.
    pub fn laplacian_diagonal(&self) -> &[f64] {
        &self.lap_diag
    }

    /// Quadrature of a nodal sample vector.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.node_count());
        self.volume_w.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted mean `integral(f) / |O|`.
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.integrate(values) / self.volume()
    }

    /// Discrete `||grad f||_2^2` in the edge convention documented above.
    pub fn grad_sq(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.node_count());
        let mut acc = 0.0;
        self.for_each_edge(|a, b, coef| {
            acc += coef * math::sq(values[b] - values[a]);
        });
        acc
    }

    /// Discrete `integral(grad f . grad g)` (polarisation of [`Self::grad_sq`]).
    pub fn grad_dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.node_count());
        debug_assert_eq!(g.len(), self.node_count());
        let mut acc = 0.0;
        self.for_each_edge(|a, b, coef| {
            acc += coef * (f[b] - f[a]) * (g[b] - g[a]);
        });
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube(n: usize) -> Grid {
        Grid::new(3, &[n, n, n], &[1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(Grid::new(1, &[5], &[1.0]), Err(Error::DimUnsupported(1))));
        assert!(matches!(
            Grid::new(2, &[2, 5], &[1.0, 1.0]),
            Err(Error::GridTooSmall { axis: 0, n: 2 })
        ));
        assert!(matches!(
            Grid::new(2, &[5, 5], &[1.0, -1.0]),
            Err(Error::NonpositiveExtent { axis: 1 })
        ));
    }

    #[test]
    fn indexing_round_trips_lexicographically() {
        let g = Grid::new(3, &[4, 3, 5], &[1.0, 1.0, 1.0]).unwrap();
        // Last axis fastest: node (1, 2, 3) => (1*3 + 2)*5 + 3 = 28.
        assert_eq!(g.index([1, 2, 3]), 28);
        for i in 0..g.node_count() {
            assert_eq!(g.index(g.coords(i)), i);
        }
    }

    #[test]
    fn volume_weights_sum_to_volume() {
        let g = Grid::new(2, &[9, 5], &[2.0, 1.0]).unwrap();
        let total: f64 = g.volume_weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-12, "total {total}");
        let g3 = unit_cube(7);
        let total3: f64 = g3.volume_weights().iter().sum();
        assert!((total3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surface_weights_sum_to_boundary_area() {
        // 2-D rectangle: perimeter 2*(2+1) = 6.
        let g = Grid::new(2, &[9, 5], &[2.0, 1.0]).unwrap();
        let total: f64 = g.surface_weights().iter().sum();
        assert!((total - 6.0).abs() < 1e-12, "total {total}");
        // 3-D unit cube: area 6.
        let g3 = unit_cube(6);
        let total3: f64 = g3.surface_weights().iter().sum();
        assert!((total3 - 6.0).abs() < 1e-12, "total {total3}");
    }

    #[test]
    fn every_node_is_interior_xor_boundary() {
        let g = unit_cube(5);
        let mut boundary = 0usize;
        for i in 0..g.node_count() {
            let on = g.on_boundary(i);
            assert_eq!(on, g.boundary_slot(i).is_some());
            if on {
                boundary += 1;
            }
        }
        // 5^3 - 3^3 interior nodes.
        assert_eq!(boundary, 125 - 27);
        assert_eq!(g.boundary_nodes().len(), boundary);
    }

    #[test]
    fn corner_face_weights_match_hand_computation() {
        // Unit square, h = 1/4: a corner node sits on two faces, each
        // contributing the 1-D end weight h/2 = 1/8; total 1/4.
        let g = Grid::new(2, &[5, 5], &[1.0, 1.0]).unwrap();
        let corner = g.index([0, 0, 0]);
        let s = g.boundary_slot(corner).unwrap();
        assert!((g.surface_weight(s) - 0.25).abs() < 1e-15);
        // A face-interior boundary node carries the full h = 1/4.
        let mid = g.index([0, 2, 0]);
        let s = g.boundary_slot(mid).unwrap();
        assert!((g.surface_weight(s) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn edge_coefficients_reproduce_known_stiffness_rows() {
        // Unit square, h = 1/2 (3x3 nodes).  The centre node has four
        // incident edges, each with perpendicular weight h and coefficient
        // h / h = 1, so the stiffness diagonal there is 4.
        let g = Grid::new(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let centre = g.index([1, 1, 0]);
        assert!((g.laplacian_diagonal()[centre] - 4.0).abs() < 1e-15);
        // Corner node: two incident edges with perpendicular end-weight
        // h/2, coefficient 1/2 each => diagonal 1.
        let corner = g.index([0, 0, 0]);
        assert!((g.laplacian_diagonal()[corner] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn integrate_is_exact_for_constants_and_linear() {
        let g = unit_cube(5);
        let ones = vec![1.0; g.node_count()];
        assert!((g.integrate(&ones) - 1.0).abs() < 1e-14);
        // Trapezoid integrates linears exactly: the integral of x_0 is 1/2.
        let lin: Vec<f64> = (0..g.node_count()).map(|i| g.position(i)[0]).collect();
        assert!((g.integrate(&lin) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn grad_sq_is_exact_for_linear_fields() {
        let g = unit_cube(6);
        let lin: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let p = g.position(i);
                2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2]
            })
            .collect();
        // |grad| is constant: 4 + 9 + 0.25 over the unit cube.
        assert!((g.grad_sq(&lin) - 13.25).abs() < 1e-12);
    }
}
