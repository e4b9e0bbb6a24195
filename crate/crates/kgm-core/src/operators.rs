//! Discrete operators assembled on a [`Grid`](crate::Grid): stiffness
//! matrices for the two boundary conditions, the screened operator, and the
//! metric matrix of the mean-augmented H1 inner product.
//!
//! All operators act matrix-free on raw value slices in node order.  They
//! are symmetric by construction: the stiffness form is a sum over edges of
//! `c_e (x_a - x_b)(y_a - y_b)`, and the zero-order terms are diagonal.
//! Right-hand sides throughout the crate are dual vectors, i.e. the linear
//! functional `v -> rhs' v` represents an integral against `v`.

use crate::grid::Grid;
use crate::linsolve::LinOp;
use alloc::vec::Vec;

/// `y = L x` for the zero-flux stiffness matrix (natural boundary
/// condition; `L 1 = 0`).
pub fn stiffness_apply(grid: &Grid, x: &[f64], y: &mut [f64]) {
    for v in y.iter_mut() {
        *v = 0.0;
    }
    grid.for_each_edge(|a, b, c| {
        let d = c * (x[a] - x[b]);
        y[a] += d;
        y[b] -= d;
    });
}

/// `y = L0 x` for the stiffness matrix with homogeneous essential boundary
/// condition: boundary entries of `x` are read as zero and boundary rows of
/// `y` are zero.
pub fn dirichlet_stiffness_apply(grid: &Grid, x: &[f64], y: &mut [f64]) {
    let free = |i: usize| grid.boundary_slot(i).is_none();
    for v in y.iter_mut() {
        *v = 0.0;
    }
    grid.for_each_edge(|a, b, c| {
        let xa = if free(a) { x[a] } else { 0.0 };
        let xb = if free(b) { x[b] } else { 0.0 };
        let d = c * (xa - xb);
        if free(a) {
            y[a] += d;
        }
        if free(b) {
            y[b] -= d;
        }
    });
}

/// Zero-flux stiffness matrix as an operator (exactly singular on
/// constants).
pub struct NeumannLaplacian<'g> {
    grid: &'g Grid,
}

impl<'g> NeumannLaplacian<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        Self { grid }
    }

    /// Jacobi diagonal (positive everywhere for a connected grid).
    pub fn diagonal(&self) -> Vec<f64> {
        self.grid.laplacian_diagonal().to_vec()
    }
}

impl LinOp for NeumannLaplacian<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        stiffness_apply(self.grid, x, y);
    }
}

/// Stiffness matrix restricted to the zero-trace subspace.  Boundary rows
/// and columns act as zero, so conjugate-gradient iterates stay in the
/// subspace whenever the right-hand side does.
pub struct DirichletLaplacian<'g> {
    grid: &'g Grid,
    diag: Vec<f64>,
}

impl<'g> DirichletLaplacian<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        let mut diag = grid.laplacian_diagonal().to_vec();
        for &i in grid.boundary_nodes() {
            diag[i] = 1.0;
        }
        Self { grid, diag }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinOp for DirichletLaplacian<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        dirichlet_stiffness_apply(self.grid, x, y);
    }
}

/// `L + diag(w b^2)`: the stiffness matrix shifted by a nonnegative,
/// volume-weighted zero-order coefficient `b^2`.
///
/// Symmetric positive definite whenever `b` is not identically zero, but
/// its smallest eigenvalue shrinks with `∫ b^2`, so solves deflate the
/// constants direction.
pub struct ScreenedOperator<'g> {
    grid: &'g Grid,
    weighted_bsq: Vec<f64>,
    diag: Vec<f64>,
}

impl<'g> ScreenedOperator<'g> {
    /// `bsq` holds the pointwise values of `b^2` in node order.
    pub fn new(grid: &'g Grid, bsq: &[f64]) -> Self {
        debug_assert_eq!(bsq.len(), grid.node_count());
        let w = grid.volume_weights();
        let weighted_bsq: Vec<f64> = w.iter().zip(bsq).map(|(wi, bi)| wi * bi).collect();
        let diag: Vec<f64> = grid
            .laplacian_diagonal()
            .iter()
            .zip(&weighted_bsq)
            .map(|(di, mi)| di + mi)
            .collect();
        Self { grid, weighted_bsq, diag }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `∫ b^2` — the action of the operator on constants, summed.
    pub fn mass(&self) -> f64 {
        self.weighted_bsq.iter().sum()
    }
}

impl LinOp for ScreenedOperator<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        stiffness_apply(self.grid, x, y);
        for i in 0..x.len() {
            y[i] += self.weighted_bsq[i] * x[i];
        }
    }
}

/// Metric matrix of the norm `(|grad f|^2 + fbar^2)^(1/2)` on the zero-flux
/// space: `N = L + w w' / vol^2`, where `fbar` is the volume average.
pub struct MeanAugmentedMetric<'g> {
    grid: &'g Grid,
    diag: Vec<f64>,
}

impl<'g> MeanAugmentedMetric<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        let vol = grid.volume();
        let diag: Vec<f64> = grid
            .laplacian_diagonal()
            .iter()
            .zip(grid.volume_weights())
            .map(|(di, wi)| di + wi * wi / (vol * vol))
            .collect();
        Self { grid, diag }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl LinOp for MeanAugmentedMetric<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        stiffness_apply(self.grid, x, y);
        let w = self.grid.volume_weights();
        let vol = self.grid.volume();
        let xbar = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() / (vol * vol);
        for i in 0..x.len() {
            y[i] += w[i] * xbar;
        }
    }
}
