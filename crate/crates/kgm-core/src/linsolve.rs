//! Matrix-free Krylov solvers: Jacobi-preconditioned CG with optional
//! handling of the constants direction, and a preconditioned MINRES for
//! symmetric indefinite systems.
//!
//! The constants direction needs care twice in this crate: the pure-Neumann
//! stiffness matrix is exactly singular on it (zero-flux potential solve),
//! and the screened operator is nearly singular on it when the screening
//! coefficient is small (scaling sweeps drive it there on purpose).  The
//! first case projects it out; the second deflates it with a one-vector
//! coarse correction, which restores a mesh-like condition number.

use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// Matrix-free symmetric operator.
pub trait LinOp {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64])> LinOp for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.1)(x, y)
    }
}

/// How CG treats the constants direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantMode {
    /// Operator is definite; no special handling.
    Plain,
    /// Operator kills constants exactly (`A 1 = 0`): keep iterates and
    /// preconditioned residuals mean-free and return the mean-free solution
    /// of the compatible system.
    ProjectOut,
    /// Operator is definite but may be nearly singular on constants
    /// (`A 1 = diag-weight vector`): solve the one-dimensional coarse
    /// problem exactly and run CG A-orthogonally to `1`.
    Deflate,
}

/// Convergence report of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Stopping rule: relative residual target plus iteration cap.
#[derive(Clone, Copy, Debug)]
pub struct IterSettings {
    pub tol_rel: f64,
    pub max_iter: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

fn subtract_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`.
///
/// `diag` is the operator diagonal (must be positive).  The result starts
/// from the zero vector; callers that have a good initial guess should
/// solve for the correction instead.
pub fn pcg(
    op: &impl LinOp,
    b: &[f64],
    diag: &[f64],
    mode: ConstantMode,
    settings: IterSettings,
) -> (Vec<f64>, SolveStats) {
    let n = op.dim();
    debug_assert_eq!(b.len(), n);
    debug_assert_eq!(diag.len(), n);

    let mut rhs = b.to_vec();
    // A 1 and 1'A1 for the deflation variant.
    let mut a_one = Vec::new();
    let mut one_a_one = 0.0;
    let mut x = vec![0.0; n];

    match mode {
        ConstantMode::Plain => {}
        ConstantMode::ProjectOut => {
            // The system must be compatible; remove the round-off component
            // along the kernel.
            subtract_mean(&mut rhs);
        }
        ConstantMode::Deflate => {
            a_one = vec![0.0; n];
            op.apply(&vec![1.0; n], &mut a_one);
            one_a_one = a_one.iter().sum();
            debug_assert!(one_a_one > 0.0);
            // Coarse solve on span{1}; the remaining residual is
            // orthogonal to 1.
            let c = rhs.iter().sum::<f64>() / one_a_one;
            for xi in x.iter_mut() {
                *xi = c;
            }
            for (ri, ai) in rhs.iter_mut().zip(&a_one) {
                *ri -= c * ai;
            }
        }
    }

    let b_norm = norm2(&rhs).max(if mode == ConstantMode::Deflate { norm2(b) } else { 0.0 });
    if b_norm == 0.0 {
        return (x, SolveStats { iterations: 0, rel_residual: 0.0, converged: true });
    }

    let mut r = rhs;
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut rz_old = 0.0;
    let mut iterations = 0;
    let mut rel = norm2(&r) / b_norm;

    for it in 0..settings.max_iter {
        if rel <= settings.tol_rel {
            break;
        }
        iterations = it + 1;
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        match mode {
            ConstantMode::Plain => {}
            ConstantMode::ProjectOut => subtract_mean(&mut z),
            ConstantMode::Deflate => {
                // Keep search directions A-orthogonal to 1:
                // z <- z - 1 * (1'A z) / (1'A 1), and 1'A z = (A1)'z.
                let c = dot(&a_one, &z) / one_a_one;
                for zi in z.iter_mut() {
                    *zi -= c;
                }
            }
        }
        let rz = dot(&r, &z);
        if it == 0 {
            p.copy_from_slice(&z);
        } else {
            let beta = rz / rz_old;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        rz_old = rz;
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // Loss of definiteness (should not happen for these systems);
            // bail with what we have.
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm2(&r) / b_norm;
    }

    if mode == ConstantMode::ProjectOut {
        subtract_mean(&mut x);
    }
    (x, SolveStats { iterations, rel_residual: rel, converged: rel <= settings.tol_rel })
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) `A x = b`
/// with a symmetric positive definite preconditioner applied through
/// `prec(r) -> M^{-1} r`.
///
/// Used for the Newton systems of the critical-point search, where the
/// Hessian is indefinite at saddle points; the preconditioner there is the
/// Dirichlet stiffness matrix, so the iteration runs in the same metric as
/// the gradient descent.
pub fn minres(
    op: &impl LinOp,
    b: &[f64],
    mut prec: impl FnMut(&[f64]) -> Vec<f64>,
    settings: IterSettings,
) -> (Vec<f64>, SolveStats) {
    let n = op.dim();
    let mut x = vec![0.0; n];

    // Lanczos vectors; residual r0 = b since x0 = 0.
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    let mut z = prec(&v);
    let gamma_sq = dot(&v, &z);
    if gamma_sq <= 0.0 {
        return (x, SolveStats { iterations: 0, rel_residual: 0.0, converged: true });
    }
    let mut gamma = math::sqrt(gamma_sq);
    let phi0 = gamma;

    let (mut c, mut s) = (1.0f64, 0.0f64);
    let (mut c_old, mut s_old) = (1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w_old = vec![0.0; n];
    let mut phi = gamma;
    let mut iterations = 0;
    let mut converged = false;

    for v_i in v.iter_mut() {
        *v_i /= gamma;
    }
    for z_i in z.iter_mut() {
        *z_i /= gamma;
    }

    for it in 0..settings.max_iter {
        iterations = it + 1;
        // Lanczos step with the preconditioned operator.
        let mut av = vec![0.0; n];
        op.apply(&z, &mut av);
        let alpha = dot(&av, &z);
        for i in 0..n {
            av[i] -= alpha * v[i] + gamma * v_prev[i];
        }
        let z_next = prec(&av);
        let gamma_next_sq = dot(&av, &z_next).max(0.0);
        let gamma_next = math::sqrt(gamma_next_sq);

        // Two previous Givens rotations, then a new one.
        let delta = c * alpha - c_old * s * gamma;
        let rho1 = math::sqrt(delta * delta + gamma_next * gamma_next);
        let rho2 = s * alpha + c_old * c * gamma;
        let rho3 = s_old * gamma;
        if rho1 == 0.0 {
            break;
        }
        let c_next = delta / rho1;
        let s_next = gamma_next / rho1;

        // Update the solution basis.  The transformed right-hand side
        // component flips sign under each rotation with this convention,
        // hence the negation; |phi| is the preconditioned residual norm.
        let mut w_new = vec![0.0; n];
        for i in 0..n {
            w_new[i] = (z[i] - rho2 * w[i] - rho3 * w_old[i]) / rho1;
            x[i] += c_next * phi * w_new[i];
        }
        phi = -phi * s_next;

        w_old = core::mem::replace(&mut w, w_new);
        c_old = c;
        s_old = s;
        c = c_next;
        s = s_next;

        if math::abs(phi) / phi0 <= settings.tol_rel {
            converged = true;
            break;
        }
        if gamma_next == 0.0 {
            converged = true;
            break;
        }
        v_prev = core::mem::replace(&mut v, av);
        for v_i in v.iter_mut() {
            *v_i /= gamma_next;
        }
        z = z_next;
        for z_i in z.iter_mut() {
            *z_i /= gamma_next;
        }
        gamma = gamma_next;
    }

    (x, SolveStats { iterations, rel_residual: math::abs(phi) / phi0, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);

    impl LinOp for Dense {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (yi, row) in y.iter_mut().zip(&self.0) {
                *yi = dot(row, x);
            }
        }
    }

    fn settings() -> IterSettings {
        IterSettings { tol_rel: 1e-12, max_iter: 500 }
    }

    #[test]
    fn pcg_solves_a_small_spd_system() {
        // Diagonally dominant symmetric matrix.
        let a = Dense(vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 5.0],
        ]);
        let b = vec![1.0, -2.0, 3.0];
        let diag = vec![4.0, 3.0, 5.0];
        let (x, stats) = pcg(&a, &b, &diag, ConstantMode::Plain, settings());
        assert!(stats.converged);
        let mut ax = vec![0.0; 3];
        a.apply(&x, &mut ax);
        for (ai, bi) in ax.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn projected_pcg_solves_a_singular_compatible_system() {
        // Graph Laplacian of a path: kernel = constants.
        let a = Dense(vec![
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ]);
        let b = vec![1.0, 0.0, -1.0]; // compatible: sums to zero
        let diag = vec![1.0, 2.0, 1.0];
        let (x, stats) = pcg(&a, &b, &diag, ConstantMode::ProjectOut, settings());
        assert!(stats.converged);
        // Mean-free representative.
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
        let mut ax = vec![0.0; 3];
        a.apply(&x, &mut ax);
        for (ai, bi) in ax.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn deflated_pcg_handles_a_nearly_singular_constant_mode() {
        // Laplacian plus a tiny mass term: smallest eigenvalue ~ 3e-12 on
        // constants, which plain CG at this tolerance cannot resolve.
        let eps = 1e-12;
        let a = Dense(vec![
            vec![1.0 + eps, -1.0, 0.0],
            vec![-1.0, 2.0 + eps, -1.0],
            vec![0.0, -1.0, 1.0 + eps],
        ]);
        let sol = vec![1.0e6, 2.0e6, 3.0e6];
        let mut b = vec![0.0; 3];
        a.apply(&sol, &mut b);
        let diag = vec![1.0 + eps, 2.0 + eps, 1.0 + eps];
        let (x, stats) = pcg(&a, &b, &diag, ConstantMode::Deflate, settings());
        assert!(stats.converged, "stats {stats:?}");
        for (xi, si) in x.iter().zip(&sol) {
            assert!((xi - si).abs() < 1e-4 * si.abs(), "{xi} vs {si}");
        }
    }

    #[test]
    fn minres_solves_an_indefinite_system() {
        let a = Dense(vec![
            vec![2.0, 0.0, 1.0],
            vec![0.0, -3.0, 0.0],
            vec![1.0, 0.0, 1.0],
        ]);
        let b = vec![1.0, 1.0, 1.0];
        let (x, stats) = minres(&a, &b, |r| r.to_vec(), settings());
        assert!(stats.converged, "stats {stats:?}");
        let mut ax = vec![0.0; 3];
        a.apply(&x, &mut ax);
        for (ai, bi) in ax.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-8, "{ai} vs {bi}");
        }
    }
}
