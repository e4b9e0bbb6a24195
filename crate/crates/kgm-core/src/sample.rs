//! Deterministic generators for probe fields, coupling coefficients, and
//! boundary data.
//!
//! Everything here is a pure function of the grid and an explicit RNG, so
//! experiments and tests can reproduce fields exactly from a seed.

use crate::field::{BoundaryField, ScalarField, Space};
use crate::grid::Grid;
use crate::math;
use crate::rng::Prng;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// Iterate over multi-indices `k` with `0 <= k_j < modes` on active axes.
fn for_each_mode(dim: usize, modes: usize, mut f: impl FnMut([usize; 3])) {
    let m = |axis: usize| if axis < dim { modes } else { 1 };
    for k0 in 0..m(0) {
        for k1 in 0..m(1) {
            for k2 in 0..m(2) {
                f([k0, k1, k2]);
            }
        }
    }
}

/// Random smooth zero-trace field: product-sine modes with independent
/// normal coefficients damped by `1/(1+|k|^2)`.
pub fn random_dirichlet(grid: &Arc<Grid>, rng: &mut Prng, modes: usize) -> ScalarField {
    let dim = grid.dim();
    let extent = grid.extent();
    let mut terms: Vec<([usize; 3], f64)> = Vec::new();
    for_each_mode(dim, modes, |k| {
        let ksq: usize = k[..dim].iter().map(|&kj| (kj + 1) * (kj + 1)).sum();
        terms.push((k, rng.normal() / (1.0 + ksq as f64)));
    });
    ScalarField::from_fn(grid, Space::Dirichlet, |p| {
        let mut acc = 0.0;
        for (k, c) in &terms {
            let mut v = *c;
            for j in 0..dim {
                v *= math::sin((k[j] + 1) as f64 * PI * p[j] / extent[j]);
            }
            acc += v;
        }
        acc
    })
}

/// Random smooth unconstrained field: product-cosine modes (constant mode
/// excluded) with damped normal coefficients.
pub fn random_neumann(grid: &Arc<Grid>, rng: &mut Prng, modes: usize) -> ScalarField {
    let dim = grid.dim();
    let extent = grid.extent();
    let mut terms: Vec<([usize; 3], f64)> = Vec::new();
    for_each_mode(dim, modes, |k| {
        let ksq: usize = k[..dim].iter().map(|&kj| kj * kj).sum();
        if ksq == 0 {
            return;
        }
        terms.push((k, rng.normal() / (1.0 + ksq as f64)));
    });
    ScalarField::from_fn(grid, Space::Neumann, |p| {
        let mut acc = 0.0;
        for (k, c) in &terms {
            let mut v = *c;
            for j in 0..dim {
                v *= math::cos(k[j] as f64 * PI * p[j] / extent[j]);
            }
            acc += v;
        }
        acc
    })
}

/// Random boundary data: trace of a random cosine field plus a constant
/// offset, so the net flux is generically nonzero.
pub fn random_boundary(grid: &Arc<Grid>, rng: &mut Prng, modes: usize) -> BoundaryField {
    let smooth = random_neumann(grid, rng, modes);
    let offset = rng.uniform_in(-1.0, 1.0);
    let values = grid
        .boundary_nodes()
        .iter()
        .map(|&b| smooth.values()[b] + offset)
        .collect();
    BoundaryField::from_values(grid, values).expect("values align with boundary nodes")
}

/// Zero-trace probe whose sign changes only across node planes: a squared
/// smooth field times `(x_k - c_k)` factors with each `c_k` at an interior
/// node coordinate.  Taking the absolute value of such a field changes no
/// edge difference in magnitude, so its gradient energy is preserved
/// exactly, not just to discretisation order.
pub fn plane_signed_probe(grid: &Arc<Grid>, rng: &mut Prng, modes: usize) -> ScalarField {
    let dim = grid.dim();
    let n = grid.n();
    let h = grid.h();
    let base = random_dirichlet(grid, rng, modes);

    // A cut at node `c` only produces a genuine sign change if both sides
    // of the plane contain interior nodes, i.e. `2 <= c <= n-3`.
    let eligible: Vec<usize> = (0..dim).filter(|&a| n[a] >= 5).collect();
    let mut cuts: [Option<f64>; 3] = [None, None, None];
    let mut any = false;
    for &axis in &eligible {
        if rng.uniform() < 0.5 {
            let node = 2 + rng.index(n[axis] - 4);
            cuts[axis] = Some(node as f64 * h[axis]);
            any = true;
        }
    }
    if !any && !eligible.is_empty() {
        let axis = eligible[rng.index(eligible.len())];
        let node = 2 + rng.index(n[axis] - 4);
        cuts[axis] = Some(node as f64 * h[axis]);
    }

    let mut out = base.map(|v| v * v);
    let values = out.values_mut();
    for i in 0..grid.node_count() {
        let p = grid.position(i);
        let mut factor = 1.0;
        for axis in 0..dim {
            if let Some(c) = cuts[axis] {
                factor *= p[axis] - c;
            }
        }
        values[i] *= factor;
    }
    out
}

/// Nonnegative zero-trace probe: square of a random smooth field, scaled to
/// unit sup norm.
pub fn nonnegative_probe(grid: &Arc<Grid>, rng: &mut Prng, modes: usize) -> ScalarField {
    let base = random_dirichlet(grid, rng, modes);
    let sq = base.map(|v| v * v);
    let sup = sq.norm(crate::NormKind::LInf).expect("sup norm is unconditional");
    if sup > 0.0 {
        sq.scale(1.0 / sup)
    } else {
        sq
    }
}

/// Compactly supported smooth bump `amp * (1 - (r/radius)^2)^3` around
/// `center`, zero outside the ball.  Useful as a coupling coefficient that
/// vanishes on most of the box.
pub fn bump(grid: &Arc<Grid>, center: [f64; 3], radius: f64, amp: f64) -> ScalarField {
    let dim = grid.dim();
    ScalarField::from_fn(grid, Space::Neumann, |p| {
        let mut r2 = 0.0;
        for j in 0..dim {
            r2 += math::sq(p[j] - center[j]);
        }
        let t = r2 / (radius * radius);
        if t < 1.0 {
            let s = 1.0 - t;
            amp * s * s * s
        } else {
            0.0
        }
    })
}

/// Gaussian profile `amp * exp(-|x - center|^2 / (2 radius^2))`.
pub fn gaussian(grid: &Arc<Grid>, center: [f64; 3], radius: f64, amp: f64) -> ScalarField {
    let dim = grid.dim();
    ScalarField::from_fn(grid, Space::Neumann, |p| {
        let mut r2 = 0.0;
        for j in 0..dim {
            r2 += math::sq(p[j] - center[j]);
        }
        amp * math::exp(-r2 / (2.0 * radius * radius))
    })
}

/// Indicator of the half of the box where `x_axis` lies above the midpoint,
/// scaled by `amp`; nodes exactly on the midplane get `amp / 2`.  A
/// coefficient that vanishes identically on half the domain.
pub fn half_indicator(grid: &Arc<Grid>, axis: usize, amp: f64) -> ScalarField {
    let mid = 0.5 * grid.extent()[axis];
    ScalarField::from_fn(grid, Space::Neumann, |p| {
        if p[axis] > mid {
            amp
        } else if p[axis] < mid {
            0.0
        } else {
            0.5 * amp
        }
    })
}

/// Coupling coefficient supported on two disjoint balls.  The geometry
/// gives the energy landscape well-separated shapes for the matter field to
/// concentrate in.
pub fn two_lump_coupling(
    grid: &Arc<Grid>,
    centers: [[f64; 3]; 2],
    radius: f64,
    amps: [f64; 2],
) -> ScalarField {
    let a = bump(grid, centers[0], radius, amps[0]);
    let b = bump(grid, centers[1], radius, amps[1]);
    a.axpy(1.0, &b).expect("same grid and space")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NormKind;

    fn unit_cube(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(3, &[n, n, n], &[1.0, 1.0, 1.0]).unwrap())
    }

    #[test]
    fn generators_are_deterministic_in_the_seed() {
        let g = unit_cube(7);
        let a = random_dirichlet(&g, &mut Prng::stream(9, 4), 3);
        let b = random_dirichlet(&g, &mut Prng::stream(9, 4), 3);
        assert_eq!(a.values(), b.values());
        let c = random_dirichlet(&g, &mut Prng::stream(9, 5), 3);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn dirichlet_probes_vanish_on_the_boundary() {
        let g = unit_cube(6);
        let mut rng = Prng::new(2);
        for f in [
            random_dirichlet(&g, &mut rng, 3),
            plane_signed_probe(&g, &mut rng, 3),
            nonnegative_probe(&g, &mut rng, 3),
        ] {
            for &b in g.boundary_nodes() {
                assert_eq!(f.values()[b], 0.0);
            }
            assert!(f.norm(NormKind::L2).unwrap() > 0.0);
        }
    }

    #[test]
    fn plane_signed_probe_abs_preserves_gradient_energy_exactly() {
        let g = unit_cube(9);
        for s in 0..20 {
            let mut rng = Prng::stream(11, s);
            let u = plane_signed_probe(&g, &mut rng, 3);
            let au = u.map(|v| crate::math::abs(v));
            let eu = u.norm(NormKind::H10).unwrap();
            let ea = au.norm(NormKind::H10).unwrap();
            assert_eq!(eu.to_bits(), ea.to_bits(), "stream {s}");
            // The probe must actually change sign for the test to mean
            // anything.
            let has_neg = u.values().iter().any(|&v| v < 0.0);
            let has_pos = u.values().iter().any(|&v| v > 0.0);
            assert!(has_neg && has_pos, "stream {s} gives a one-signed probe");
        }
    }

    #[test]
    fn nonnegative_probe_is_nonnegative_with_unit_sup() {
        let g = unit_cube(7);
        let f = nonnegative_probe(&g, &mut Prng::new(5), 3);
        assert!(f.values().iter().all(|&v| v >= 0.0));
        assert!((f.norm(NormKind::LInf).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bump_vanishes_outside_its_ball() {
        let g = unit_cube(9);
        let f = bump(&g, [0.25, 0.25, 0.25], 0.2, 2.0);
        for i in 0..g.node_count() {
            let p = g.position(i);
            let r2: f64 = (0..3).map(|j| crate::math::sq(p[j] - 0.25)).sum();
            if r2 >= 0.04 {
                assert_eq!(f.values()[i], 0.0);
            }
        }
        assert!(f.norm(NormKind::LInf).unwrap() > 0.0);
        // Two disjoint lumps keep disjoint supports.
        let two = two_lump_coupling(
            &g,
            [[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]],
            0.2,
            [1.0, 0.5],
        );
        assert!(two.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gaussian_peaks_at_its_center_and_half_indicator_vanishes_below() {
        let g = unit_cube(9);
        let f = gaussian(&g, [0.5, 0.5, 0.5], 0.2, 3.0);
        let center = g.index([4, 4, 4]);
        assert!((f.values()[center] - 3.0).abs() < 1e-12);
        assert!(f.values().iter().all(|&v| v > 0.0 && v <= 3.0));

        let h = half_indicator(&g, 0, 2.0);
        for i in 0..g.node_count() {
            let x = g.position(i)[0];
            let expect = if x > 0.5 {
                2.0
            } else if x < 0.5 {
                0.0
            } else {
                1.0
            };
            assert_eq!(h.values()[i], expect);
        }
    }

    #[test]
    fn random_boundary_total_flux_is_reproducible() {
        let g = unit_cube(7);
        let a = random_boundary(&g, &mut Prng::stream(3, 0), 2);
        let b = random_boundary(&g, &mut Prng::stream(3, 0), 2);
        assert_eq!(a.total_flux().to_bits(), b.total_flux().to_bits());
    }
}
