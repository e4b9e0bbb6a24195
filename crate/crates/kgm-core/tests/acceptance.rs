//! Acceptance gate: one test — hence one pass/fail line — per pinned
//! behavioural guarantee, with hard-coded tolerances.  The checks cover the
//! closed forms of the flux potential, dense-LU equivalence of the screened
//! solver, inverse positivity, the response bounds of the potential split,
//! energy-route and gradient consistency, reproducible small-data
//! minimisation with a two-point multistart, decay of every descent run in
//! the zero-net-flux regime, and blow-up of the energy toward the zero
//! field.

use std::sync::Arc;

use kgm_core::elliptic::{flux_potential, screened_solve};
use kgm_core::grid::Side;
use kgm_core::linsolve::IterSettings;
use kgm_core::optimize::{self, MinimizeOpts, MultistartOpts};
use kgm_core::reduced::{estimate_constants, ReducedProblem, Tolerances};
use kgm_core::rng::Prng;
use kgm_core::sample;
use kgm_core::{BoundaryField, Grid, NormKind, ScalarField, Space};
use nalgebra::{DMatrix, DVector};

fn settings() -> IterSettings {
    IterSettings { tol_rel: 1e-12, max_iter: 20_000 }
}

fn cube(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(3, &[n, n, n], &[1.0, 1.0, 1.0]).unwrap())
}

fn tight() -> Tolerances {
    Tolerances { lin: 1e-12, grad: 1e-7, lambda: 1e-12 }
}

/// 1-D trapezoidal weight, written out from the definition.
fn w1(nk: usize, hk: f64, i: usize) -> f64 {
    if i == 0 || i + 1 == nk {
        0.5 * hk
    } else {
        hk
    }
}

/// Dense pure-Neumann stiffness matrix assembled directly from the grid
/// conventions, independently of the crate's edge iteration.
fn dense_stiffness(dim: usize, n: [usize; 3], extent: [f64; 3]) -> DMatrix<f64> {
    let count = n[0] * n[1] * n[2];
    let mut h = [0.0f64; 3];
    for k in 0..dim {
        h[k] = extent[k] / (n[k] - 1) as f64;
    }
    let flat = |c: [usize; 3]| (c[0] * n[1] + c[1]) * n[2] + c[2];
    let mut m = DMatrix::zeros(count, count);
    for k in 0..dim {
        for i0 in 0..n[0] {
            for i1 in 0..n[1] {
                for i2 in 0..n[2] {
                    let c = [i0, i1, i2];
                    if c[k] + 1 == n[k] {
                        continue;
                    }
                    let mut perp = 1.0;
                    for j in 0..dim {
                        if j != k {
                            perp *= w1(n[j], h[j], c[j]);
                        }
                    }
                    let coef = perp / h[k];
                    let mut cb = c;
                    cb[k] += 1;
                    let (a, b) = (flat(c), flat(cb));
                    m[(a, a)] += coef;
                    m[(b, b)] += coef;
                    m[(a, b)] -= coef;
                    m[(b, a)] -= coef;
                }
            }
        }
    }
    m
}

/// Dense volume weights from the same written-out definition.
fn dense_weights(dim: usize, n: [usize; 3], extent: [f64; 3]) -> DVector<f64> {
    let count = n[0] * n[1] * n[2];
    let mut h = [0.0f64; 3];
    for k in 0..dim {
        h[k] = extent[k] / (n[k] - 1) as f64;
    }
    let mut w = DVector::zeros(count);
    let mut idx = 0usize;
    for i0 in 0..n[0] {
        for i1 in 0..n[1] {
            for i2 in 0..n[2] {
                let c = [i0, i1, i2];
                let mut prod = 1.0;
                for k in 0..dim {
                    prod *= w1(n[k], h[k], c[k]);
                }
                w[idx] = prod;
                idx += 1;
            }
        }
    }
    w
}

/// A probe family that cycles plain random fields, signed fields whose nodal
/// sign changes sit on zero planes, and nonnegative fields.
fn probe(grid: &Arc<Grid>, kind: usize, rng: &mut Prng) -> ScalarField {
    match kind % 3 {
        0 => sample::random_dirichlet(grid, rng, 3),
        1 => sample::plane_signed_probe(grid, rng, 3),
        _ => sample::nonnegative_probe(grid, rng, 3),
    }
}

fn const_problem(g: &Arc<Grid>) -> ReducedProblem {
    let q = ScalarField::from_fn(g, Space::Neumann, |_| 0.3);
    let alpha = BoundaryField::constant(g, 0.1);
    ReducedProblem::new(1.0, q, alpha, tight()).unwrap()
}

// 1. The flux potential reproduces both closed-form responses on the unit
//    cube, and the max-norm error drops by 4 when the spacing halves.
#[test]
fn flux_potential_matches_both_closed_forms_at_second_order() {
    let face_err = |n: usize| -> f64 {
        let g = cube(n);
        let alpha = BoundaryField::from_face_fns(&g, |axis, side, _| {
            if axis == 0 && side == Side::Upper {
                1.0
            } else {
                0.0
            }
        });
        let sol = flux_potential(&alpha, settings()).unwrap();
        assert!(sol.stats.converged, "n = {n}: {:?}", sol.stats);
        (0..g.node_count())
            .map(|i| {
                let p = g.position(i);
                (sol.field.values()[i] - (0.5 * p[0] * p[0] - 1.0 / 6.0)).abs()
            })
            .fold(0.0, f64::max)
    };
    let const_err = |n: usize, c: f64| -> f64 {
        let g = cube(n);
        let alpha = BoundaryField::constant(&g, c);
        let sol = flux_potential(&alpha, settings()).unwrap();
        assert!(sol.stats.converged, "n = {n}: {:?}", sol.stats);
        (0..g.node_count())
            .map(|i| {
                let p = g.position(i);
                let r2: f64 = (0..3).map(|k| (p[k] - 0.5) * (p[k] - 0.5)).sum();
                (sol.field.values()[i] - (c * r2 - c / 4.0)).abs()
            })
            .fold(0.0, f64::max)
    };

    let (f9, f17) = (face_err(9), face_err(17));
    assert!(f9 <= 2e-2, "coarse face-data error {f9}");
    let ratio = f9 / f17;
    assert!(
        (3.4..=4.6).contains(&ratio),
        "face-data error ratio {ratio} ({f9} -> {f17})"
    );

    let (c9, c17) = (const_err(9, 0.7), const_err(17, 0.7));
    assert!(c9 <= 5e-2, "coarse constant-data error {c9}");
    let ratio = c9 / c17;
    assert!(
        (3.4..=4.6).contains(&ratio),
        "constant-data error ratio {ratio} ({c9} -> {c17})"
    );
}

// 2. The iterative screened solver agrees with a dense LU factorisation of
//    an independently assembled matrix, and the dense operator applied to
//    the iterative solution reproduces the data.
#[test]
fn screened_solver_matches_dense_lu_and_round_trips() {
    let n = [5, 5, 5];
    let extent = [1.0, 1.2, 0.8];
    let g = Arc::new(Grid::new(3, &n, &extent).unwrap());
    let count = g.node_count();
    let l = dense_stiffness(3, n, extent);
    let w = dense_weights(3, n, extent);

    for trial in 0..20u64 {
        let mut rng = Prng::stream(101, trial);
        let bsq: Vec<f64> =
            (0..count).map(|_| rng.uniform_in(0.0, 1.0).powi(2)).collect();
        let rhs: Vec<f64> = (0..count).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

        let mut a = l.clone();
        for i in 0..count {
            a[(i, i)] += w[i] * bsq[i];
        }
        let dense = a
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&rhs))
            .expect("dense screened system is invertible");

        let (phi, stats) = screened_solve(&g, &bsq, &rhs, settings()).unwrap();
        assert!(stats.converged, "trial {trial}: {stats:?}");
        let scale = dense.amax().max(1.0);
        for i in 0..count {
            assert!(
                (phi.values()[i] - dense[i]).abs() <= 1e-9 * scale,
                "trial {trial} node {i}: {} vs {}",
                phi.values()[i],
                dense[i]
            );
        }

        let back = &a * DVector::from_column_slice(phi.values());
        let rhs_d = DVector::from_column_slice(&rhs);
        let rel = (&back - &rhs_d).norm() / rhs_d.norm();
        assert!(rel <= 1e-8, "trial {trial}: round-trip {rel}");
    }
}

// 3. The screened inverse is positivity-preserving: nonnegative source
//    densities produce nodally nonnegative fields.
#[test]
fn screened_inverse_maps_nonnegative_sources_to_nonnegative_fields() {
    let n = [5, 5, 5];
    let extent = [1.0, 1.2, 0.8];
    let g = Arc::new(Grid::new(3, &n, &extent).unwrap());
    let count = g.node_count();

    for trial in 0..50u64 {
        let mut rng = Prng::stream(202, trial);
        let bsq: Vec<f64> =
            (0..count).map(|_| rng.uniform_in(0.05, 1.0).powi(2)).collect();
        let rho: Vec<f64> = (0..count).map(|_| rng.uniform_in(0.0, 1.0)).collect();
        let rhs: Vec<f64> =
            (0..count).map(|i| g.volume_weight(i) * rho[i]).collect();

        let (phi, stats) = screened_solve(&g, &bsq, &rhs, settings()).unwrap();
        assert!(stats.converged, "trial {trial}: {stats:?}");
        let min = phi.values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        assert!(min >= -1e-10, "trial {trial}: min node value {min:e}");
    }
}

// 4. The split of the potential into its flux-driven and screened parts
//    satisfies the sign, gradient, sup-norm, flux-identity and mean bounds
//    on random admissible fields.
#[test]
fn potential_split_satisfies_the_response_bounds_on_random_fields() {
    let g = cube(9);
    let alpha = BoundaryField::constant(&g, 0.1);
    let problem = const_problem(&g);
    let consts =
        estimate_constants(&g, core::slice::from_ref(&alpha), &tight(), 0, 20)
            .unwrap();

    let a = problem.total_flux();
    assert!(a > 0.0);
    let chi_sup = problem.flux_potential().sup_norm;
    let vol_third = g.volume().cbrt();

    for i in 0..50usize {
        let mut rng = Prng::stream(303, i as u64);
        let u = probe(&g, i, &mut rng);
        let split = problem.potential_split(&u).unwrap();

        let min_a_eta = split
            .eta
            .values()
            .iter()
            .map(|&e| a * e)
            .fold(f64::INFINITY, f64::min);
        assert!(min_a_eta >= -1e-10, "probe {i}: min A*eta = {min_a_eta:e}");

        let qusq = split.qu_l3 * split.qu_l3;
        let grad_eta = g.grad_sq(split.eta.values()).sqrt();
        let grad_bound = consts.gamma * qusq * split.eta_mean.abs();
        assert!(
            grad_eta <= grad_bound * (1.0 + 1e-6),
            "probe {i}: |grad eta| = {grad_eta} exceeds {grad_bound}"
        );

        let xi_sup = split.xi.norm(NormKind::LInf).unwrap();
        assert!(
            xi_sup <= chi_sup * (1.0 + 1e-8),
            "probe {i}: |xi|_inf = {xi_sup} exceeds |chi|_inf = {chi_sup}"
        );

        let mut flux = 0.0;
        for j in 0..g.node_count() {
            flux += g.volume_weight(j) * split.screening[j] * split.eta.values()[j];
        }
        assert!(
            (flux - a).abs() <= 1e-10 * a.abs(),
            "probe {i}: screened flux {flux} vs total flux {a}"
        );

        let mean_bound = a.abs()
            / (qusq * (consts.gamma * consts.gamma * qusq + vol_third));
        assert!(
            split.eta_mean.abs() >= mean_bound * (1.0 - 1e-6),
            "probe {i}: |eta mean| = {} under {mean_bound}",
            split.eta_mean.abs()
        );
    }
}

// 5. The three energy routes agree, the energy is even (under negation
//    always; under the nodal absolute value whenever sign changes pass
//    through zero nodes), and the differential matches central finite
//    differences.
#[test]
fn energy_routes_agree_and_gradient_matches_finite_differences() {
    let g = cube(9);
    let problem = const_problem(&g);

    for i in 0..50usize {
        let mut rng = Prng::stream(404, i as u64);
        let u = probe(&g, i, &mut rng);

        let er = problem.energy_report(&u).unwrap();
        let scale = er.value.abs().max(1.0);
        assert!(
            (er.direct - er.value).abs() <= 1e-9 * scale,
            "probe {i}: direct {} vs split {}",
            er.direct,
            er.value
        );
        assert!(
            (er.single - er.value).abs() <= 1e-9 * scale,
            "probe {i}: single {} vs split {}",
            er.single,
            er.value
        );

        // Compare through one evaluation path so summation order cannot
        // masquerade as an evenness defect.
        let j_plain = problem.energy(&u).unwrap();
        let j_neg = problem.energy(&u.scale(-1.0)).unwrap();
        assert!(
            (j_neg - j_plain).abs() <= 1e-12,
            "probe {i}: J(-u) - J(u) = {:e}",
            j_neg - j_plain
        );
        if i % 3 != 0 {
            let j_abs = problem.energy(&optimize::symmetrize(&u)).unwrap();
            assert!(
                (j_abs - j_plain).abs() <= 1e-12,
                "probe {i}: J(|u|) - J(u) = {:e}",
                j_abs - j_plain
            );
        }
    }

    for p in 0..5usize {
        let mut rng = Prng::stream(404, p as u64);
        // Unit-size probes keep the comparison away from the admissibility
        // pole, where any fixed difference step is ill-conditioned.
        let raw = probe(&g, p, &mut rng);
        let u = raw.scale(1.0 / raw.norm(NormKind::H10).unwrap());
        let dual = problem.differential(&u).unwrap();
        for dir in 0..10u64 {
            let mut drng = Prng::stream(505, p as u64 * 16 + dir);
            let v = sample::random_dirichlet(&g, &mut drng, 3);
            let pairing: f64 =
                dual.iter().zip(v.values()).map(|(d, vi)| d * vi).sum();
            let eps = 1e-5;
            let jp = problem.energy(&u.axpy(eps, &v).unwrap()).unwrap();
            let jm = problem.energy(&u.axpy(-eps, &v).unwrap()).unwrap();
            let fd = (jp - jm) / (2.0 * eps);
            assert!(
                (pairing - fd).abs() <= 1e-5 * pairing.abs().max(1.0),
                "probe {p} direction {dir}: pairing {pairing} vs differences {fd}"
            );
        }
    }
}

// 6. Small-data minimisation with net inflow: every seed converges to the
//    same nonnegative ground state with small full-system residuals, and a
//    four-start deflated search on a mirror-symmetric double-lump coupling
//    returns at least two distinct verified critical points in strictly
//    increasing energy order.
#[test]
fn driven_small_data_minimisation_is_reproducible_and_finds_two_points() {
    let g = cube(9);
    let lump_a = sample::gaussian(&g, [0.3, 0.5, 0.5], 0.1, 12.0);
    let lump_b = sample::gaussian(&g, [0.7, 0.5, 0.5], 0.1, 12.0);
    let q = lump_a.axpy(1.0, &lump_b).unwrap();
    let alpha = BoundaryField::constant(&g, 0.03);
    let tol = tight();
    let problem = ReducedProblem::new(8.0, q, alpha.clone(), tol).unwrap();
    let consts =
        estimate_constants(&g, core::slice::from_ref(&alpha), &tol, 0, 12)
            .unwrap();

    assert!(problem.total_flux() > 0.0);
    let product = problem.smallness_product();
    assert!(
        product < consts.delta,
        "product {product} outside the small-data regime {}",
        consts.delta
    );

    let opts = MinimizeOpts::default();
    let mut values = Vec::new();
    for seed in 0..5u64 {
        let mut rng = Prng::stream(77, seed);
        let run = optimize::ground_state(&problem, &mut rng, 1e-2, &opts).unwrap();
        assert!(
            run.converged && run.grad_norm <= 1e-6,
            "seed {seed}: converged {} grad {:e}",
            run.converged,
            run.grad_norm
        );
        let min_u = run.u.values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        assert!(min_u >= -1e-12, "seed {seed}: min node value {min_u:e}");
        let res = problem.residuals(&run.u).unwrap();
        let worst = res.matter_dual.max(res.potential_dual);
        assert!(worst <= 1e-7, "seed {seed}: system residual {worst:e}");
        values.push(run.value);
    }
    let spread = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    assert!(spread <= 1e-6, "values {values:?} spread {spread:e}");

    let found =
        optimize::multistart_deflate(&problem, 4, 77, &MultistartOpts::default())
            .unwrap();
    assert!(found.len() >= 2, "only {} distinct critical points", found.len());
    for run in &found {
        assert!(
            run.converged && run.grad_norm <= 1e-6,
            "unverified point: grad {:e}",
            run.grad_norm
        );
    }
    for w in found.windows(2) {
        assert!(
            w[0].value < w[1].value,
            "energies not strictly increasing: {} then {}",
            w[0].value,
            w[1].value
        );
    }
}

// 7. With zero net flux and small data every descent run decays to a tiny
//    fraction of its starting size, and the quadratic-form certificate
//    behind that decay stays nonnegative at every logged iterate.
#[test]
fn zero_net_flux_descent_decays_with_nonnegative_certificate() {
    let g = cube(9);
    let q = ScalarField::from_fn(&g, Space::Neumann, |_| 0.3);
    let alpha = BoundaryField::from_face_fns(&g, |axis, side, _| {
        match (axis, side) {
            (0, Side::Upper) => 0.2,
            (0, Side::Lower) => -0.2,
            _ => 0.0,
        }
    });
    let tol = tight();
    let problem = ReducedProblem::new(1.0, q, alpha.clone(), tol).unwrap();
    assert!(problem.total_flux().abs() <= 1e-15);
    let consts =
        estimate_constants(&g, core::slice::from_ref(&alpha), &tol, 0, 12)
            .unwrap();
    let product = problem.smallness_product();
    assert!(product < consts.delta);
    let bracket = 1.0 - (consts.kappa * consts.sigma * product).powi(2);
    assert!(bracket > 0.0);

    let opts = MinimizeOpts {
        stop_h10_fraction: Some(1e-4),
        ..MinimizeOpts::default()
    };
    for seed in 0..5u64 {
        let mut rng = Prng::stream(9, seed);
        let u0 = optimize::descent_seed(&problem, &mut rng, 1e-2).unwrap();
        let initial = u0.norm(NormKind::H10).unwrap();
        let mut slacks: Vec<kgm_core::Result<f64>> = Vec::new();
        let run = optimize::minimize_observed(&problem, u0, &opts, |_, u, _| {
            slacks.push(
                problem
                    .vanishing_slack(u)
                    .map(|s| s.value - bracket * s.grad_u_sq),
            );
        })
        .unwrap();
        let final_ratio = run.u.norm(NormKind::H10).unwrap() / initial;
        assert!(
            run.stopped_by_decay && final_ratio <= 1e-4,
            "seed {seed}: decay stop {} final/initial {final_ratio:e}",
            run.stopped_by_decay
        );
        let mut min_slack = f64::INFINITY;
        for s in slacks {
            min_slack = min_slack.min(s.unwrap());
        }
        assert!(
            min_slack >= 0.0,
            "seed {seed}: certificate slack {min_slack:e} went negative"
        );
    }
}

// 8. With net inflow the energy grows without bound as a fixed profile is
//    scaled toward zero: the three smallest scalings are strictly ordered.
#[test]
fn energy_blows_up_along_vanishing_scalings_when_flux_is_nonzero() {
    let g = cube(9);
    let problem = const_problem(&g);
    assert!(problem.total_flux() > 0.0);

    let mut rng = Prng::stream(777, 0);
    let raw = sample::nonnegative_probe(&g, &mut rng, 3);
    let nrm = raw.norm(NormKind::H10).unwrap();
    let u = raw.scale(1.0 / nrm);

    let values: Vec<f64> = (0..5)
        .map(|k| problem.energy(&u.scale(10f64.powi(-k))).unwrap())
        .collect();
    assert!(values.iter().all(|v| v.is_finite()), "{values:?}");
    assert!(
        values[2] < values[3] && values[3] < values[4],
        "tail of {values:?} is not strictly increasing"
    );
}
