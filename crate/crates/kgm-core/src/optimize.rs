//! Critical-point search for the reduced energy: gradient descent in the
//! zero-trace metric with Armijo backtracking, an optional nonnegative
//! polish, and a deflated multistart that looks for further critical
//! points.
//!
//! Descent uses the Riesz representative of the differential, so steps are
//! resolution-independent in the energy metric.  Deflation multiplies the
//! gradient field by `1 + sum_j 1/|u - u_j|^2` (sign images included,
//! since the energy is even): near a known point proposed steps blow up,
//! which pushes later runs away from visited basins, while runs that settle
//! there anyway are dropped as duplicates.  Convergence is always judged on
//! the undeflated gradient norm, so every returned point is a verified
//! stationary point of the plain energy.  Multistart seeds alternate
//! between perturbed ground modes and mirror-antisymmetrised random fields:
//! on a mirror-symmetric model the odd sector is exactly invariant under
//! descent, so those runs converge to the odd-sector minimiser, a second
//! critical point above the ground state.

use crate::elliptic::dirichlet_ground_mode;
use crate::field::{NormKind, ScalarField};
use crate::grid::Grid;
use crate::math;
use crate::reduced::{Evaluation, ReducedProblem};
use crate::rng::Prng;
use crate::sample;
use crate::{Error, Result};
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Options for the descent loop.
#[derive(Clone, Copy, Debug)]
pub struct MinimizeOpts {
    pub max_iters: usize,
    /// Sufficient-decrease coefficient of the backtracking line search.
    pub armijo: f64,
    /// Halvings before the line search gives up.
    pub max_halvings: usize,
    /// Swap to the nonnegative representative once descent stops, then
    /// descend again if the swap disturbed stationarity.
    pub nonnegative: bool,
    /// Stop early once the iterate's gradient-metric norm falls below this
    /// fraction of the starting one (used by the vanishing run, where the
    /// infimum sits at the excluded zero field).
    pub stop_h10_fraction: Option<f64>,
}

impl Default for MinimizeOpts {
    fn default() -> Self {
        MinimizeOpts {
            max_iters: 5000,
            armijo: 1e-4,
            max_halvings: 50,
            nonnegative: false,
            stop_h10_fraction: None,
        }
    }
}

/// Outcome of a descent run.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: ScalarField,
    /// Electrostatic part at the final iterate.
    pub phi: ScalarField,
    pub value: f64,
    /// Undeflated gradient norm at the final iterate.
    pub grad_norm: f64,
    /// Admissibility indicator `|q u|_3` at the final iterate.
    pub qu_l3: f64,
    /// `|q u|_3` at every visited iterate, in order.
    pub qu_l3_trace: Vec<f64>,
    pub iterations: usize,
    pub energy_evals: usize,
    /// Gradient tolerance reached.
    pub converged: bool,
    /// Stopped by the norm-decay rule instead.
    pub stopped_by_decay: bool,
}

/// Nodal absolute value: the equal-energy nonnegative representative.
pub fn symmetrize(u: &ScalarField) -> ScalarField {
    u.map(math::abs)
}

/// Minimise from `u0` with the default (no-op) observer.
pub fn minimize(
    problem: &ReducedProblem,
    u0: ScalarField,
    opts: &MinimizeOpts,
) -> Result<SolveResult> {
    minimize_observed(problem, u0, opts, |_, _, _| {})
}

/// Minimise from `u0`.  The observer runs once per visited iterate with the
/// iteration index, the iterate, and its evaluation.
pub fn minimize_observed(
    problem: &ReducedProblem,
    u0: ScalarField,
    opts: &MinimizeOpts,
    mut observer: impl FnMut(usize, &ScalarField, &Evaluation),
) -> Result<SolveResult> {
    let mut res = descend(problem, u0, opts, &[], &mut observer)?;
    if opts.nonnegative {
        // The energy is exactly even under `u -> |u|` on the grid, so the
        // swap is free; one more descent confirms (or restores)
        // stationarity if the minimiser was sign-changing after all.
        for _ in 0..2 {
            if res.u.values().iter().all(|&v| v >= 0.0) {
                break;
            }
            let swapped = symmetrize(&res.u);
            let again = descend(problem, swapped, opts, &[], &mut observer)?;
            res = SolveResult {
                iterations: res.iterations + again.iterations,
                energy_evals: res.energy_evals + again.energy_evals,
                qu_l3_trace: {
                    let mut t = res.qu_l3_trace;
                    t.extend_from_slice(&again.qu_l3_trace);
                    t
                },
                ..again
            };
        }
    }
    Ok(res)
}

/// Armijo descent on the energy, with the step scaled by the deflation
/// multiplier against `known`; the stopping test stays on the undeflated
/// gradient norm.  With `known` empty this is plain Sobolev-gradient
/// descent.
fn descend(
    problem: &ReducedProblem,
    u0: ScalarField,
    opts: &MinimizeOpts,
    known: &[ScalarField],
    observer: &mut impl FnMut(usize, &ScalarField, &Evaluation),
) -> Result<SolveResult> {
    let grid = problem.grid().clone();
    let tol_grad = problem.tolerances().grad;
    let initial_h10 = u0.norm(NormKind::H10)?;
    let mut u = u0;
    let mut ev = problem.evaluate(&u)?;
    let mut energy_evals = 1usize;
    let mut qu_l3_trace = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut stopped_by_decay = false;

    loop {
        observer(iterations, &u, &ev);
        qu_l3_trace.push(ev.qu_l3);
        let mult = deflation_multiplier(&grid, &u, known);
        if ev.grad_norm <= tol_grad {
            converged = true;
            break;
        }
        if let Some(frac) = opts.stop_h10_fraction {
            if u.norm(NormKind::H10)? <= frac * initial_h10 {
                stopped_by_decay = true;
                break;
            }
        }
        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;

        // Directional derivative along the deflated direction.
        let slope = mult * ev.grad_norm * ev.grad_norm;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = u.axpy(-t * mult, &ev.riesz)?;
            match problem.energy(&trial) {
                Ok(val) => {
                    energy_evals += 1;
                    // The strict part guards against zero-progress accepts
                    // once the decrease target underflows next to `value`.
                    if val < ev.value && val <= ev.value - opts.armijo * t * slope {
                        accepted = Some(trial);
                        break;
                    }
                }
                // A step that leaves the admissible set is just too long.
                Err(Error::OutsideAdmissibleSet { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        if let Some(next) = accepted {
            u = next;
            ev = problem.evaluate(&u)?;
            energy_evals += 1;
            continue;
        }

        // Near the minimum the per-step decrease drops under the float
        // resolution of the energy and the sufficient-decrease test goes
        // blind.  The gradient norm still resolves progress there, so
        // finish on it, allowing the energy to wander by a few units in
        // the last place.
        let slack = 32.0 * f64::EPSILON * math::abs(ev.value).max(1.0);
        let mut t = 1.0;
        let mut polished = None;
        for _ in 0..=opts.max_halvings {
            let trial = u.axpy(-t * mult, &ev.riesz)?;
            match problem.evaluate(&trial) {
                Ok(tev) => {
                    energy_evals += 1;
                    if tev.grad_norm < ev.grad_norm && tev.value <= ev.value + slack {
                        polished = Some((trial, tev));
                        break;
                    }
                }
                Err(Error::OutsideAdmissibleSet { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        let Some((next, nev)) = polished else {
            break; // no certifiable progress left: report the current point
        };
        u = next;
        ev = nev;
    }

    Ok(SolveResult {
        u,
        phi: ev.phi,
        value: ev.value,
        grad_norm: ev.grad_norm,
        qu_l3: ev.qu_l3,
        qu_l3_trace,
        iterations,
        energy_evals,
        converged,
        stopped_by_decay,
    })
}

/// `1 + sum_j (|u - u_j|^-2 + |u + u_j|^-2)` in the gradient metric.
fn deflation_multiplier(grid: &Arc<Grid>, u: &ScalarField, known: &[ScalarField]) -> f64 {
    let mut m = 1.0;
    for k in known {
        for sign in [1.0, -1.0] {
            let diff: Vec<f64> = u
                .values()
                .iter()
                .zip(k.values())
                .map(|(a, b)| a - sign * b)
                .collect();
            m += 1.0 / grid.grad_sq(&diff).max(1e-30);
        }
    }
    m
}

/// Minimise from the Dirichlet ground mode (optionally perturbed by
/// `noise` relative to its own size) and return the nonnegative
/// representative.
pub fn ground_state(
    problem: &ReducedProblem,
    rng: &mut Prng,
    noise: f64,
    opts: &MinimizeOpts,
) -> Result<SolveResult> {
    let u0 = descent_seed(problem, rng, noise)?;
    let opts = MinimizeOpts { nonnegative: true, ..*opts };
    minimize(problem, u0, &opts)
}

/// Unit-gradient-norm starting point: the first Dirichlet eigenmode plus
/// `noise` times its own size in scaled nodal noise.
pub fn descent_seed(
    problem: &ReducedProblem,
    rng: &mut Prng,
    noise: f64,
) -> Result<ScalarField> {
    let grid = problem.grid();
    let tol = problem.tolerances();
    let mode = dirichlet_ground_mode(
        grid,
        tol.linear(grid.node_count()),
        tol.lambda,
        400,
    )?;
    let mut u0 = mode.field;
    if noise > 0.0 {
        let pert = sample::random_dirichlet(grid, rng, 3);
        let pn = pert.norm(NormKind::H10)?;
        let un = u0.norm(NormKind::H10)?;
        if pn > 0.0 {
            u0 = u0.axpy(noise * un / pn, &pert)?;
        }
    }
    let un = u0.norm(NormKind::H10)?;
    Ok(u0.scale(1.0 / un))
}

/// Options for the multistart search.
#[derive(Clone, Copy, Debug)]
pub struct MultistartOpts {
    /// Relative seed perturbation (the first seed is unperturbed).
    pub noise: f64,
    /// Distinctness threshold in the gradient metric (signs identified).
    pub sep_tol: f64,
    pub minimize: MinimizeOpts,
}

impl Default for MultistartOpts {
    fn default() -> Self {
        MultistartOpts { noise: 1.0, sep_tol: 1e-3, minimize: MinimizeOpts::default() }
    }
}

/// Search for several critical points: `k` descent runs, each deflated
/// against everything found so far and re-verified undeflated.  The first
/// seed is the unperturbed ground mode, even-indexed later seeds perturb
/// it, and odd-indexed seeds are mirror-antisymmetrised random fields, so
/// both symmetry sectors of a mirror-symmetric model get explored.
/// Results are distinct modulo sign and sorted by energy; the list may be
/// shorter than `k` when runs revisit known basins.
pub fn multistart_deflate(
    problem: &ReducedProblem,
    k: usize,
    seed: u64,
    opts: &MultistartOpts,
) -> Result<Vec<SolveResult>> {
    let tol_grad = problem.tolerances().grad;
    let mut found: Vec<SolveResult> = Vec::new();
    for s in 0..k {
        let mut rng = Prng::stream(seed, s as u64);
        let seeded = if s % 2 == 1 {
            odd_sector_seed(problem, &mut rng)
        } else {
            let noise = if s == 0 { 0.0 } else { opts.noise };
            descent_seed(problem, &mut rng, noise)
        };
        let u0 = match seeded {
            Ok(u0) => u0,
            Err(Error::OutsideAdmissibleSet { .. }) => continue,
            Err(e) => return Err(e),
        };
        let deflate: Vec<ScalarField> =
            found.iter().map(|r| r.u.clone()).collect();
        let run = descend(
            problem,
            u0,
            &opts.minimize,
            &deflate,
            &mut |_, _, _| {},
        );
        match run {
            Ok(r) if r.converged && r.grad_norm <= tol_grad => {
                add_if_distinct(&mut found, r, opts.sep_tol);
            }
            Ok(_) => {}
            Err(Error::OutsideAdmissibleSet { .. }) | Err(Error::SolverStall { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    found.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("energies are finite"));
    Ok(found)
}

/// Unit random start with the even mirror component removed, so that on a
/// mirror-symmetric model the whole descent stays in the odd sector
/// (reflection is an exact nodal permutation, so the antisymmetry is
/// preserved bit-for-bit by every grid operation).
fn odd_sector_seed(problem: &ReducedProblem, rng: &mut Prng) -> Result<ScalarField> {
    let grid = problem.grid();
    let base = sample::random_dirichlet(grid, rng, 3);
    let odd = base.axpy(-1.0, &base.mirrored(0))?;
    let norm = odd.norm(NormKind::H10)?;
    if norm > 0.0 {
        Ok(odd.scale(1.0 / norm))
    } else {
        Ok(odd)
    }
}

fn add_if_distinct(found: &mut Vec<SolveResult>, candidate: SolveResult, sep_tol: f64) {
    let grid = candidate.u.grid().clone();
    for existing in found.iter() {
        let d = signed_distance(&grid, &candidate.u, &existing.u);
        let scale = existing.u.norm(NormKind::H10).unwrap_or(1.0).max(1.0);
        if d <= sep_tol * scale {
            return;
        }
    }
    found.push(candidate);
}

/// `min(|a - b|, |a + b|)` in the gradient metric.
fn signed_distance(grid: &Arc<Grid>, a: &ScalarField, b: &ScalarField) -> f64 {
    let minus: Vec<f64> =
        a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let plus: Vec<f64> =
        a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    math::sqrt(grid.grad_sq(&minus).min(grid.grad_sq(&plus)))
}
