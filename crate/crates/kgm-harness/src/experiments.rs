//! Experiment drivers: each takes a configuration and an output directory,
//! runs one study end to end, and returns a [`RunReport`] whose asserted
//! checks decide the process exit code.
//!
//! Probe loops and independent descent seeds run concurrently up to
//! `workers`; every unit of work derives its randomness from the run seed
//! and its own index, so the emitted tables are byte-identical across
//! repeats and across worker counts.

use anyhow::{bail, Context, Result};
use kgm_core::field::NormKind;
use kgm_core::optimize::{self, MinimizeOpts, MultistartOpts};
use kgm_core::reduced::{estimate_constants, ConstantsEstimate, ReducedProblem};
use kgm_core::rng::Prng;
use kgm_core::sample;
use kgm_core::{BoundaryField, ScalarField, Space};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::RunConfig;
use crate::formats::{cell, Csv};
use crate::report::RunReport;

/// Run `count` independent jobs on up to `workers` threads, preserving
/// index order in the result.
fn parallel_map<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    if workers == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = f(i);
                *slots[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}

fn collect_results<T, E: Into<anyhow::Error>>(
    results: Vec<std::result::Result<T, E>>,
) -> Result<Vec<T>> {
    results.into_iter().map(|r| r.map_err(Into::into)).collect()
}

/// Build the problem and estimate the analysis constants, feeding the
/// run's own boundary data into the trace-constant samples.
fn assemble(cfg: &RunConfig) -> Result<(ReducedProblem, ConstantsEstimate)> {
    let problem = cfg.build_problem()?;
    let consts = estimate_constants(
        problem.grid(),
        &[problem.boundary_data().clone()],
        &cfg.tol,
        cfg.seed,
        cfg.constants.restarts,
    )
    .context("estimating the analysis constants")?;
    Ok((problem, consts))
}

fn minimize_opts(cfg: &RunConfig) -> MinimizeOpts {
    MinimizeOpts { max_iters: cfg.solve.max_iters, ..MinimizeOpts::default() }
}

/// Net flux treated as zero: exact cancellation up to roundoff on the
/// surface quadrature.
fn flux_is_zero(problem: &ReducedProblem) -> bool {
    let scale = problem.boundary_data().l2_norm().max(1.0);
    problem.total_flux().abs() <= 1e-13 * scale
}

fn new_report(title: &str, cfg: &RunConfig, consts: &ConstantsEstimate) -> RunReport {
    let mut r = RunReport::new(title, cfg.echo());
    r.constants = Some(consts.clone());
    r
}

/// Worst-case slack of the potential-decomposition facts at one field:
/// sign of the flux response, sup-domination of the screened response, and
/// the flux identity.  Returns `(min A*eta, xi_over_chi, flux_rel_err)`.
fn decomposition_facts(
    problem: &ReducedProblem,
    u: &ScalarField,
) -> Result<(f64, f64, f64)> {
    let split = problem.potential_split(u)?;
    decomposition_facts_from_split(problem, &split)
}

/// Facts gathered from one random probe of the invariant suite.
struct ProbeFacts {
    superpose: f64,
    j_consistency: f64,
    evenness: f64,
    min_a_eta: f64,
    eta_gradient_ratio: f64,
    eta_mean_ratio: f64,
    xi_over_chi: f64,
    flux_rel: f64,
    lower_slack: f64,
    upper_slack: f64,
    fd_rel: f64,
    antisym: f64,
}

fn probe_facts(
    cfg: &RunConfig,
    problem: &ReducedProblem,
    consts: &ConstantsEstimate,
    index: usize,
) -> Result<ProbeFacts> {
    let grid = problem.grid();
    let mut rng = Prng::stream(cfg.seed, 10_000 + index as u64);
    let u = match index % 3 {
        0 => sample::random_dirichlet(grid, &mut rng, 3),
        1 => sample::plane_signed_probe(grid, &mut rng, 3),
        _ => sample::nonnegative_probe(grid, &mut rng, 3),
    };

    let er = problem.energy_report(&u)?;
    let split = &er.split;
    let j_scale = er.value.abs().max(1.0);

    let phi_once = problem.potential(&u)?;
    let mut superpose = 0.0f64;
    let mut phi_sup = 0.0f64;
    for (a, b) in phi_once.values().iter().zip(split.phi.values()) {
        superpose = superpose.max((a - b).abs());
        phi_sup = phi_sup.max(b.abs());
    }
    superpose /= phi_sup.max(1.0);

    let j_consistency = (er.single - er.value)
        .abs()
        .max((er.direct - er.value).abs())
        / j_scale;

    // Negation is exactly even on the grid; the nodal absolute value is
    // exactly even whenever sign changes pass through zero nodes, which the
    // plane and nonnegative probes guarantee.  Compare through the same
    // evaluation path so summation order cannot leak into the measurement.
    let j_plain = problem.energy(&u)?;
    let mut evenness = (problem.energy(&u.scale(-1.0))? - j_plain).abs();
    if index % 3 != 0 {
        evenness = evenness.max((problem.energy(&optimize::symmetrize(&u))? - j_plain).abs());
    }

    let a = problem.total_flux();
    let (min_a_eta, xi_over_chi, flux_rel) = decomposition_facts_from_split(problem, split)?;
    let (mut eta_gradient_ratio, mut eta_mean_ratio) = (0.0, f64::INFINITY);
    if a != 0.0 {
        let qusq = split.qu_l3 * split.qu_l3;
        let grad_eta = grid.grad_sq(split.eta.values()).sqrt();
        let denom = consts.gamma * qusq * split.eta_mean.abs();
        eta_gradient_ratio = if denom > 0.0 { grad_eta / denom } else { 0.0 };
        let vol_third = grid.volume().cbrt();
        eta_mean_ratio = split.eta_mean.abs()
            * (qusq * (consts.gamma * consts.gamma * qusq + vol_third))
            / a.abs();
    }

    let g_norm = grid.grad_sq(u.values()).sqrt();
    let bounds = problem.energy_bounds(g_norm, split.eta_mean, consts);
    let lower_slack = (er.value - bounds.lower) / j_scale;
    let upper_slack = (bounds.upper - er.value) / j_scale;

    let (mut fd_rel, mut antisym) = (0.0f64, 0.0f64);
    if index < 5 {
        let dual = problem.differential(&u)?;
        let dual_neg = problem.differential(&u.scale(-1.0))?;
        let dual_sup = dual.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1.0);
        for (d, dn) in dual.iter().zip(&dual_neg) {
            antisym = antisym.max((d + dn).abs() / dual_sup);
        }
        for dir in 0..2u64 {
            let mut drng = Prng::stream(cfg.seed, 20_000 + index as u64 * 10 + dir);
            let v = sample::random_dirichlet(grid, &mut drng, 3);
            let pairing: f64 =
                dual.iter().zip(v.values()).map(|(d, vi)| d * vi).sum();
            let eps = 1e-5;
            let jp = problem.energy(&u.axpy(eps, &v)?)?;
            let jm = problem.energy(&u.axpy(-eps, &v)?)?;
            let fd = (jp - jm) / (2.0 * eps);
            fd_rel = fd_rel.max((pairing - fd).abs() / pairing.abs().max(1.0));
        }
    }

    Ok(ProbeFacts {
        superpose,
        j_consistency,
        evenness,
        min_a_eta,
        eta_gradient_ratio,
        eta_mean_ratio,
        xi_over_chi,
        flux_rel,
        lower_slack,
        upper_slack,
        fd_rel,
        antisym,
    })
}

/// Same facts as [`decomposition_facts`] when the split is already in hand.
fn decomposition_facts_from_split(
    problem: &ReducedProblem,
    split: &kgm_core::reduced::PotentialSplit,
) -> Result<(f64, f64, f64)> {
    let a = problem.total_flux();
    let min_a_eta = split
        .eta
        .values()
        .iter()
        .map(|&e| a * e)
        .fold(f64::INFINITY, f64::min);
    let chi_sup = problem.flux_potential().sup_norm;
    let xi_over_chi = if chi_sup > 0.0 {
        split.xi.norm(NormKind::LInf)? / chi_sup
    } else {
        0.0
    };
    let g = problem.grid();
    let mut flux = 0.0;
    for ((w, s), e) in g
        .volume_weights()
        .iter()
        .zip(&split.screening)
        .zip(split.eta.values())
    {
        flux += w * s * e;
    }
    let flux_rel = (flux - a).abs() / a.abs().max(1e-300);
    Ok((min_a_eta, xi_over_chi, flux_rel))
}

/// The full invariant suite over random probes, plus the descent-level
/// invariants at a converged solution.
pub fn run_invariants(cfg: &RunConfig, _out: &Path) -> Result<RunReport> {
    let (problem, consts) = assemble(cfg)?;
    let mut report = new_report("invariant suite", cfg, &consts);
    let a_zero = flux_is_zero(&problem);
    let alpha_zero = problem.flux_potential().sup_norm == 0.0;
    report.note(format!(
        "probes = {}, total flux A = {}, smallness product = {}",
        cfg.invariants.probes,
        problem.total_flux(),
        problem.smallness_product()
    ));

    let n = cfg.invariants.probes;
    let facts = collect_results(parallel_map(n, cfg.workers, |i| {
        probe_facts(cfg, &problem, &consts, i)
    }))?;

    let max = |f: fn(&ProbeFacts) -> f64| facts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min = |f: fn(&ProbeFacts) -> f64| facts.iter().map(f).fold(f64::INFINITY, f64::min);

    let chi = &problem.flux_potential().field;
    let chi_mean = chi.mean();
    report.check(
        "chi-mean-zero",
        chi_mean.abs() <= 1e-10 * problem.flux_potential().sup_norm.max(1.0),
        format!("|mean chi| = {:e}", chi_mean.abs()),
        "1e-10 * sup",
    );
    let superpose = max(|f| f.superpose);
    report.check(
        "superposition",
        superpose <= 1e-10,
        format!("max sup-diff (one solve vs split) = {superpose:e}"),
        "1e-10",
    );
    let jc = max(|f| f.j_consistency);
    report.check(
        "j-consistency",
        jc <= 1e-9,
        format!("max relative spread of the three energy routes = {jc:e}"),
        "1e-9",
    );
    let evenness = max(|f| f.evenness);
    report.check(
        "evenness",
        evenness <= 1e-12,
        format!("max |J(u) - J(-u)| and |J(u) - J(|u|)| = {evenness:e}"),
        "1e-12",
    );

    if a_zero {
        for name in [
            "flux-response-sign",
            "eta-gradient-bound",
            "eta-mean-lower-bound",
            "flux-identity",
        ] {
            report.skip(name, "A = 0");
        }
    } else {
        let min_a_eta = min(|f| f.min_a_eta);
        report.check(
            "flux-response-sign",
            min_a_eta >= -1e-10,
            format!("min over nodes of A*eta = {min_a_eta:e}"),
            ">= -1e-10",
        );
        let lb = max(|f| f.eta_gradient_ratio);
        report.check(
            "eta-gradient-bound",
            lb <= 1.0 + 1e-6,
            format!("max |grad eta| / (gamma_hat |qu|_3^2 |mean eta|) = {lb}"),
            "1 + 1e-6",
        );
        let e0 = min(|f| f.eta_mean_ratio);
        report.check(
            "eta-mean-lower-bound",
            e0 >= 1.0 - 1e-6,
            format!("min attained/required mean ratio = {e0}"),
            ">= 1 - 1e-6",
        );
    }
    if alpha_zero {
        report.skip("chi-dominance", "alpha = 0 (chi vanishes)");
    } else {
        let ld = max(|f| f.xi_over_chi);
        report.check(
            "chi-dominance",
            ld <= 1.0 + 1e-8,
            format!("max |xi|_inf / |chi|_inf = {ld}"),
            "1 + 1e-8",
        );
    }
    if !a_zero {
        let fx = max(|f| f.flux_rel);
        report.check(
            "flux-identity",
            fx <= 1e-8,
            format!("max relative |integral (qu)^2 eta - A| = {fx:e}"),
            "1e-8",
        );
    }

    if problem.smallness_product() < consts.delta {
        let ls = min(|f| f.lower_slack);
        report.check(
            "coercivity-lower-bound",
            ls >= -1e-9,
            format!("min normalized J - lower_bound = {ls:e}"),
            ">= -1e-9",
        );
    } else {
        report.skip(
            "coercivity-lower-bound",
            format!(
                "smallness product {} >= delta_hat {}",
                problem.smallness_product(),
                consts.delta
            ),
        );
    }
    let us = min(|f| f.upper_slack);
    report.check(
        "energy-upper-bound",
        us >= -1e-9,
        format!("min normalized upper_bound - J = {us:e}"),
        ">= -1e-9",
    );

    if a_zero {
        report.skip("blow-up-trend", "A = 0");
    } else {
        let mut rng = Prng::stream(cfg.seed, 777);
        let base = sample::nonnegative_probe(problem.grid(), &mut rng, 3);
        let base = base.scale(1.0 / base.norm(NormKind::H10)?);
        let mut values = Vec::new();
        for k in 0..5 {
            let t = 10f64.powi(-k);
            values.push(problem.energy(&base.scale(t))?);
        }
        let increasing = values[2] < values[3] && values[3] < values[4];
        report.check(
            "blow-up-trend",
            increasing,
            format!("J along t = 1..1e-4: {values:?}"),
            "strictly increasing over the last three samples",
        );
    }

    let fd = max(|f| f.fd_rel);
    report.check(
        "fd-gradient",
        fd <= 1e-5,
        format!("max relative differential-vs-central-difference error = {fd:e}"),
        "1e-5",
    );
    let anti = max(|f| f.antisym);
    report.check(
        "gradient-antisymmetry",
        anti <= 1e-12,
        format!("max normalized |dual(u) + dual(-u)| = {anti:e}"),
        "1e-12",
    );

    // Descent-level invariants.
    let opts = MinimizeOpts {
        stop_h10_fraction: Some(1e-6),
        ..minimize_opts(cfg)
    };
    let u0 = optimize::descent_seed(&problem, &mut Prng::stream(cfg.seed, 555), 0.3)?;
    let pair = collect_results(parallel_map(2, cfg.workers, |side| {
        let start = if side == 0 { u0.clone() } else { u0.scale(-1.0) };
        optimize::minimize(&problem, start, &opts)
    }))?;
    let (res_p, res_m) = (&pair[0], &pair[1]);
    let flip = (res_p.value - res_m.value).abs();
    report.check(
        "sign-flip-descent",
        flip <= 1e-6,
        format!("|J from u0 - J from -u0| = {flip:e}"),
        "1e-6",
    );

    if a_zero {
        report.skip("solution-potential-invariants", "A = 0 (no nontrivial critical point)");
        report.skip("solution-residual", "A = 0 (no nontrivial critical point)");
    } else {
        let sol = optimize::ground_state(
            &problem,
            &mut Prng::stream(cfg.seed, 888),
            cfg.solve.noise,
            &minimize_opts(cfg),
        )?;
        if !sol.converged {
            report.check(
                "solution-potential-invariants",
                false,
                format!("descent did not converge (grad = {:e})", sol.grad_norm),
                "converged solution required",
            );
            report.check("solution-residual", false, "descent did not converge", "");
        } else {
            let (min_a_eta, xi_over_chi, flux_rel) = decomposition_facts(&problem, &sol.u)?;
            let pass = min_a_eta >= -1e-10 && xi_over_chi <= 1.0 + 1e-8 && flux_rel <= 1e-8;
            report.check(
                "solution-potential-invariants",
                pass,
                format!(
                    "min A*eta = {min_a_eta:e}, |xi|/|chi| = {xi_over_chi}, flux rel = {flux_rel:e}"
                ),
                "-1e-10 / 1+1e-8 / 1e-8",
            );
            let res = problem.residuals(&sol.u)?;
            let dual = res.matter_dual.max(res.potential_dual);
            report.check(
                "solution-residual",
                dual <= 10.0 * cfg.tol.grad,
                format!(
                    "dual residuals: matter = {:e}, potential = {:e}",
                    res.matter_dual, res.potential_dual
                ),
                format!("10 * tol.grad = {:e}", 10.0 * cfg.tol.grad),
            );
        }
    }

    Ok(report)
}

/// Ground-state solve with seed agreement, an optional multistart, field
/// dumps, and a per-iterate trace table.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let (problem, consts) = assemble(cfg)?;
    let mut report = new_report("ground-state solve", cfg, &consts);
    report.note(format!(
        "total flux A = {}, smallness product = {} (delta_hat = {})",
        problem.total_flux(),
        problem.smallness_product(),
        consts.delta
    ));

    let opts = MinimizeOpts { nonnegative: true, ..minimize_opts(cfg) };
    let runs = collect_results(parallel_map(cfg.solve.seeds.max(1), cfg.workers, |s| {
        optimize::ground_state(
            &problem,
            &mut Prng::stream(cfg.seed, s as u64),
            cfg.solve.noise,
            &opts,
        )
    }))?;
    let best = &runs[0];

    report.check(
        "converged",
        best.converged,
        format!("iterations = {}, energy evaluations = {}", best.iterations, best.energy_evals),
        format!("gradient tolerance {:e}", cfg.tol.grad),
    );
    report.check(
        "gradient-norm",
        best.grad_norm <= cfg.tol.grad,
        format!("{:e}", best.grad_norm),
        format!("{:e}", cfg.tol.grad),
    );
    report.check(
        "admissible",
        best.qu_l3 >= cfg.tol.lambda,
        format!("|q u|_3 = {:e}", best.qu_l3),
        format!(">= tol.lambda = {:e}", cfg.tol.lambda),
    );
    let min_u = best.u.values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
    report.check(
        "nonnegative",
        min_u >= -1e-12,
        format!("min node value = {min_u:e}"),
        ">= -1e-12",
    );
    report.info("j-value", cell(best.value));

    let (min_a_eta, xi_over_chi, flux_rel) = decomposition_facts(&problem, &best.u)?;
    report.check(
        "solution-potential-invariants",
        min_a_eta >= -1e-10 && xi_over_chi <= 1.0 + 1e-8 && flux_rel <= 1e-8,
        format!("min A*eta = {min_a_eta:e}, |xi|/|chi| = {xi_over_chi}, flux rel = {flux_rel:e}"),
        "-1e-10 / 1+1e-8 / 1e-8",
    );
    let res = problem.residuals(&best.u)?;
    report.check(
        "solution-residual",
        res.matter_dual.max(res.potential_dual) <= 10.0 * cfg.tol.grad,
        format!(
            "dual residuals: matter = {:e}, potential = {:e}",
            res.matter_dual, res.potential_dual
        ),
        format!("10 * tol.grad = {:e}", 10.0 * cfg.tol.grad),
    );

    let split = problem.potential_split(&best.u)?;
    let bounds = problem.energy_bounds(
        best.u.norm(NormKind::H10)?,
        split.eta_mean,
        &consts,
    );
    report.check(
        "energy-bounds-empirical",
        bounds.lower - 1e-9 <= best.value && best.value <= bounds.upper + 1e-9,
        format!("{} <= {} <= {}", bounds.lower, best.value, bounds.upper),
        "lower <= J <= upper",
    );

    if runs.len() > 1 {
        let all_converged = runs.iter().all(|r| r.converged);
        let spread = runs
            .iter()
            .map(|r| (r.value - best.value).abs())
            .fold(0.0f64, f64::max);
        report.check(
            "seed-agreement",
            all_converged && spread <= 1e-6,
            format!("{} seeds, max |J - J_0| = {spread:e}", runs.len()),
            "all converged, spread <= 1e-6",
        );
    }

    if cfg.solve.points > 1 {
        let ms_opts = MultistartOpts {
            sep_tol: cfg.solve.sep_tol,
            minimize: minimize_opts(cfg),
            ..MultistartOpts::default()
        };
        let found = optimize::multistart_deflate(&problem, cfg.solve.points, cfg.seed, &ms_opts)?;
        let verified = found
            .iter()
            .all(|r| r.converged && r.grad_norm <= cfg.tol.grad);
        report.check(
            "multistart-verified",
            !found.is_empty() && verified,
            format!("{} of {} requested points, all re-verified undeflated", found.len(), cfg.solve.points),
            "every returned point stationary",
        );
        if found.len() < cfg.solve.points {
            report.note(format!(
                "multistart warning: {} of {} requested critical points found (remaining runs revisited known basins)",
                found.len(),
                cfg.solve.points
            ));
        }
        let mut csv = Csv::new(
            "multistart",
            cfg.seed,
            &["point", "j_value", "grad_norm", "qu_l3", "iterations"],
        );
        for (i, r) in found.iter().enumerate() {
            csv.push(vec![
                i.to_string(),
                cell(r.value),
                cell(r.grad_norm),
                cell(r.qu_l3),
                r.iterations.to_string(),
            ]);
        }
        let path = out.join("multistart.csv");
        csv.write(&path)?;
        report.artifact(path);
        report.info(
            "multistart-energies",
            found.iter().map(|r| cell(r.value)).collect::<Vec<_>>().join(", "),
        );
    }

    let mut trace = Csv::new("solve-trace", cfg.seed, &["iter", "qu_l3"]);
    for (i, v) in best.qu_l3_trace.iter().enumerate() {
        trace.push(vec![i.to_string(), cell(*v)]);
    }
    let trace_path = out.join("trace.csv");
    trace.write(&trace_path)?;
    report.artifact(trace_path);

    for (name, field) in [
        ("u.field", &best.u),
        ("phi.field", &best.phi),
        ("chi.field", &problem.flux_potential().field),
    ] {
        let path = out.join(name);
        crate::formats::write_scalar(&path, field)?;
        report.artifact(path);
    }

    Ok(report)
}

/// Estimate the analysis constants and verify each against an independent
/// witness.
pub fn run_constants(cfg: &RunConfig, _out: &Path) -> Result<RunReport> {
    let problem = cfg.build_problem()?;
    let grid = problem.grid().clone();
    let face = BoundaryField::from_face_fns(&grid, |axis, side, _| {
        if axis == 0 && side == kgm_core::grid::Side::Upper {
            1.0
        } else {
            0.0
        }
    });
    let consts = estimate_constants(
        &grid,
        &[problem.boundary_data().clone(), face.clone()],
        &cfg.tol,
        cfg.seed,
        cfg.constants.restarts,
    )?;
    let mut report = new_report("analysis constants", cfg, &consts);

    // The ascent maximum must dominate a large sweep of fresh random
    // fields, otherwise it did not converge to the discrete supremum.
    let quotients = parallel_map(1000, cfg.workers, |i| {
        let mut rng = Prng::stream(cfg.seed, 40_000 + i as u64);
        let u = sample::random_dirichlet(&grid, &mut rng, 3);
        let l3 = u.norm(NormKind::L3).expect("probe norm");
        let g = grid.grad_sq(u.values()).sqrt();
        l3 / g
    });
    let max_q = quotients.iter().fold(0.0f64, |m, &q| m.max(q));
    report.check(
        "sigma-dominates-fresh-probes",
        max_q <= consts.sigma * (1.0 + 1e-9),
        format!("max |u|_3/|grad u|_2 over 1000 probes = {max_q} vs sigma_hat = {}", consts.sigma),
        "<= sigma_hat",
    );

    let extent = grid.extent();
    let cosine = ScalarField::from_fn(&grid, Space::Neumann, |p| {
        (std::f64::consts::PI * p[0] / extent[0]).cos()
    });
    let centred = cosine.map({
        let mean = cosine.mean();
        move |v| v - mean
    });
    let gamma_direct = centred.norm(NormKind::L3)? / grid.grad_sq(cosine.values()).sqrt();
    report.check(
        "gamma-dominates-cosine",
        gamma_direct <= consts.gamma * (1.0 + 1e-9),
        format!("cosine quotient = {gamma_direct} vs gamma_hat = {}", consts.gamma),
        "<= gamma_hat",
    );

    let chi_face = kgm_core::elliptic::flux_potential(
        &face,
        cfg.tol.linear(grid.node_count()),
    )?;
    let kappa_sample = chi_face.sup_norm / face.h_half_norm();
    report.check(
        "kappa-dominates-face-sample",
        kappa_sample <= consts.kappa * (1.0 + 1e-9),
        format!("face-flux quotient = {kappa_sample} vs kappa_hat = {}", consts.kappa),
        "<= kappa_hat",
    );

    let product = problem.smallness_product();
    report.info(
        "smallness",
        format!(
            "product |q|_6 * |alpha|_1/2 = {product}, delta_hat = {}: {}",
            consts.delta,
            if product < consts.delta { "inside the small-data regime" } else { "outside the small-data regime" }
        ),
    );
    Ok(report)
}

/// Solve, then report how well the pair `(u, phi)` satisfies both
/// equations, in dual and strong form, including the potential shifted
/// back by the flux potential.
pub fn run_residual(cfg: &RunConfig, _out: &Path) -> Result<RunReport> {
    let (problem, consts) = assemble(cfg)?;
    let mut report = new_report("stationarity residuals", cfg, &consts);
    let opts = MinimizeOpts { nonnegative: true, ..minimize_opts(cfg) };
    let sol = optimize::ground_state(
        &problem,
        &mut Prng::stream(cfg.seed, 0),
        cfg.solve.noise,
        &opts,
    )?;
    report.check(
        "converged",
        sol.converged,
        format!("iterations = {}", sol.iterations),
        format!("gradient tolerance {:e}", cfg.tol.grad),
    );
    let res = problem.residuals(&sol.u)?;
    report.check(
        "matter-dual-residual",
        res.matter_dual <= 10.0 * cfg.tol.grad,
        format!("{:e}", res.matter_dual),
        format!("10 * tol.grad = {:e}", 10.0 * cfg.tol.grad),
    );
    report.check(
        "potential-dual-residual",
        res.potential_dual <= 10.0 * cfg.tol.grad,
        format!("{:e}", res.potential_dual),
        format!("10 * tol.grad = {:e}", 10.0 * cfg.tol.grad),
    );
    report.info(
        "matter-strong-form",
        format!("rms = {:e}, max = {:e}", res.matter_strong_rms, res.matter_strong_max),
    );
    report.info(
        "potential-strong-form",
        format!("rms = {:e}, max = {:e}", res.potential_strong_rms, res.potential_strong_max),
    );
    let chi = &problem.flux_potential().field;
    let phi_orig = sol.phi.axpy(1.0, chi)?;
    report.info(
        "original-variables",
        format!(
            "phi + chi: sup = {}, mean = {}",
            phi_orig.norm(NormKind::LInf)?,
            phi_orig.mean()
        ),
    );
    Ok(report)
}

struct SweepRow {
    t: f64,
    product: f64,
    outcome: Result<kgm_core::optimize::SolveResult>,
}

/// Scale the coupling along a logarithmic grid so the smallness product
/// crosses its estimated threshold, and minimise at every scale.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let (problem, consts) = assemble(cfg)?;
    if flux_is_zero(&problem) {
        bail!("the scale sweep needs net boundary flux (A != 0)");
    }
    let mut report = new_report("coupling-scale sweep", cfg, &consts);
    let base_q = problem.coupling().clone();
    let alpha = problem.boundary_data().clone();

    let count = cfg.sweep.count.max(1);
    let (t_min, t_max) = (cfg.sweep.t_min, cfg.sweep.t_max);
    let t_of = |i: usize| {
        if count == 1 {
            t_min
        } else {
            t_min * (t_max / t_min).powf(i as f64 / (count - 1) as f64)
        }
    };

    let rows: Vec<SweepRow> = parallel_map(count, cfg.workers, |i| {
        let t = t_of(i);
        let outcome = (|| {
            let row_problem = ReducedProblem::new(
                cfg.mass,
                base_q.scale(t),
                alpha.clone(),
                cfg.tol,
            )?;
            let opts = MinimizeOpts { nonnegative: true, ..minimize_opts(cfg) };
            let run = optimize::ground_state(
                &row_problem,
                &mut Prng::stream(cfg.seed, 2000 + i as u64),
                cfg.solve.noise,
                &opts,
            )?;
            Ok((row_problem.smallness_product(), run))
        })();
        match outcome {
            Ok((product, run)) => SweepRow { t, product, outcome: Ok(run) },
            Err(e) => SweepRow { t, product: f64::NAN, outcome: Err(e) },
        }
    });

    let mut csv = Csv::new(
        "sweep-delta",
        cfg.seed,
        &["t", "product", "delta_hat", "j_value", "u_h10", "grad_norm", "qu_l3", "iterations", "converged", "note"],
    );
    let mut small_rows = 0usize;
    let mut small_ok = true;
    let mut min_small_h10 = f64::INFINITY;
    for row in &rows {
        match &row.outcome {
            Ok(run) => {
                let h10 = run.u.norm(NormKind::H10)?;
                csv.push(vec![
                    cell(row.t),
                    cell(row.product),
                    cell(consts.delta),
                    cell(run.value),
                    cell(h10),
                    cell(run.grad_norm),
                    cell(run.qu_l3),
                    run.iterations.to_string(),
                    run.converged.to_string(),
                    String::new(),
                ]);
                if row.product < 0.9 * consts.delta {
                    small_rows += 1;
                    small_ok &= run.converged;
                    min_small_h10 = min_small_h10.min(h10);
                }
            }
            Err(e) => {
                csv.push(vec![
                    cell(row.t),
                    cell(row.product),
                    cell(consts.delta),
                    "nan".into(),
                    "nan".into(),
                    "nan".into(),
                    "nan".into(),
                    "0".into(),
                    "false".into(),
                    format!("{e}").replace(',', ";"),
                ]);
                if row.product < 0.9 * consts.delta {
                    small_rows += 1;
                    small_ok = false;
                }
            }
        }
    }
    report.check(
        "row-count",
        csv.len() == count,
        format!("{} rows", csv.len()),
        format!("{count} requested"),
    );
    if small_rows == 0 {
        report.skip("small-rows-nontrivial", "no rows with product below 0.9 * delta_hat");
    } else {
        report.check(
            "small-rows-nontrivial",
            small_ok && min_small_h10 > 1e-4,
            format!(
                "{small_rows} rows below threshold, all converged = {small_ok}, min |grad u|_2 = {min_small_h10:e}"
            ),
            "converged with |grad u|_2 > 1e-4",
        );
    }
    let path = out.join("sweep.csv");
    csv.write(&path)?;
    report.artifact(path);
    Ok(report)
}

struct VanishTrace {
    final_ratio: f64,
    converged_nontrivially: bool,
    rows: Vec<(usize, f64, f64, f64, f64, f64)>,
    min_bracket_slack: f64,
    min_floor_slack: f64,
}

/// Zero-net-flux configurations admit no nontrivial solution in the
/// small-data regime: every descent run must decay toward zero, and the
/// quadratic-form inequality behind that statement must hold along the way.
pub fn run_nonexistence(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let (problem, consts) = assemble(cfg)?;
    let mut report = new_report("vanishing run (zero net flux)", cfg, &consts);

    let a = problem.total_flux();
    let alpha_scale = problem.boundary_data().l2_norm().max(1.0);
    report.check(
        "flux-zero",
        a.abs() <= 1e-13 * alpha_scale,
        format!("|A| = {:e}", a.abs()),
        "<= 1e-13 * boundary scale",
    );

    let product = problem.smallness_product();
    let in_regime = product < consts.delta;
    if !in_regime {
        report.note(format!(
            "outside the small-data regime: product {product} >= delta_hat {}; decay and slack reported informationally",
            consts.delta
        ));
    }
    let bracket = 1.0 - (consts.kappa * consts.sigma * product).powi(2);
    report.note(format!("estimated quadratic-form bracket = {bracket}"));

    let seeds = cfg.vanish.seeds.max(1);
    let traces = collect_results(parallel_map(seeds, cfg.workers, |s| -> Result<VanishTrace> {
        let mut rng = Prng::stream(cfg.seed, 3000 + s as u64);
        let u0 = optimize::descent_seed(&problem, &mut rng, cfg.solve.noise)?;
        let initial = u0.norm(NormKind::H10)?;
        let opts = MinimizeOpts {
            stop_h10_fraction: Some(cfg.vanish.decay),
            ..minimize_opts(cfg)
        };
        let mut logged: Vec<kgm_core::Result<(usize, f64, f64, f64, f64, f64)>> = Vec::new();
        let run = optimize::minimize_observed(&problem, u0, &opts, |it, u, ev| {
            logged.push((|| {
                let slack = problem.vanishing_slack(u)?;
                let h10 = u.norm(NormKind::H10)?;
                Ok((it, h10, ev.grad_norm, slack.value, bracket * slack.grad_u_sq, slack.floor))
            })());
        })?;
        let rows = collect_results(logged)?;
        let final_ratio = run.u.norm(NormKind::H10)? / initial;
        let min_bracket_slack = rows
            .iter()
            .map(|r| r.3 - r.4)
            .fold(f64::INFINITY, f64::min);
        let min_floor_slack = rows
            .iter()
            .map(|r| r.3 - r.5)
            .fold(f64::INFINITY, f64::min);
        Ok(VanishTrace {
            final_ratio,
            converged_nontrivially: run.converged && final_ratio > cfg.vanish.decay,
            rows,
            min_bracket_slack,
            min_floor_slack,
        })
    }))?;

    let worst_ratio = traces.iter().map(|t| t.final_ratio).fold(0.0f64, f64::max);
    let nontrivial = traces.iter().filter(|t| t.converged_nontrivially).count();
    let min_bracket = traces.iter().map(|t| t.min_bracket_slack).fold(f64::INFINITY, f64::min);
    let min_floor = traces.iter().map(|t| t.min_floor_slack).fold(f64::INFINITY, f64::min);

    let mut gate = |name: &str, pass: bool, measured: String, bound: String| {
        if in_regime {
            report.check(name, pass, measured, bound);
        } else {
            report.info(name, format!("{measured} (not asserted: outside the small-data regime)"));
        }
    };
    gate(
        "all-seeds-decay",
        worst_ratio <= cfg.vanish.decay,
        format!("max final/initial |grad u|_2 ratio over {seeds} seeds = {worst_ratio:e}"),
        format!("<= {:e}", cfg.vanish.decay),
    );
    gate(
        "no-nontrivial-limit",
        nontrivial == 0,
        format!("{nontrivial} seeds converged to a nontrivial point"),
        "0".to_string(),
    );
    gate(
        "proof-inequality-slack",
        min_bracket >= -1e-9,
        format!("min over all logged iterates of S - bracket*|grad u|^2 = {min_bracket:e}"),
        ">= -1e-9".to_string(),
    );
    report.info(
        "exact-floor-slack",
        format!("min over all logged iterates of S - per-instance floor = {min_floor:e}"),
    );

    let mut csv = Csv::new(
        "vanishing-decay",
        cfg.seed,
        &["seed", "iter", "u_h10", "grad_norm", "slack_value", "bracket_bound", "exact_floor"],
    );
    for (s, t) in traces.iter().enumerate() {
        for (it, h10, grad, sval, bb, floor) in &t.rows {
            csv.push(vec![
                s.to_string(),
                it.to_string(),
                cell(*h10),
                cell(*grad),
                cell(*sval),
                cell(*bb),
                cell(*floor),
            ]);
        }
    }
    let path = out.join("decay.csv");
    csv.write(&path)?;
    report.artifact(path);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tiny_config(extra: &str) -> RunConfig {
        let text = format!("grid.n = 7\ninvariants.probes = 6\nconstants.restarts = 6\n{extra}");
        RunConfig::parse(&text, PathBuf::from(".")).unwrap()
    }

    #[test]
    fn invariant_suite_passes_on_a_small_default_problem() {
        let cfg = tiny_config("");
        let dir = tempfile::tempdir().unwrap();
        let report = run_invariants(&cfg, dir.path()).unwrap();
        assert!(report.all_passed(), "{}", report.render());
        // Every required invariant from the analysis appears exactly once.
        let text = report.render();
        for name in [
            "superposition",
            "evenness",
            "eta-gradient-bound",
            "eta-mean-lower-bound",
            "coercivity-lower-bound",
            "blow-up-trend",
            "sign-flip-descent",
            "solution-potential-invariants",
            "solution-residual",
        ] {
            assert_eq!(text.matches(&format!(" {name}:")).count(), 1, "{name}");
        }
    }

    #[test]
    fn zero_flux_configs_skip_the_flux_driven_invariants() {
        let cfg = tiny_config("alpha.kind = dipole\nalpha.axis = 0\nalpha.value = 0.2\n");
        let dir = tempfile::tempdir().unwrap();
        let report = run_invariants(&cfg, dir.path()).unwrap();
        assert!(report.all_passed(), "{}", report.render());
        let text = report.render();
        assert!(text.contains("[SKIP] flux-response-sign: A = 0"), "{text}");
        assert!(text.contains("[SKIP] blow-up-trend: A = 0"), "{text}");
        // The screened response bound does not need net flux.
        assert!(text.contains("[PASS] chi-dominance"), "{text}");
    }

    #[test]
    fn constants_verification_passes() {
        let cfg = tiny_config("");
        let dir = tempfile::tempdir().unwrap();
        let report = run_constants(&cfg, dir.path()).unwrap();
        assert!(report.all_passed(), "{}", report.render());
    }

    #[test]
    fn sweep_emits_one_row_per_scale() {
        let cfg = tiny_config("sweep.count = 3\nsweep.t_min = 0.5\nsweep.t_max = 2.0\nsolve.max_iters = 400\n");
        let dir = tempfile::tempdir().unwrap();
        let report = run_sweep(&cfg, dir.path()).unwrap();
        assert!(report.all_passed(), "{}", report.render());
        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        // Header comment + column row + 3 data rows.
        assert_eq!(csv.lines().count(), 5, "{csv}");
    }

    #[test]
    fn nonexistence_decays_on_a_zero_flux_dipole() {
        let cfg = tiny_config(
            "alpha.kind = dipole\nalpha.axis = 1\nalpha.value = 0.2\nq.kind = constant\nq.value = 0.1\nvanish.seeds = 2\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let report = run_nonexistence(&cfg, dir.path()).unwrap();
        assert!(report.all_passed(), "{}", report.render());
        let text = report.render();
        assert!(text.contains("[PASS] all-seeds-decay"), "{text}");
        assert!(text.contains("[PASS] proof-inequality-slack"), "{text}");
    }
}
