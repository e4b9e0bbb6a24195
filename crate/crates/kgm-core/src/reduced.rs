//! The reduced one-field energy.
//!
//! For a fixed matter field the potential equation is linear and uniquely
//! solvable (after deflating constants), so the coupled system collapses to
//! a functional of the matter field alone.  This module evaluates that
//! functional three independent ways (direct assembly, the single-solve
//! form, and the split form through the two auxiliary potentials), exposes
//! its differential, estimates the embedding constants its coercivity
//! analysis needs, and reports residuals and the quantities behind the
//! zero-net-flux vanishing argument.

use crate::elliptic::{
    dirichlet_riesz, flux_potential, h1_dual_norm, h10_dual_norm, screened_solve, FluxPotential,
};
use crate::field::{BoundaryField, NormKind, ScalarField, Space};
use crate::grid::Grid;
use crate::linsolve::{pcg, ConstantMode, IterSettings};
use crate::math;
use crate::operators::{dirichlet_stiffness_apply, stiffness_apply, NeumannLaplacian};
use crate::rng::Prng;
use crate::sample;
use crate::{Error, Result};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

/// Solver tolerances threaded through every evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Relative residual for inner linear solves.
    pub lin: f64,
    /// Gradient norm at which the outer minimisation stops.
    pub grad: f64,
    /// Relative eigenvalue increment at which inverse iterations stop.
    pub lambda: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { lin: 1e-10, grad: 1e-6, lambda: 1e-12 }
    }
}

impl Tolerances {
    /// Iteration budget for a linear solve on `n` unknowns.
    pub fn linear(&self, n: usize) -> IterSettings {
        IterSettings { tol_rel: self.lin, max_iter: 10 * n.max(100) }
    }
}

/// Model data frozen for a whole run: the box, the mass, the coupling
/// coefficient, and the boundary flux data with its potential.
#[derive(Clone, Debug)]
pub struct ReducedProblem {
    grid: Arc<Grid>,
    mass: f64,
    coupling: ScalarField,
    alpha: BoundaryField,
    chi: FluxPotential,
    tol: Tolerances,
    coupling_l6: f64,
    alpha_trace: f64,
}

impl ReducedProblem {
    /// Build the problem data; solves for the flux potential once.
    pub fn new(
        mass: f64,
        coupling: ScalarField,
        alpha: BoundaryField,
        tol: Tolerances,
    ) -> Result<ReducedProblem> {
        if !(mass > 0.0) {
            return Err(Error::BadParameter("mass must be positive"));
        }
        let grid = coupling.grid().clone();
        if *alpha.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let chi = flux_potential(&alpha, tol.linear(grid.node_count()))?;
        let coupling_l6 = coupling.norm(NormKind::L6)?;
        let alpha_trace = alpha.h_half_norm();
        Ok(ReducedProblem { grid, mass, coupling, alpha, chi, tol, coupling_l6, alpha_trace })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn coupling(&self) -> &ScalarField {
        &self.coupling
    }

    pub fn boundary_data(&self) -> &BoundaryField {
        &self.alpha
    }

    /// The flux potential solved at construction time.
    pub fn flux_potential(&self) -> &FluxPotential {
        &self.chi
    }

    /// Net boundary flux.
    pub fn total_flux(&self) -> f64 {
        self.chi.total_flux
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// `L^6` norm of the coupling coefficient.
    pub fn coupling_l6(&self) -> f64 {
        self.coupling_l6
    }

    /// Fractional trace norm of the boundary data.
    pub fn boundary_trace_norm(&self) -> f64 {
        self.alpha_trace
    }

    /// The product the smallness condition constrains.
    pub fn smallness_product(&self) -> f64 {
        self.coupling_l6 * self.alpha_trace
    }

    fn settings(&self) -> IterSettings {
        self.tol.linear(self.grid.node_count())
    }

    /// Pointwise `(q u)^2` plus the `L^3` norm of `q u`; errors when the
    /// product vanishes identically (the potential solve would be
    /// singular).
    pub fn screening_of(&self, u: &ScalarField) -> Result<(Vec<f64>, f64)> {
        if !u.same_grid(&self.coupling) {
            return Err(Error::GridMismatch);
        }
        if u.space() != Space::Dirichlet {
            return Err(Error::SpaceMismatch {
                expected: "Dirichlet",
                got: "Neumann",
            });
        }
        let q = self.coupling.values();
        let bsq: Vec<f64> = q.iter().zip(u.values()).map(|(qi, ui)| math::sq(qi * ui)).collect();
        let mut cubed = 0.0;
        for (w, b) in self.grid.volume_weights().iter().zip(&bsq) {
            cubed += w * b * math::sqrt(*b);
        }
        let qu_l3 = math::cbrt(cubed);
        if bsq.iter().all(|&b| b == 0.0) {
            return Err(Error::OutsideAdmissibleSet { qu_l3: 0.0, tol: 0.0 });
        }
        Ok((bsq, qu_l3))
    }

    /// The potential the matter field induces (single screened solve).
    pub fn potential(&self, u: &ScalarField) -> Result<ScalarField> {
        let (bsq, _) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(&self.grid, &bsq, &rhs, self.settings())?;
        Ok(phi)
    }

    /// Dual right-hand side of the potential equation:
    /// `(A/vol) w - w (qu)^2 chi`.
    fn potential_rhs(&self, bsq: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let source = self.total_flux() / g.volume();
        let chi = self.chi.field.values();
        (0..g.node_count())
            .map(|i| g.volume_weight(i) * (source - bsq[i] * chi[i]))
            .collect()
    }

    /// Split the induced potential into the flux response and the
    /// screening response (two screened solves).
    pub fn potential_split(&self, u: &ScalarField) -> Result<PotentialSplit> {
        let (bsq, qu_l3) = self.screening_of(u)?;
        let g = &self.grid;
        let source = self.total_flux() / g.volume();
        let chi = self.chi.field.values();
        let rhs_eta: Vec<f64> = (0..g.node_count()).map(|i| g.volume_weight(i) * source).collect();
        let rhs_xi: Vec<f64> =
            (0..g.node_count()).map(|i| -g.volume_weight(i) * bsq[i] * chi[i]).collect();
        let (eta, _) = screened_solve(g, &bsq, &rhs_eta, self.settings())?;
        let (xi, _) = screened_solve(g, &bsq, &rhs_xi, self.settings())?;
        let eta_mean = eta.mean();
        let xi_mean = xi.mean();
        let phi = eta.axpy(1.0, &xi)?;
        Ok(PotentialSplit { phi, eta, xi, eta_mean, xi_mean, qu_l3, screening: bsq })
    }

    /// Energy via the single-solve form (the cheapest evaluation; used by
    /// line searches).
    pub fn energy(&self, u: &ScalarField) -> Result<f64> {
        let (bsq, _) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(&self.grid, &bsq, &rhs, self.settings())?;
        Ok(self.energy_given(u, &bsq, &phi))
    }

    /// Single-solve energy with the screened solve already done.
    fn energy_given(&self, u: &ScalarField, bsq: &[f64], phi: &ScalarField) -> f64 {
        let g = &self.grid;
        let q = self.coupling.values();
        let chi = self.chi.field.values();
        let a = self.total_flux();
        let msq = self.mass * self.mass;
        let mut vol_terms = 0.0;
        for i in 0..g.node_count() {
            let w = g.volume_weight(i);
            let ui = u.values()[i];
            let qi = q[i];
            vol_terms += w
                * ((msq - math::sq(qi * chi[i])) * ui * ui - bsq[i] * chi[i] * phi.values()[i]);
        }
        g.grad_sq(u.values()) + vol_terms + a * phi.mean()
    }

    /// Energy three ways, with the individual pieces of the split form.
    pub fn energy_report(&self, u: &ScalarField) -> Result<EnergyReport> {
        let split = self.potential_split(u)?;
        let g = &self.grid;
        let q = self.coupling.values();
        let chi = self.chi.field.values();
        let a = self.total_flux();
        let msq = self.mass * self.mass;

        let grad_u_sq = g.grad_sq(u.values());
        let mut mass_term = 0.0;
        let mut screen_chi = 0.0;
        let mut screen_cross = 0.0;
        let mut direct_quad = 0.0;
        for i in 0..g.node_count() {
            let w = g.volume_weight(i);
            let usq = math::sq(u.values()[i]);
            let qsq = math::sq(q[i]);
            let phi_tot = split.phi.values()[i] + chi[i];
            mass_term += w * msq * usq;
            screen_chi -= w * qsq * math::sq(chi[i]) * usq;
            screen_cross -= w * qsq * chi[i] * split.xi.values()[i] * usq;
            direct_quad += w * (msq - qsq * math::sq(phi_tot)) * usq;
        }
        let flux_xi = 2.0 * a * split.xi_mean;
        let flux_eta = a * split.eta_mean;
        let via_split = grad_u_sq + mass_term + screen_chi + screen_cross + flux_xi + flux_eta;

        let direct = grad_u_sq + direct_quad - g.grad_sq(split.phi.values())
            + 2.0 * a * split.phi.mean();

        let single = self.energy_given(u, &split.screening, &split.phi);

        Ok(EnergyReport {
            value: via_split,
            direct,
            single,
            grad_u_sq,
            mass_term,
            screen_chi,
            screen_cross,
            flux_xi,
            flux_eta,
            split,
        })
    }

    /// Dual differential of the energy at `u` (zero on boundary slots):
    /// `dual' v` is the derivative of the energy along `v`.  The potential's
    /// own variation drops out because the potential equation is exactly
    /// its stationarity condition.
    pub fn differential(&self, u: &ScalarField) -> Result<Vec<f64>> {
        let (bsq, _) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(&self.grid, &bsq, &rhs, self.settings())?;
        Ok(self.differential_given(u, &phi))
    }

    fn differential_given(&self, u: &ScalarField, phi: &ScalarField) -> Vec<f64> {
        let g = &self.grid;
        let q = self.coupling.values();
        let chi = self.chi.field.values();
        let msq = self.mass * self.mass;
        let n = g.node_count();
        let mut dual = vec![0.0; n];
        dirichlet_stiffness_apply(g, u.values(), &mut dual);
        for i in 0..n {
            let phi_tot = phi.values()[i] + chi[i];
            let coeff = msq - math::sq(q[i] * phi_tot);
            dual[i] = 2.0 * (dual[i] + g.volume_weight(i) * coeff * u.values()[i]);
        }
        for &b in g.boundary_nodes() {
            dual[b] = 0.0;
        }
        dual
    }

    /// Energy, differential, and the gradient in the zero-trace metric, in
    /// one pass (one screened solve plus one stiffness solve).
    pub fn evaluate(&self, u: &ScalarField) -> Result<Evaluation> {
        let (bsq, qu_l3) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(&self.grid, &bsq, &rhs, self.settings())?;
        let value = self.energy_given(u, &bsq, &phi);
        let dual = self.differential_given(u, &phi);
        let (riesz, _) = dirichlet_riesz(&self.grid, &dual, self.settings())?;
        let mut pairing = 0.0;
        for (d, r) in dual.iter().zip(riesz.values()) {
            pairing += d * r;
        }
        let grad_norm = math::sqrt(pairing.max(0.0));
        Ok(Evaluation { value, phi, dual, riesz, grad_norm, qu_l3 })
    }

    /// Residuals of the coupled system at `(u, potential(u))`, in dual
    /// norms and as pointwise (strong) residuals.
    pub fn residuals(&self, u: &ScalarField) -> Result<ResidualReport> {
        let g = &self.grid;
        let n = g.node_count();
        let (bsq, _) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(g, &bsq, &rhs, self.settings())?;

        let matter_dual_vec = self.differential_given(u, &phi);
        let matter_dual = h10_dual_norm(g, &matter_dual_vec, self.settings())?;
        let mut matter_sq = 0.0;
        let mut matter_max = 0.0f64;
        for i in 0..n {
            if g.boundary_slot(i).is_none() {
                // The factor 2 matches the differential's convention.
                let r = matter_dual_vec[i] / (2.0 * g.volume_weight(i));
                matter_sq += g.volume_weight(i) * r * r;
                matter_max = matter_max.max(math::abs(r));
            }
        }

        let mut pot_dual_vec = vec![0.0; n];
        stiffness_apply(g, phi.values(), &mut pot_dual_vec);
        for i in 0..n {
            pot_dual_vec[i] += g.volume_weight(i) * bsq[i] * phi.values()[i] - rhs[i];
        }
        let potential_dual = h1_dual_norm(g, &pot_dual_vec, self.settings())?;
        let mut pot_sq = 0.0;
        let mut pot_max = 0.0f64;
        for i in 0..n {
            let r = pot_dual_vec[i] / g.volume_weight(i);
            pot_sq += g.volume_weight(i) * r * r;
            pot_max = pot_max.max(math::abs(r));
        }

        let vol = g.volume();
        Ok(ResidualReport {
            matter_dual,
            matter_strong_rms: math::sqrt(matter_sq / vol),
            matter_strong_max: matter_max,
            potential_dual,
            potential_strong_rms: math::sqrt(pot_sq / vol),
            potential_strong_max: pot_max,
        })
    }

    /// The quantity whose nonnegativity drives the vanishing argument when
    /// the net flux is zero, together with its per-instance floor.
    ///
    /// For any zero-trace `u` and any potential `phi`,
    ///
    /// ```text
    ///   S = |grad u|^2 + ∫ (m^2 - q^2 chi^2) u^2
    ///       + ∫ (q u)^2 phi^2 + 2 |grad phi|^2
    /// ```
    ///
    /// satisfies `S >= |grad u|^2 - |chi|_inf^2 |q|_6^2 |u|_3^2` by the
    /// same quadrature inequalities the continuum argument uses, with every
    /// step exact on the grid.  At an actual solution `S = 0`, which forces
    /// `u = 0` whenever the floor is positive for `u != 0`.
    pub fn vanishing_slack(&self, u: &ScalarField) -> Result<SlackReport> {
        let g = &self.grid;
        let (bsq, _) = self.screening_of(u)?;
        let rhs = self.potential_rhs(&bsq);
        let (phi, _) = screened_solve(g, &bsq, &rhs, self.settings())?;

        let q = self.coupling.values();
        let chi = self.chi.field.values();
        let msq = self.mass * self.mass;
        let grad_u_sq = g.grad_sq(u.values());
        let mut chi_term = 0.0;
        let mut mass_term = 0.0;
        let mut phi_term = 0.0;
        for i in 0..g.node_count() {
            let w = g.volume_weight(i);
            let usq = math::sq(u.values()[i]);
            chi_term += w * math::sq(q[i] * chi[i]) * usq;
            mass_term += w * msq * usq;
            phi_term += w * bsq[i] * math::sq(phi.values()[i]);
        }
        let value =
            grad_u_sq + mass_term - chi_term + phi_term + 2.0 * g.grad_sq(phi.values());
        let u_l3 = u.norm(NormKind::L3)?;
        let floor = grad_u_sq - math::sq(self.chi.sup_norm * self.coupling_l6 * u_l3);
        Ok(SlackReport { value, floor, grad_u_sq, chi_term, u_l3 })
    }

    /// Two-sided energy bounds from the estimated constants; valid for any
    /// admissible field with gradient norm `grad_norm` and flux-response
    /// mean `eta_mean`.
    pub fn energy_bounds(
        &self,
        grad_norm: f64,
        eta_mean: f64,
        consts: &ConstantsEstimate,
    ) -> EnergyBounds {
        let a = self.total_flux();
        let q6 = self.coupling_l6;
        let ah = self.alpha_trace;
        let gsq = grad_norm * grad_norm;
        let bracket = 1.0 - math::sq(consts.kappa * consts.sigma * q6 * ah);
        let lower = bracket * gsq - 2.0 * consts.kappa * math::abs(a) * ah + a * eta_mean;
        let vol_third = math::cbrt(self.grid.volume());
        let c1 = 1.0
            + self.mass * self.mass * consts.sigma * consts.sigma * vol_third
            + 2.0 * math::sq(consts.kappa * consts.sigma * q6 * ah);
        let c2 = 2.0 * math::abs(a) * consts.kappa * ah;
        let upper = c1 * gsq + c2 + math::abs(a) * math::abs(eta_mean);
        EnergyBounds { lower, upper, bracket, product: q6 * ah, limit: consts.delta }
    }
}

/// The induced potential and its two components.
#[derive(Clone, Debug)]
pub struct PotentialSplit {
    /// Full potential (`eta + xi`).
    pub phi: ScalarField,
    /// Response to the constant flux source `A/vol`.
    pub eta: ScalarField,
    /// Response to the screened flux potential source `-(qu)^2 chi`.
    pub xi: ScalarField,
    pub eta_mean: f64,
    pub xi_mean: f64,
    /// `|q u|_3` of the field that produced the split.
    pub qu_l3: f64,
    /// Pointwise `(q u)^2`.
    pub screening: Vec<f64>,
}

/// Energy evaluated three ways plus the pieces of the split form.
///
/// `value` (split form), `direct` (literal saddle functional at the solved
/// potential), and `single` (single-solve form) agree up to the inner
/// solver tolerance; their spread is a built-in consistency check.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub value: f64,
    pub direct: f64,
    pub single: f64,
    pub grad_u_sq: f64,
    pub mass_term: f64,
    pub screen_chi: f64,
    pub screen_cross: f64,
    pub flux_xi: f64,
    pub flux_eta: f64,
    pub split: PotentialSplit,
}

/// Energy and gradient data at one matter field.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub phi: ScalarField,
    /// Dual differential (pairs against increments).
    pub dual: Vec<f64>,
    /// Gradient in the zero-trace metric (Riesz representative of `dual`).
    pub riesz: ScalarField,
    /// `sqrt(dual' riesz)` — the dual norm of the differential.
    pub grad_norm: f64,
    pub qu_l3: f64,
}

/// Residuals of the coupled system at a candidate solution.
#[derive(Clone, Copy, Debug)]
pub struct ResidualReport {
    pub matter_dual: f64,
    pub matter_strong_rms: f64,
    pub matter_strong_max: f64,
    pub potential_dual: f64,
    pub potential_strong_rms: f64,
    pub potential_strong_max: f64,
}

/// The vanishing-argument quantity and its exact floor.
#[derive(Clone, Copy, Debug)]
pub struct SlackReport {
    /// The nonnegative combination tested by the argument.
    pub value: f64,
    /// `|grad u|^2 - |chi|_inf^2 |q|_6^2 |u|_3^2`, exact on the grid.
    pub floor: f64,
    pub grad_u_sq: f64,
    /// `∫ q^2 chi^2 u^2`.
    pub chi_term: f64,
    pub u_l3: f64,
}

/// Two-sided bounds on the energy from estimated constants.
#[derive(Clone, Copy, Debug)]
pub struct EnergyBounds {
    pub lower: f64,
    pub upper: f64,
    /// Coefficient of the gradient term in the lower bound; positive under
    /// the smallness condition.
    pub bracket: f64,
    /// `|q|_6 * |alpha|_(1/2)`.
    pub product: f64,
    /// The threshold the product must stay below (`1/(kappa sigma)`).
    pub limit: f64,
}

/// Estimated embedding and trace constants of the box.
///
/// `sigma` and `gamma` come from ascent iterations on the corresponding
/// norm quotients (lower estimates that converge to the discrete suprema);
/// `kappa` is a maximum over a family of boundary data samples.
#[derive(Clone, Copy, Debug)]
pub struct ConstantsEstimate {
    /// `|u|_3 <= sigma |grad u|_2` over zero-trace fields.
    pub sigma: f64,
    /// `|f - mean(f)|_3 <= gamma |grad f|_2` over unconstrained fields.
    pub gamma: f64,
    /// `|chi_a|_inf <= kappa |a|_(1/2)` over boundary data.
    pub kappa: f64,
    /// `1/(kappa sigma)` — the smallness threshold.
    pub delta: f64,
}

/// Estimate the constants on a grid.  `extra_boundary` joins the boundary
/// data family for the trace constant (passing the run's own data sharpens
/// the estimate where it matters); `restarts` controls both the number of
/// random ascent restarts and the number of random boundary samples.
pub fn estimate_constants(
    grid: &Arc<Grid>,
    extra_boundary: &[BoundaryField],
    tol: &Tolerances,
    seed: u64,
    restarts: usize,
) -> Result<ConstantsEstimate> {
    let settings = tol.linear(grid.node_count());
    let sigma = estimate_sigma(grid, tol, seed, restarts, settings)?;
    let gamma = estimate_gamma(grid, tol, seed, restarts, settings)?;
    let kappa = estimate_kappa(grid, extra_boundary, seed, restarts, settings)?;
    Ok(ConstantsEstimate { sigma, gamma, kappa, delta: 1.0 / (kappa * sigma) })
}

fn estimate_sigma(
    grid: &Arc<Grid>,
    tol: &Tolerances,
    seed: u64,
    restarts: usize,
    settings: IterSettings,
) -> Result<f64> {
    let n = grid.node_count();
    let w = grid.volume_weights();
    let mut best = 0.0f64;
    for r in 0..restarts.max(1) {
        let mut f = if r == 0 {
            // Positive start: the ascent then stays in the positivity cone,
            // where the extremal mode lives.
            let mut v = vec![1.0; n];
            for &b in grid.boundary_nodes() {
                v[b] = 0.0;
            }
            ScalarField::dirichlet_from_interior(grid, v)
        } else {
            sample::random_dirichlet(grid, &mut Prng::stream(seed, 100 + r as u64), 4)
        };
        let gsq = grid.grad_sq(f.values());
        if gsq <= 0.0 {
            continue;
        }
        f = f.scale(1.0 / math::sqrt(gsq));
        let mut prev = 0.0;
        for _ in 0..80 {
            let ratio = f.norm(NormKind::L3)?;
            best = best.max(ratio);
            let dual: Vec<f64> =
                (0..n).map(|i| w[i] * math::abs(f.values()[i]) * f.values()[i]).collect();
            let (g, _) = dirichlet_riesz(grid, &dual, settings)?;
            let ggsq = grid.grad_sq(g.values());
            if ggsq <= 0.0 {
                break;
            }
            f = g.scale(1.0 / math::sqrt(ggsq));
            if math::abs(ratio - prev) <= tol.lambda * ratio.max(1e-300) {
                break;
            }
            prev = ratio;
        }
        best = best.max(f.norm(NormKind::L3)?);
    }
    Ok(best)
}

fn estimate_gamma(
    grid: &Arc<Grid>,
    tol: &Tolerances,
    seed: u64,
    restarts: usize,
    settings: IterSettings,
) -> Result<f64> {
    let n = grid.node_count();
    let w = grid.volume_weights();
    let vol = grid.volume();
    let op = NeumannLaplacian::new(grid);
    let diag = op.diagonal();
    let mut best = 0.0f64;
    for r in 0..restarts.max(1) {
        let mut f = if r == 0 {
            ScalarField::from_fn(grid, Space::Neumann, |p| {
                math::cos(core::f64::consts::PI * p[0] / grid.extent()[0])
            })
        } else {
            sample::random_neumann(grid, &mut Prng::stream(seed, 300 + r as u64), 4)
        };
        let shift = f.mean();
        let f_vals = f.values_mut();
        for v in f_vals.iter_mut() {
            *v -= shift;
        }
        let gsq = grid.grad_sq(f.values());
        if gsq <= 0.0 {
            continue;
        }
        f = f.scale(1.0 / math::sqrt(gsq));
        let mut prev = 0.0;
        for _ in 0..80 {
            let ratio = f.norm(NormKind::L3)?;
            best = best.max(ratio);
            let mut dual: Vec<f64> =
                (0..n).map(|i| w[i] * math::abs(f.values()[i]) * f.values()[i]).collect();
            // Make the right-hand side compatible with the pure-flux
            // operator (project onto the range).
            let total: f64 = dual.iter().sum();
            for i in 0..n {
                dual[i] -= total / vol * w[i];
            }
            let (mut g, stats) = pcg(&op, &dual, &diag, ConstantMode::ProjectOut, settings);
            if !stats.converged {
                return Err(Error::SolverStall {
                    context: "mean-free ascent solve",
                    rel_residual: stats.rel_residual,
                });
            }
            let gm = grid.mean(&g);
            for v in g.iter_mut() {
                *v -= gm;
            }
            let ggsq = grid.grad_sq(&g);
            if ggsq <= 0.0 {
                break;
            }
            let scale = 1.0 / math::sqrt(ggsq);
            let vals: Vec<f64> = g.iter().map(|v| v * scale).collect();
            f = ScalarField::from_values(grid, Space::Neumann, vals)?;
            if math::abs(ratio - prev) <= tol.lambda * ratio.max(1e-300) {
                break;
            }
            prev = ratio;
        }
        best = best.max(f.norm(NormKind::L3)?);
    }
    Ok(best)
}

fn estimate_kappa(
    grid: &Arc<Grid>,
    extra_boundary: &[BoundaryField],
    seed: u64,
    restarts: usize,
    settings: IterSettings,
) -> Result<f64> {
    use crate::grid::Side;
    let mut samples: Vec<BoundaryField> = Vec::new();
    samples.push(BoundaryField::constant(grid, 1.0));
    for axis in 0..grid.dim() {
        for side in [Side::Lower, Side::Upper] {
            samples.push(BoundaryField::from_face_fns(grid, |a, s, _| {
                if a == axis && s == side {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        let extent = grid.extent();
        samples.push(BoundaryField::from_fn(grid, move |p| {
            math::cos(core::f64::consts::PI * p[axis] / extent[axis])
        }));
    }
    for s in 0..restarts {
        samples.push(sample::random_boundary(grid, &mut Prng::stream(seed, 500 + s as u64), 3));
    }
    for extra in extra_boundary {
        samples.push(extra.clone());
    }

    let mut best = 0.0f64;
    for a in &samples {
        let trace = a.h_half_norm();
        if trace <= 0.0 {
            continue;
        }
        let sol = flux_potential(a, settings)?;
        best = best.max(sol.sup_norm / trace);
    }
    if best <= 0.0 {
        return Err(Error::BadParameter("trace constant estimate degenerated to zero"));
    }
    Ok(best)
}
