//! Minimization engines: the Dirichlet sub-problem solve, descent on the
//! regularized energy J_ε (Barzilai–Borwein steps under an Armijo safeguard),
//! the ε → 0 continuation that approximates sharp-interface minimizers, and
//! the comparison / Harnack / Euler–Lagrange diagnostics built on them.

use crate::energy::{
    energy_j, objective_breakdown, objective_gradient, objective_metric, EnergyBreakdown,
    ProblemData,
};
use crate::error::{Error, Result};
use crate::grid::{ball_nodes, ScalarField};
use serde::Serialize;

/// Armijo / step-control parameters for the descent engine.
#[derive(Debug, Clone, Copy)]
pub struct StepRule {
    /// Sufficient-decrease fraction in the Armijo test.
    pub armijo_c1: f64,
    /// Step shrink factor per rejected trial.
    pub backtrack: f64,
    /// Seed step for the very first safeguarded step (then greedily expanded).
    pub step0: f64,
    /// Trials allowed per line search before declaring a stall.
    pub max_backtracks: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            armijo_c1: 1e-4,
            backtrack: 0.5,
            step0: 1.0,
            max_backtracks: 60,
        }
    }
}

/// Stopping and regularization knobs for one solve.
///
/// `tol_grad` bounds the volume-normalized sup-norm of the interior energy
/// gradient — the scale of the pointwise PDE residual, so the tolerance means
/// the same thing on every mesh.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    /// Relative energy-decrease floor used by the stall detector.
    pub tol_energy: f64,
    /// Volume-normalized sup-norm target for the interior gradient.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Flux regularization δ used inside gradient assembly (energies stay exact).
    pub delta: f64,
    pub step_rule: StepRule,
    /// Exploratory option: project trial iterates onto u ≥ 0. Off by default;
    /// nonnegativity normally emerges from the sign of the data alone.
    pub clamp_nonnegative: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_energy: 1e-13,
            tol_grad: 1e-6,
            max_iters: 20_000,
            delta: 1e-8,
            step_rule: StepRule::default(),
            clamp_nonnegative: false,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol_energy > 0.0) || !(self.tol_grad > 0.0) {
            return Err(Error::contract(format!(
                "tolerances must be positive, got tol_energy {} tol_grad {}",
                self.tol_energy, self.tol_grad
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::contract("max_iters must be at least 1"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::contract(format!(
                "flux regularization must be nonnegative, got {}",
                self.delta
            )));
        }
        let s = &self.step_rule;
        if !(s.armijo_c1 > 0.0 && s.armijo_c1 < 1.0)
            || !(s.backtrack > 0.0 && s.backtrack < 1.0)
            || !(s.step0 > 0.0)
            || s.max_backtracks == 0
        {
            return Err(Error::contract("step rule parameters out of range"));
        }
        Ok(())
    }
}

/// Consecutive no-progress iterations before a run is declared stalled. An
/// iteration counts as progress when the best energy drops by more than the
/// relative `tol_energy` floor or the best residual makes a new low (near
/// tight gradient tolerances the energy gap falls below machine resolution
/// while the gradient is still shrinking, and BB residuals fall in bursts
/// separated by long plateaus — the window must outlast a plateau).
const STALL_STEPS: usize = 5000;
/// Raw BB iterations allowed without touching the anchor before the engine
/// re-anchors at the best point with a safeguarded step (skipped while the
/// current iterate carries a better residual than the anchor).
const NO_BEST_WINDOW: usize = 200;
/// A raw BB trial whose energy exceeds best + slack·(1 + |best|) is discarded
/// and triggers a safeguarded restart instead.
const BLOWUP_SLACK: f64 = 1e3;
const STEP_MIN: f64 = 1e-16;
const STEP_MAX: f64 = 1e12;

/// Decreasing ε ladder for the continuation.
#[derive(Debug, Clone)]
pub struct ContinuationSchedule {
    pub eps_list: Vec<f64>,
    pub warm_start: bool,
}

impl ContinuationSchedule {
    pub fn new(eps_list: Vec<f64>, warm_start: bool) -> Result<ContinuationSchedule> {
        if eps_list.is_empty() {
            return Err(Error::contract("continuation schedule is empty"));
        }
        if !(eps_list[0] > 0.0) || !eps_list[0].is_finite() {
            return Err(Error::contract(format!(
                "schedule entries must be positive, got {}",
                eps_list[0]
            )));
        }
        for w in eps_list.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0]) {
                return Err(Error::contract(format!(
                    "schedule must strictly decrease through positives, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(ContinuationSchedule {
            eps_list,
            warm_start,
        })
    }

    /// Geometric ladder with ratio 1/2 from `eps0` down to exactly `eps_final`.
    pub fn geometric(eps0: f64, eps_final: f64) -> Result<ContinuationSchedule> {
        if !(eps_final > 0.0) || !(eps0 >= eps_final) {
            return Err(Error::contract(format!(
                "need eps0 >= eps_final > 0, got {eps0} and {eps_final}"
            )));
        }
        let mut list = vec![eps0];
        let mut eps = eps0;
        while eps > eps_final {
            eps = (0.5 * eps).max(eps_final);
            list.push(eps);
        }
        Self::new(list, true)
    }

    /// Default ladder for a boundary field: ε₀ = ½·sup(boundary) halved down
    /// to ε_final = 4h (below which the mesh cannot resolve the transition).
    /// A nonpositive boundary yields the single stage [4h].
    pub fn default_for(boundary: &ScalarField) -> Result<ContinuationSchedule> {
        let eps_final = 4.0 * boundary.grid().h_max();
        let eps0 = 0.5 * boundary.max();
        if eps0 <= eps_final {
            Self::new(vec![eps_final], true)
        } else {
            Self::geometric(eps0, eps_final)
        }
    }
}

/// Outcome of one minimization. `final_grad_norm` is volume-normalized; when
/// `converged` is set it is at or below the configured `tol_grad`. A
/// non-converged result carries the lowest-energy iterate encountered.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: ScalarField,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

/// One continuation stage: the ε it ran at, the regularized solve, and the
/// sharp energy of the stage solution thresholded at that ε.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub eps: f64,
    pub result: SolveResult,
    pub sharp_energy: EnergyBreakdown,
}

/// One accepted-iterate row for CSV traces.
#[derive(Debug, Clone)]
pub struct IterTrace {
    /// Continuation stage index; 0 for standalone solves.
    pub stage: usize,
    pub iter: usize,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub step: f64,
}

type TraceSink<'a> = &'a mut dyn FnMut(&IterTrace);

fn sup_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Core descent engine shared by the Dirichlet solve and the J_ε minimizer.
///
/// Interior nodes move along the negative gradient (projected onto u ≥ 0 when
/// clamping). Steps come from the BB1 rule applied to realized displacements;
/// a raw BB trial is kept only while its energy stays within a bounded
/// excursion of the best energy seen, and whenever trials blow up or loiter
/// the engine re-anchors at the best point with an Armijo-backtracked step.
/// The accepted-iterate sequence (the best-energy chain plus the certified
/// final point) therefore has monotone nonincreasing energy.
fn descend(
    data: &ProblemData,
    boundary: &ScalarField,
    init: &ScalarField,
    cfg: &SolveConfig,
    include_reaction: bool,
    stage: usize,
    mut sink: Option<TraceSink<'_>>,
) -> Result<SolveResult> {
    cfg.validate()?;
    let grid = data.grid().clone();
    let vol = grid.cell_vol();
    let mut u = init.clone();
    u.copy_boundary_from(boundary)?;
    if cfg.clamp_nonnegative {
        for v in u.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    let objective = |f: &ScalarField| -> Result<f64> {
        Ok(objective_breakdown(f, data, include_reaction)?.total)
    };
    let gradient = |f: &ScalarField| -> Result<Vec<f64>> {
        objective_gradient(f, data, cfg.delta, include_reaction)
    };
    // Exponents below 2 get a Jacobi-scaled direction: the flux curvature
    // |∇u|^{p−2} is unbounded at flat cells there, so unscaled descent crawls
    // while near-equal dead-zone values equalize. The metric rescales steps
    // only; convergence is still certified on the true gradient residual.
    let use_metric = data.exponents().p_min() < 2.0;
    let direction = |f: &ScalarField, g: &[f64]| -> Result<Vec<f64>> {
        if !use_metric {
            return Ok(g.to_vec());
        }
        let m = objective_metric(f, data, include_reaction)?;
        Ok(g.iter().zip(&m).map(|(gv, mv)| gv / mv).collect())
    };
    // Trial step u - step·g, projected if clamping; None when values overflow.
    let clamp = cfg.clamp_nonnegative;
    let trial = |base: &ScalarField, g: &[f64], step: f64| -> Option<Vec<f64>> {
        let mut vals = Vec::with_capacity(g.len());
        for (v, gv) in base.values().iter().zip(g) {
            let mut w = v - step * gv;
            if clamp && w < 0.0 {
                w = 0.0;
            }
            if !w.is_finite() {
                return None;
            }
            vals.push(w);
        }
        Some(vals)
    };
    // Residual that respects the active set when clamping: at a node pinned
    // at zero, only the descent-blocking (negative) gradient part counts.
    let residual_of = |f: &ScalarField, g: &[f64]| -> f64 {
        if !clamp {
            return sup_abs(g) / vol;
        }
        let mut m = 0.0_f64;
        for (v, gv) in f.values().iter().zip(g) {
            let r = if *v <= 0.0 { (-gv).max(0.0) } else { gv.abs() };
            m = m.max(r);
        }
        m / vol
    };

    let mut e_cur = objective(&u)?;
    if !e_cur.is_finite() {
        return Err(Error::numeric(format!("energy at initial guess is {e_cur}")));
    }
    let grad0 = gradient(&u)?;
    let mut res = residual_of(&u, &grad0);
    if !res.is_finite() {
        return Err(Error::numeric("gradient at initial guess is not finite"));
    }
    let mut dir = direction(&u, &grad0)?;

    let mut u_best = u.clone();
    let mut e_best = e_cur;
    let mut dir_best = dir.clone();
    let mut res_best_point = res;

    let mut iterations = 0usize;
    let mut converged = res <= cfg.tol_grad;
    let mut best_res = res;
    let mut stall = 0usize;
    let mut since_best = 0usize;
    let mut restart = true;
    let mut t = cfg.step_rule.step0 / (1.0 + sup_abs(&dir));

    if let Some(s) = sink.as_deref_mut() {
        s(&IterTrace {
            stage,
            iter: 0,
            energy: objective_breakdown(&u, data, include_reaction)?,
            grad_norm: res,
            step: 0.0,
        });
    }

    'outer: while !converged && iterations < cfg.max_iters {
        let u_new;
        let e_new;
        let t_used;
        if restart {
            // Safeguarded Armijo step from the best point seen so far. The
            // sufficient-decrease test uses the realized displacement
            // ‖cand − u‖²/step, which equals step·g² for a free step and stays
            // meaningful when the projection truncates part of the move.
            u = u_best.clone();
            e_cur = e_best;
            dir = dir_best.clone();
            let sq_disp = |base: &ScalarField, cand: &ScalarField| -> f64 {
                base.values()
                    .iter()
                    .zip(cand.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            };
            let mut step = t;
            let mut found = None;
            let mut nan_seen = false;
            for _ in 0..cfg.step_rule.max_backtracks {
                let accepted = match trial(&u, &dir, step) {
                    Some(vals) => {
                        let cand = ScalarField::from_values(&grid, vals)?;
                        let e = objective(&cand)?;
                        if e.is_finite() {
                            Some((cand, e))
                        } else {
                            nan_seen = true;
                            None
                        }
                    }
                    None => {
                        nan_seen = true;
                        None
                    }
                };
                if let Some((cand, e)) = accepted {
                    if e <= e_cur - cfg.step_rule.armijo_c1 * sq_disp(&u, &cand) / step {
                        found = Some((cand, e, step));
                        break;
                    }
                }
                step *= cfg.step_rule.backtrack;
            }
            let Some((mut cand, mut e, mut used)) = found else {
                if nan_seen {
                    return Err(Error::numeric(
                        "line search hit non-finite energies at every trial step",
                    ));
                }
                break 'outer; // no decrease resolvable at machine precision
            };
            if iterations == 0 {
                // Greedy expansion so a timid seed step cannot strand the run.
                for _ in 0..60 {
                    let t_try = 2.0 * used;
                    let Some(vals) = trial(&u, &dir, t_try) else { break };
                    let next = ScalarField::from_values(&grid, vals)?;
                    let e_try = objective(&next)?;
                    if e_try.is_finite()
                        && e_try < e
                        && e_try <= e_cur - cfg.step_rule.armijo_c1 * sq_disp(&u, &next) / t_try
                    {
                        cand = next;
                        e = e_try;
                        used = t_try;
                    } else {
                        break;
                    }
                }
            }
            u_new = cand;
            e_new = e;
            t_used = used;
            restart = false;
        } else {
            // Raw BB trial; discard and re-anchor when it leaves the trust band.
            match trial(&u, &dir, t) {
                Some(vals) => {
                    let cand = ScalarField::from_values(&grid, vals)?;
                    let e = objective(&cand)?;
                    if e.is_finite() && e <= e_best + BLOWUP_SLACK * (1.0 + e_best.abs()) {
                        u_new = cand;
                        e_new = e;
                        t_used = t;
                    } else {
                        iterations += 1;
                        restart = true;
                        continue 'outer;
                    }
                }
                None => {
                    iterations += 1;
                    restart = true;
                    continue 'outer;
                }
            }
        }

        let grad_new = gradient(&u_new)?;
        let res_new = residual_of(&u_new, &grad_new);
        if !res_new.is_finite() {
            return Err(Error::numeric("gradient became non-finite during descent"));
        }
        let dir_new = direction(&u_new, &grad_new)?;
        // BB1 step ⟨s,s⟩/⟨s,y⟩ from the realized displacement s = u' − u and
        // y = d' − d in the step geometry; with a free unscaled step s = −t·g
        // and this reduces to the classical t·g²/(g² − g·g').
        let (mut ss, mut sy) = (0.0_f64, 0.0_f64);
        for ((wn, wo), (dn, dold)) in u_new
            .values()
            .iter()
            .zip(u.values())
            .zip(dir_new.iter().zip(&dir))
        {
            let s = wn - wo;
            ss += s * s;
            sy += s * (dn - dold);
        }
        if sy > 0.0 && ss > 0.0 {
            t = (ss / sy).clamp(STEP_MIN, STEP_MAX);
        } else {
            t = t_used;
        }

        u = u_new;
        e_cur = e_new;
        dir = dir_new;
        res = res_new;
        iterations += 1;

        let scale = e_best.abs().max(1.0);
        let progress =
            e_best - e_cur > cfg.tol_energy * scale || res < best_res * (1.0 - 1e-6);
        if progress {
            stall = 0;
        } else {
            stall += 1;
        }
        if e_cur <= e_best {
            debug_assert!(e_cur <= e_best, "accepted energy must not increase");
            e_best = e_cur;
            u_best = u.clone();
            dir_best = dir.clone();
            res_best_point = res;
            since_best = 0;
            if let Some(s) = sink.as_deref_mut() {
                s(&IterTrace {
                    stage,
                    iter: iterations,
                    energy: objective_breakdown(&u, data, include_reaction)?,
                    grad_norm: res,
                    step: t_used,
                });
            }
        } else {
            since_best += 1;
            if since_best >= NO_BEST_WINDOW && res >= res_best_point {
                restart = true;
                since_best = 0;
            }
        }
        best_res = best_res.min(res);

        if res <= cfg.tol_grad {
            converged = true;
        } else if stall >= STALL_STEPS {
            break;
        }
    }

    // A converged run returns the residual-certified iterate; otherwise the
    // lowest-energy point seen, so callers never receive a wild excursion.
    let (final_u, final_res) = if converged {
        (u, res)
    } else {
        (u_best, res_best_point)
    };
    let breakdown = objective_breakdown(&final_u, data, include_reaction)?;
    Ok(SolveResult {
        u: final_u,
        energy: breakdown,
        iterations,
        final_grad_norm: final_res,
        converged,
    })
}

/// Minimize the strictly convex Dirichlet energy Σ a|∇v|^{p(x)}/p(x) + f·v
/// over fields matching the boundary data; at convergence the field solves
/// div(a|∇v|^{p−2}∇v) = f discretely. The interior of `boundary` seeds the
/// iteration.
pub fn solve_dirichlet(
    data: &ProblemData,
    boundary: &ScalarField,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    descend(data, boundary, boundary, cfg, false, 0, None)
}

/// `solve_dirichlet` with a per-accepted-iterate trace callback.
pub fn solve_dirichlet_traced(
    data: &ProblemData,
    boundary: &ScalarField,
    cfg: &SolveConfig,
    sink: TraceSink<'_>,
) -> Result<SolveResult> {
    descend(data, boundary, boundary, cfg, false, 0, Some(sink))
}

/// Minimize the regularized energy J_ε from `init` (which is forced onto the
/// boundary data first). Non-convergence is reported in the result, never
/// silently discarded.
pub fn minimize_jeps(
    data: &ProblemData,
    boundary: &ScalarField,
    init: &ScalarField,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    data.require_regularized()?;
    descend(data, boundary, init, cfg, true, 0, None)
}

/// `minimize_jeps` with a per-accepted-iterate trace callback.
pub fn minimize_jeps_traced(
    data: &ProblemData,
    boundary: &ScalarField,
    init: &ScalarField,
    cfg: &SolveConfig,
    sink: TraceSink<'_>,
) -> Result<SolveResult> {
    data.require_regularized()?;
    descend(data, boundary, init, cfg, true, 0, Some(sink))
}

/// Run the ε-ladder with warm starts, reporting each stage's solve and sharp
/// energy, plus the final field with values below the last ε set to zero.
/// Any non-convergent stage aborts with its index.
pub fn minimize_j_continuation(
    data: &ProblemData,
    boundary: &ScalarField,
    sched: &ContinuationSchedule,
    cfg: &SolveConfig,
) -> Result<(Vec<StageReport>, ScalarField)> {
    continuation_impl(data, boundary, sched, cfg, None)
}

/// `minimize_j_continuation` with a trace callback (rows carry stage indices).
pub fn minimize_j_continuation_traced(
    data: &ProblemData,
    boundary: &ScalarField,
    sched: &ContinuationSchedule,
    cfg: &SolveConfig,
    sink: TraceSink<'_>,
) -> Result<(Vec<StageReport>, ScalarField)> {
    continuation_impl(data, boundary, sched, cfg, Some(sink))
}

fn continuation_impl(
    data: &ProblemData,
    boundary: &ScalarField,
    sched: &ContinuationSchedule,
    cfg: &SolveConfig,
    mut sink: Option<TraceSink<'_>>,
) -> Result<(Vec<StageReport>, ScalarField)> {
    data.require_regularized()?;
    let mut stage_data = data.clone();
    let mut current = boundary.clone();
    let mut reports = Vec::with_capacity(sched.eps_list.len());
    for (stage, &eps) in sched.eps_list.iter().enumerate() {
        stage_data.set_eps(eps)?;
        let init = if sched.warm_start { &current } else { boundary };
        let result = match sink.as_deref_mut() {
            Some(s) => descend(&stage_data, boundary, init, cfg, true, stage, Some(s))?,
            None => descend(&stage_data, boundary, init, cfg, true, stage, None)?,
        };
        if !result.converged {
            return Err(Error::NonConvergence {
                stage,
                iterations: result.iterations,
                residual: result.final_grad_norm,
            });
        }
        current = result.u.clone();
        let sharp_energy = energy_j(&threshold_field(&result.u, eps), &stage_data, 0.0)?;
        reports.push(StageReport {
            eps,
            result,
            sharp_energy,
        });
    }
    let eps_final = *sched.eps_list.last().expect("schedule validated nonempty");
    let final_u = threshold_field(&current, eps_final);
    Ok((reports, final_u))
}

/// Copy of `u` with values strictly below `level` set to zero.
pub fn threshold_field(u: &ScalarField, level: f64) -> ScalarField {
    let mut out = u.clone();
    for v in out.values_mut() {
        if *v < level {
            *v = 0.0;
        }
    }
    out
}

/// Solve the Dirichlet problem for both boundary fields and report whether
/// the solutions stay ordered nodewise (up to a small slack).
pub fn check_comparison(
    data: &ProblemData,
    boundary_lo: &ScalarField,
    boundary_hi: &ScalarField,
    cfg: &SolveConfig,
) -> Result<bool> {
    for (lo, hi) in boundary_lo.values().iter().zip(boundary_hi.values()) {
        if lo > hi {
            return Err(Error::contract(format!(
                "boundary fields must be ordered, found {lo} > {hi}"
            )));
        }
    }
    let sol_lo = solve_dirichlet(data, boundary_lo, cfg)?;
    let sol_hi = solve_dirichlet(data, boundary_hi, cfg)?;
    if !sol_lo.converged || !sol_hi.converged {
        return Err(Error::Inconclusive(format!(
            "comparison needs both solves converged (residuals {:.3e}, {:.3e})",
            sol_lo.final_grad_norm, sol_hi.final_grad_norm
        )));
    }
    let scale = sup_abs(sol_hi.u.values()).max(1.0);
    let tol = 1e-8 * scale;
    Ok(sol_lo
        .u
        .values()
        .iter()
        .zip(sol_hi.u.values())
        .all(|(lo, hi)| *lo <= hi + tol))
}

/// Harnack-style diagnostic: sup and inf of `u` over B_{(3/4)r}(center) and
/// the ratio sup/(inf + r). Requires B_r(center) inside the grid and u > 0 on it.
pub fn check_harnack(
    u: &ScalarField,
    center: [f64; 2],
    delta_r: f64,
) -> Result<(f64, f64, f64)> {
    let g = u.grid();
    if !(delta_r > 0.0) {
        return Err(Error::contract(format!(
            "ball radius must be positive, got {delta_r}"
        )));
    }
    for a in 0..g.dim() {
        if center[a] - delta_r < g.origin()[a] - 1e-12
            || center[a] + delta_r > g.origin()[a] + g.extent()[a] + 1e-12
        {
            return Err(Error::contract(format!(
                "ball of radius {delta_r} at ({}, {}) exits the grid box",
                center[0], center[1]
            )));
        }
    }
    let outer = ball_nodes(g, center, delta_r);
    if outer.iter().any(|&idx| u.at(idx) <= 0.0) {
        return Err(Error::contract(
            "Harnack diagnostic needs u > 0 on the whole ball",
        ));
    }
    let inner = ball_nodes(g, center, 0.75 * delta_r);
    if inner.is_empty() {
        return Err(Error::contract(
            "inner ball contains no grid nodes; radius below mesh resolution",
        ));
    }
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for idx in inner {
        let v = u.at(idx);
        sup = sup.max(v);
        inf = inf.min(v);
    }
    Ok((sup, inf, sup / (inf + delta_r)))
}

/// Euler–Lagrange residuals of the smooth part (flux + forcing, no reaction).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ElResiduals {
    /// Sup of |residual| over nodes whose whole stencil sits in {u > level}.
    pub equality_sup: f64,
    /// How many nodes qualified for the equality check.
    pub equality_nodes: usize,
    /// Max of the signed residual over the supplied hat nodes; the weak
    /// inequality holds when this stays at or below the solver tolerance.
    pub onesided_max: f64,
}

/// Residuals of the discrete equation div(a|∇u|^{p−2}∇u) = f on `u`:
/// equality on nodes whose full stencil lies in {u > level} (where the
/// reaction term of any converged regularized solve vanishes), and the
/// one-sided inequality (≤ 0 up to tolerance) tested with nonnegative nodal
/// hats at `hat_nodes`. All residuals are volume-normalized.
pub fn check_euler_lagrange(
    u: &ScalarField,
    data: &ProblemData,
    delta: f64,
    level: f64,
    hat_nodes: &[[usize; 2]],
) -> Result<ElResiduals> {
    let g = u.grid();
    let smooth = objective_gradient(u, data, delta, false)?;
    let vol = g.cell_vol();
    let mut equality_sup = 0.0_f64;
    let mut equality_nodes = 0;
    let stencil_positive = |idx: [usize; 2]| -> bool {
        let [n0, n1] = g.n();
        if idx[0] == 0 || idx[0] + 1 >= n0 {
            return false;
        }
        let lo1 = if g.dim() == 2 { idx[1].wrapping_sub(1) } else { 0 };
        let hi1 = if g.dim() == 2 { idx[1] + 1 } else { 0 };
        if g.dim() == 2 && (idx[1] == 0 || idx[1] + 1 >= n1) {
            return false;
        }
        for i in idx[0] - 1..=idx[0] + 1 {
            for j in lo1..=hi1 {
                if u.at([i, j]) <= level {
                    return false;
                }
            }
        }
        true
    };
    for lin in 0..g.n_nodes() {
        let idx = g.node_unlin(lin);
        if g.is_boundary_node(idx) || !stencil_positive(idx) {
            continue;
        }
        equality_sup = equality_sup.max((smooth[lin] / vol).abs());
        equality_nodes += 1;
    }
    let mut onesided_max = f64::NEG_INFINITY;
    for &idx in hat_nodes {
        if g.is_boundary_node(idx) {
            return Err(Error::contract(format!(
                "hat node {idx:?} lies on the boundary; test hats must be interior"
            )));
        }
        onesided_max = onesided_max.max(smooth[g.node_lin(idx)] / vol);
    }
    if hat_nodes.is_empty() {
        onesided_max = 0.0;
    }
    Ok(ElResiduals {
        equality_sup,
        equality_nodes,
        onesided_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::BetaProfile;
    use crate::grid::{ExponentField, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirichlet_data_1d(n: usize, p_val: f64, f_val: f64) -> (ProblemData, Grid) {
        let g = Grid::new_1d(0.0, 1.0, n).unwrap();
        let p = ExponentField::constant(&g, p_val).unwrap();
        let lam = ScalarField::from_fn(&g, |_| 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |_| f_val).unwrap();
        (ProblemData::sharp(p, lam, f).unwrap(), g)
    }

    fn ramp_boundary(g: &Grid, right: f64) -> ScalarField {
        ScalarField::from_fn(g, |x| right * x[0]).unwrap()
    }

    #[test]
    fn dirichlet_harmonic_1d_is_linear() {
        let (data, g) = dirichlet_data_1d(65, 2.0, 0.0);
        // Seed with a deliberately wrong interior to make the solve do work.
        let boundary = ScalarField::from_fn(&g, |x| {
            if x[0] == 0.0 || x[0] == 1.0 {
                x[0]
            } else {
                0.3 * (7.0 * x[0]).sin()
            }
        })
        .unwrap();
        let cfg = SolveConfig {
            tol_grad: 1e-12,
            ..SolveConfig::default()
        };
        let sol = solve_dirichlet(&data, &boundary, &cfg).unwrap();
        assert!(sol.converged, "residual {}", sol.final_grad_norm);
        for idx in g.nodes() {
            let x = g.node_pos(idx)[0];
            assert!(
                (sol.u.at(idx) - x).abs() <= 1e-10,
                "u({x}) = {}",
                sol.u.at(idx)
            );
        }
    }

    #[test]
    fn dirichlet_p3_still_affine_in_1d() {
        let (data, g) = dirichlet_data_1d(65, 3.0, 0.0);
        // x² matches the endpoint data but not the affine solution.
        let boundary = ScalarField::from_fn(&g, |x| x[0] * x[0]).unwrap();
        let cfg = SolveConfig {
            tol_grad: 1e-10,
            ..SolveConfig::default()
        };
        let sol = solve_dirichlet(&data, &boundary, &cfg).unwrap();
        assert!(sol.converged, "residual {}", sol.final_grad_norm);
        for idx in g.nodes() {
            let x = g.node_pos(idx)[0];
            assert!(
                (sol.u.at(idx) - x).abs() <= 1e-8,
                "u({x}) = {}",
                sol.u.at(idx)
            );
        }
    }

    #[test]
    fn dirichlet_with_forcing_matches_parabola() {
        let (data, g) = dirichlet_data_1d(129, 2.0, 2.0);
        let boundary = ScalarField::zeros(&g);
        let cfg = SolveConfig {
            tol_grad: 1e-11,
            ..SolveConfig::default()
        };
        let sol = solve_dirichlet(&data, &boundary, &cfg).unwrap();
        assert!(sol.converged, "residual {}", sol.final_grad_norm);
        for idx in g.nodes() {
            let x = g.node_pos(idx)[0];
            let exact = x * x - x;
            assert!(
                (sol.u.at(idx) - exact).abs() <= 1e-8,
                "u({x}) = {} vs {exact}",
                sol.u.at(idx)
            );
        }
    }

    #[test]
    fn dirichlet_solution_is_unique_in_practice() {
        let (data, g) = dirichlet_data_1d(33, 2.5, 0.0);
        let cfg = SolveConfig {
            tol_grad: 1e-11,
            ..SolveConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut solutions = Vec::new();
        for _ in 0..2 {
            let mut vals: Vec<f64> = (0..33).map(|_| rng.gen_range(0.0..1.0)).collect();
            vals[0] = 0.0;
            vals[32] = 1.0;
            let boundary = ScalarField::from_values(&g, vals).unwrap();
            let sol = solve_dirichlet(&data, &boundary, &cfg).unwrap();
            assert!(sol.converged);
            solutions.push(sol.u);
        }
        let diff: f64 = solutions[0]
            .values()
            .iter()
            .zip(solutions[1].values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 10.0 * cfg.tol_grad, "solutions differ by {diff}");
    }

    fn regularized_data_1d(n: usize, p_val: f64, eps: f64) -> (ProblemData, Grid) {
        let g = Grid::new_1d(0.0, 1.0, n).unwrap();
        let p = ExponentField::constant(&g, p_val).unwrap();
        let beta = BetaProfile::quadratic(1.0).unwrap();
        (
            ProblemData::regularized(p, beta, eps, ScalarField::zeros(&g)).unwrap(),
            g,
        )
    }

    #[test]
    fn zero_boundary_gives_zero_minimizer() {
        let (data, g) = regularized_data_1d(65, 2.0, 0.1);
        let boundary = ScalarField::zeros(&g);
        let sol = minimize_jeps(&data, &boundary, &boundary, &SolveConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.u.max(), 0.0);
        assert_eq!(sol.u.min(), 0.0);
    }

    #[test]
    fn regularized_profile_satisfies_first_integral() {
        let (data, g) = regularized_data_1d(513, 2.0, 0.1);
        let boundary = ramp_boundary(&g, 1.0);
        let cfg = SolveConfig {
            tol_grad: 1e-8,
            ..SolveConfig::default()
        };
        let sol = minimize_jeps(&data, &boundary, &boundary, &cfg).unwrap();
        assert!(sol.converged, "residual {}", sol.final_grad_norm);
        let init_energy = crate::energy::energy_jeps(&boundary, &data).unwrap().total;
        assert!(sol.energy.total <= init_energy + 1e-12);
        let beta = data.beta().unwrap();
        let eps = data.eps().unwrap();
        let h = g.spacing()[0];
        let mut worst = 0.0_f64;
        for c in 1..g.cells_along(0) - 1 {
            let du = (sol.u.at([c + 1, 0]) - sol.u.at([c, 0])) / h;
            let uc = 0.5 * (sol.u.at([c + 1, 0]) + sol.u.at([c, 0]));
            let e = 0.5 * du * du - beta.primitive(uc / eps);
            worst = worst.max(e.abs());
        }
        assert!(worst <= 1e-3, "first-integral defect {worst}");
    }

    #[test]
    fn continuation_slab_reaches_limit_slope() {
        let n = 513;
        let g = Grid::new_1d(0.0, 1.0, n).unwrap();
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let beta = BetaProfile::quadratic(1.0).unwrap();
        let data = ProblemData::regularized(p, beta, 0.4, ScalarField::zeros(&g)).unwrap();
        let boundary = ramp_boundary(&g, 0.8);
        let sched = ContinuationSchedule::default_for(&boundary).unwrap();
        assert!((sched.eps_list[0] - 0.4).abs() <= 1e-12);
        let eps_final = *sched.eps_list.last().unwrap();
        assert!((eps_final - 4.0 / (n as f64 - 1.0)).abs() <= 1e-15);
        let cfg = SolveConfig {
            tol_grad: 1e-7,
            ..SolveConfig::default()
        };
        let (stages, final_u) = minimize_j_continuation(&data, &boundary, &sched, &cfg).unwrap();
        assert_eq!(stages.len(), sched.eps_list.len());
        // The sharp energy settles monotonically along the ladder: the total
        // falls (the threshold cliff shrinks with ε) while the interface term
        // climbs toward the limit measure from below (each halved threshold
        // reveals more of the limit wedge).
        for w in stages.windows(2) {
            assert!(
                w[1].sharp_energy.total <= w[0].sharp_energy.total + 1e-9,
                "sharp total rose: {} -> {}",
                w[0].sharp_energy.total,
                w[1].sharp_energy.total
            );
            assert!(
                w[1].sharp_energy.interface_term >= w[0].sharp_energy.interface_term - 1e-9,
                "interface term fell: {} -> {}",
                w[0].sharp_energy.interface_term,
                w[1].sharp_energy.interface_term
            );
        }
        // Limit values for the slab: |u'| = √2 on a wedge of width 0.8/√2.
        let j_limit = 2.0 * 0.8 / std::f64::consts::SQRT_2;
        let last = stages.last().unwrap();
        assert!(
            (last.sharp_energy.total - j_limit).abs() <= 0.02 * j_limit,
            "final sharp J {} vs limit {j_limit}",
            last.sharp_energy.total
        );
        // Slope one cell inside the positive phase vs the limit value √2.
        let h = g.spacing()[0];
        let first_pos = (0..n).find(|&i| final_u.at([i, 0]) > 0.0).unwrap();
        let slope = (final_u.at([first_pos + 2, 0]) - final_u.at([first_pos + 1, 0])) / h;
        let target = std::f64::consts::SQRT_2;
        assert!(
            (slope - target).abs() <= 0.05 * target,
            "edge slope {slope} vs {target}"
        );
        // Positivity set at the final level stabilizes between the last stages.
        let prev = &stages[stages.len() - 2].result.u;
        let last = &stages[stages.len() - 1].result.u;
        let symdiff = (0..n)
            .filter(|&i| (prev.at([i, 0]) > eps_final) != (last.at([i, 0]) > eps_final))
            .count();
        assert!(symdiff <= 2, "positivity sets differ on {symdiff} nodes");
    }

    #[test]
    fn continuation_with_zero_boundary_stays_zero() {
        let (data, g) = regularized_data_1d(65, 2.0, 0.25);
        let boundary = ScalarField::zeros(&g);
        let sched = ContinuationSchedule::default_for(&boundary).unwrap();
        assert_eq!(sched.eps_list.len(), 1);
        let (stages, final_u) =
            minimize_j_continuation(&data, &boundary, &sched, &SolveConfig::default()).unwrap();
        assert_eq!(stages.len(), 1);
        assert_eq!(final_u.max(), 0.0);
    }

    #[test]
    fn schedule_construction_validates() {
        assert!(ContinuationSchedule::new(vec![], true).is_err());
        assert!(ContinuationSchedule::new(vec![0.5, 0.5], true).is_err());
        assert!(ContinuationSchedule::new(vec![0.5, -0.1], true).is_err());
        let s = ContinuationSchedule::geometric(0.8, 0.1).unwrap();
        assert_eq!(s.eps_list, vec![0.8, 0.4, 0.2, 0.1]);
        assert!(ContinuationSchedule::geometric(0.05, 0.1).is_err());
    }

    #[test]
    fn trace_rows_have_nonincreasing_energy() {
        let (data, g) = regularized_data_1d(129, 2.0, 0.1);
        let boundary = ramp_boundary(&g, 1.0);
        let mut rows: Vec<IterTrace> = Vec::new();
        let cfg = SolveConfig {
            tol_grad: 1e-8,
            ..SolveConfig::default()
        };
        let sol =
            minimize_jeps_traced(&data, &boundary, &boundary, &cfg, &mut |r| rows.push(r.clone()))
                .unwrap();
        assert!(sol.converged);
        assert!(rows.len() >= 2);
        for w in rows.windows(2) {
            assert!(
                w[1].energy.total <= w[0].energy.total,
                "trace energy rose: {} -> {}",
                w[0].energy.total,
                w[1].energy.total
            );
        }
        assert_eq!(rows[0].iter, 0);
    }

    #[test]
    fn comparison_principle_on_ordered_boundaries() {
        let (data, g) = dirichlet_data_1d(65, 2.5, 0.0);
        let cfg = SolveConfig {
            tol_grad: 1e-10,
            ..SolveConfig::default()
        };
        let lo = ramp_boundary(&g, 1.0);
        let hi = ScalarField::from_fn(&g, |x| 0.1 + x[0]).unwrap();
        assert!(check_comparison(&data, &lo, &hi, &cfg).unwrap());
        assert!(check_comparison(&data, &lo, &lo, &cfg).unwrap());
        assert!(check_comparison(&data, &hi, &lo, &cfg).is_err());
    }

    #[test]
    fn comparison_principle_2d_variable_exponent() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [17, 17]).unwrap();
        let p =
            ExponentField::new(ScalarField::from_fn(&g, |x| 2.0 + 0.5 * x[0]).unwrap()).unwrap();
        let lam = ScalarField::from_fn(&g, |_| 1.0).unwrap();
        let data = ProblemData::sharp(p, lam, ScalarField::zeros(&g)).unwrap();
        let cfg = SolveConfig {
            tol_grad: 1e-9,
            ..SolveConfig::default()
        };
        let lo = ScalarField::from_fn(&g, |x| x[0] * (1.0 - 0.3 * x[1])).unwrap();
        let hi = ScalarField::from_fn(&g, |x| 0.05 + x[0] * (1.0 - 0.3 * x[1])).unwrap();
        assert!(check_comparison(&data, &lo, &hi, &cfg).unwrap());
    }

    #[test]
    fn harnack_diagnostic_known_fields() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [65, 65]).unwrap();
        let c = ScalarField::from_fn(&g, |_| 2.0).unwrap();
        let (sup, inf, ratio) = check_harnack(&c, [0.5, 0.5], 0.25).unwrap();
        assert_eq!((sup, inf), (2.0, 2.0));
        assert!((ratio - 2.0 / 2.25).abs() <= 1e-14);
        assert!(ratio < 1.0);
        let lin = ScalarField::from_fn(&g, |x| x[0] + 2.0).unwrap();
        let (_, _, r1) = check_harnack(&lin, [0.5, 0.5], 0.3).unwrap();
        let g2 = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [129, 129]).unwrap();
        let lin2 = ScalarField::from_fn(&g2, |x| x[0] + 2.0).unwrap();
        let (_, _, r2) = check_harnack(&lin2, [0.5, 0.5], 0.3).unwrap();
        assert!((r1 - r2).abs() <= 0.02 * r1, "ratios {r1} vs {r2}");
        assert!(check_harnack(&lin, [0.05, 0.5], 0.3).is_err());
        let neg = ScalarField::from_fn(&g, |x| x[0] - 0.5).unwrap();
        assert!(check_harnack(&neg, [0.5, 0.5], 0.25).is_err());
    }

    #[test]
    fn euler_lagrange_residuals_on_converged_profile() {
        let (data, g) = regularized_data_1d(257, 2.0, 0.05);
        let boundary = ramp_boundary(&g, 1.0);
        let cfg = SolveConfig {
            tol_grad: 1e-8,
            ..SolveConfig::default()
        };
        let sol = minimize_jeps(&data, &boundary, &boundary, &cfg).unwrap();
        assert!(sol.converged);
        let hats: Vec<[usize; 2]> = (1..g.n()[0] - 1).step_by(3).map(|i| [i, 0]).collect();
        let r = check_euler_lagrange(&sol.u, &data, cfg.delta, 0.05, &hats).unwrap();
        assert!(r.equality_nodes > 50, "only {} nodes qualified", r.equality_nodes);
        assert!(
            r.equality_sup <= cfg.tol_grad,
            "equality residual {} above tolerance",
            r.equality_sup
        );
        assert!(
            r.onesided_max <= cfg.tol_grad,
            "one-sided residual {} above tolerance",
            r.onesided_max
        );
        assert!(check_euler_lagrange(&sol.u, &data, cfg.delta, 0.05, &[[0, 0]]).is_err());
    }
}
