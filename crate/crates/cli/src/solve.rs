//! `fbflow solve`: minimize the configured energy and persist the solution
//! field, an energy report, and the accepted-iterate trace. Non-convergence
//! still writes every artifact and exits 2.

use std::fs;
use std::io::Write;
use std::path::Path;

use fbflow_core::{
    energy_j, minimize_jeps_traced, threshold_field, EnergyBreakdown, IterTrace, ScalarField,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::{write_json, CliError};

#[derive(Serialize)]
pub struct StageRow {
    pub eps: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub j_eps: f64,
    pub sharp_j: f64,
}

#[derive(Serialize)]
struct SolveReport {
    mode: &'static str,
    converged: bool,
    clamp_nonnegative: bool,
    iterations_total: usize,
    final_grad_norm: f64,
    /// Regularized energy of the last iterate at its ε.
    energy_jeps: EnergyBreakdown,
    /// Continuation only: sharp energy of the raw final iterate, interface
    /// counted above the final ε level (the kept values still carry that
    /// offset, so this is the faithful estimate).
    sharp_at_eps_level: Option<EnergyBreakdown>,
    /// Continuation only: sharp energy after zeroing values below the final ε.
    sharp_hard_cut: Option<EnergyBreakdown>,
    stages: Vec<StageRow>,
}

struct TraceRow {
    stage: usize,
    iter: usize,
    energy: EnergyBreakdown,
    grad_norm: f64,
    step: f64,
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "stage,iter,total,gradient_term,interface_term,forcing_term,grad_norm,step"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.stage,
            r.iter,
            r.energy.total,
            r.energy.gradient_term,
            r.energy.interface_term,
            r.energy.forcing_term,
            r.grad_norm,
            r.step
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<u8, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let data = cfg.problem_data()?;
    let mut rows: Vec<TraceRow> = Vec::new();

    let (u_out, report) = match cfg.mode {
        Mode::Sharp => {
            return Err(CliError::Config(
                "solve wants `mode = regularized` or `mode = sharp-continuation`; \
                 sharp mode has no minimization routine"
                    .into(),
            ))
        }
        Mode::Regularized => {
            let mut sink = |t: &IterTrace| {
                rows.push(TraceRow {
                    stage: 0,
                    iter: t.iter,
                    energy: t.energy,
                    grad_norm: t.grad_norm,
                    step: t.step,
                })
            };
            let res =
                minimize_jeps_traced(&data, &cfg.boundary, &cfg.boundary, &cfg.solver, &mut sink)?;
            println!(
                "solve: eps {:.6e}, {} iterations, grad {:.3e}, J_eps {:.12e}{}",
                cfg.eps.expect("validated at load"),
                res.iterations,
                res.final_grad_norm,
                res.energy.total,
                if res.converged { "" } else { " (NOT CONVERGED)" }
            );
            let report = SolveReport {
                mode: cfg.mode.name(),
                converged: res.converged,
                clamp_nonnegative: cfg.solver.clamp_nonnegative,
                iterations_total: res.iterations,
                final_grad_norm: res.final_grad_norm,
                energy_jeps: res.energy,
                sharp_at_eps_level: None,
                sharp_hard_cut: None,
                stages: Vec::new(),
            };
            (res.u, report)
        }
        Mode::SharpContinuation => {
            let sched = cfg.schedule()?;
            let mut stage_data = data.clone();
            let mut current = cfg.boundary.clone();
            let mut stages: Vec<StageRow> = Vec::new();
            let mut iterations_total = 0;
            let mut last_energy = EnergyBreakdown::from_parts(0.0, 0.0, 0.0);
            let mut last_grad = f64::NAN;
            let mut all_converged = true;
            for (s, &eps) in sched.eps_list.iter().enumerate() {
                stage_data.set_eps(eps)?;
                let init: ScalarField = if sched.warm_start {
                    current.clone()
                } else {
                    cfg.boundary.clone()
                };
                let mut sink = |t: &IterTrace| {
                    rows.push(TraceRow {
                        stage: s,
                        iter: t.iter,
                        energy: t.energy,
                        grad_norm: t.grad_norm,
                        step: t.step,
                    })
                };
                let res =
                    minimize_jeps_traced(&stage_data, &cfg.boundary, &init, &cfg.solver, &mut sink)?;
                iterations_total += res.iterations;
                let sharp = energy_j(&threshold_field(&res.u, eps), &stage_data, 0.0)?;
                println!(
                    "stage {s}: eps {:.6e}, {} iterations, grad {:.3e}, J_eps {:.12e}, sharp J {:.12e}{}",
                    eps,
                    res.iterations,
                    res.final_grad_norm,
                    res.energy.total,
                    sharp.total,
                    if res.converged { "" } else { " (NOT CONVERGED)" }
                );
                stages.push(StageRow {
                    eps,
                    iterations: res.iterations,
                    final_grad_norm: res.final_grad_norm,
                    converged: res.converged,
                    j_eps: res.energy.total,
                    sharp_j: sharp.total,
                });
                current = res.u.clone();
                last_energy = res.energy;
                last_grad = res.final_grad_norm;
                if !res.converged {
                    all_converged = false;
                    break;
                }
            }
            let eps_reached = stages.last().expect("schedule is nonempty").eps;
            let final_u = threshold_field(&current, eps_reached);
            let report = SolveReport {
                mode: cfg.mode.name(),
                converged: all_converged,
                clamp_nonnegative: cfg.solver.clamp_nonnegative,
                iterations_total,
                final_grad_norm: last_grad,
                energy_jeps: last_energy,
                sharp_at_eps_level: Some(energy_j(&current, &stage_data, eps_reached)?),
                sharp_hard_cut: Some(energy_j(&final_u, &stage_data, 0.0)?),
                stages,
            };
            (final_u, report)
        }
    };

    u_out.write_field(&cfg.out_dir.join("u.field"))?;
    write_trace(&cfg.out_dir.join("trace.csv"), &rows)?;
    write_json(&cfg.out_dir.join("energy.json"), &report)?;
    println!(
        "wrote {}/{{u.field, energy.json, trace.csv}}",
        cfg.out_dir.display()
    );
    Ok(if report.converged { 0 } else { 2 })
}
