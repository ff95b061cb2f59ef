//! `fbflow continuation`: run the ε-ladder and tabulate, per stage, the
//! regularized and sharp energies, the interface location, and the measured
//! edge slope against its closed-form limit. Exit 0 iff every stage converged
//! and the slope error is nonincreasing over the last three stages (each may
//! exceed its predecessor by at most the slack).

use std::fs;
use std::io::Write;

use fbflow_core::{energy_j, lambda_star, minimize_jeps, threshold_field, ScalarField};

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

const STUDY_SLACK: f64 = 0.10;

struct StageStats {
    eps: f64,
    j_eps: f64,
    sharp_j: f64,
    fb_count: usize,
    fb_location: f64,
    edge_slope: f64,
    slope_error: f64,
    converged: bool,
}

/// Measured edge slope of a stage solution: on the midline section, secant
/// from the interpolated ε-crossing to the first node at or above half the
/// section maximum, walking toward the positive phase.
fn section_slope(u: &ScalarField, eps: f64, near_x: f64) -> Option<(f64, f64)> {
    let g = u.grid();
    let j = if g.dim() == 2 { g.n()[1] / 2 } else { 0 };
    let n = g.n()[0];
    let h = g.spacing()[0];
    let x0 = g.origin()[0];
    let vals: Vec<f64> = (0..n).map(|i| u.at([i, j])).collect();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n - 1 {
        let (a, b) = (vals[i], vals[i + 1]);
        if (a <= eps) != (b <= eps) {
            let t = (eps - a) / (b - a);
            let x = x0 + (i as f64 + t) * h;
            if best.is_none_or(|(_, bx)| (x - near_x).abs() < (bx - near_x).abs()) {
                best = Some((i, x));
            }
        }
    }
    let (i_cross, x_cross) = best?;
    let half = 0.5 * vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rightward = vals[i_cross + 1] > vals[i_cross];
    let probe = if rightward {
        (i_cross + 1..n).find(|&i| vals[i] >= half)
    } else {
        (0..=i_cross).rev().find(|&i| vals[i] >= half)
    }?;
    let x_probe = x0 + probe as f64 * h;
    let dist = (x_probe - x_cross).abs();
    if dist == 0.0 {
        return None;
    }
    Some((x_cross, vals[probe] / dist))
}

fn median_x(fb: &[[f64; 2]]) -> f64 {
    let mut xs: Vec<f64> = fb.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<u8, CliError> {
    if cfg.mode != Mode::SharpContinuation {
        return Err(CliError::Config(
            "continuation study wants `mode = sharp-continuation`".into(),
        ));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let data = cfg.problem_data()?;
    let sched = cfg.schedule()?;
    let mut stage_data = data.clone();
    let mut current = cfg.boundary.clone();
    let mut stats: Vec<StageStats> = Vec::new();

    for &eps in &sched.eps_list {
        stage_data.set_eps(eps)?;
        let init = if sched.warm_start {
            current.clone()
        } else {
            cfg.boundary.clone()
        };
        let res = minimize_jeps(&stage_data, &cfg.boundary, &init, &cfg.solver)?;
        current = res.u.clone();

        let sharp = energy_j(&threshold_field(&res.u, eps), &stage_data, 0.0)?;
        let fb = fbflow_core::extract_fb(&res.u, eps)?;
        let (fb_count, fb_location) = (fb.len(), if fb.is_empty() { f64::NAN } else { median_x(&fb) });
        let (edge_slope, slope_error) = match section_slope(&res.u, eps, fb_location) {
            Some((x_cross, slope)) => {
                let y = if cfg.grid.dim() == 2 {
                    cfg.grid.origin()[1] + 0.5 * cfg.grid.extent()[1]
                } else {
                    0.0
                };
                let p_val = data.exponents().field().sample([x_cross, y])?;
                let lam_val = data.lambda().sample([x_cross, y])?;
                let target = lambda_star(p_val, lam_val)?;
                (slope, (slope - target).abs() / target)
            }
            None => (f64::NAN, f64::NAN),
        };
        println!(
            "eps {eps:.6e}: J_eps {:.10e}, sharp J {:.10e}, fb {} point(s) at {:.6}, slope {:.6} (err {:.3}%){}",
            res.energy.total,
            sharp.total,
            fb_count,
            fb_location,
            edge_slope,
            100.0 * slope_error,
            if res.converged { "" } else { " NOT CONVERGED" }
        );
        stats.push(StageStats {
            eps,
            j_eps: res.energy.total,
            sharp_j: sharp.total,
            fb_count,
            fb_location,
            edge_slope,
            slope_error,
            converged: res.converged,
        });
        if !res.converged {
            break;
        }
    }

    let csv_path = cfg.out_dir.join("study.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    writeln!(w, "eps,j_eps,sharp_j,fb_count,fb_location,edge_slope,slope_error")?;
    for s in &stats {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
            s.eps, s.j_eps, s.sharp_j, s.fb_count, s.fb_location, s.edge_slope, s.slope_error
        )?;
    }
    w.flush()?;
    let last_eps = stats.last().expect("schedule is nonempty").eps;
    threshold_field(&current, last_eps).write_field(&cfg.out_dir.join("u.field"))?;
    println!("wrote {}/{{study.csv, u.field}}", cfg.out_dir.display());

    if stats.iter().any(|s| !s.converged) {
        return Ok(2);
    }
    let errs: Vec<f64> = stats.iter().map(|s| s.slope_error).collect();
    let k = errs.len();
    let tail_ok = k < 3
        || (errs[k - 2] <= errs[k - 3] * (1.0 + STUDY_SLACK)
            && errs[k - 1] <= errs[k - 2] * (1.0 + STUDY_SLACK));
    Ok(if tail_ok { 0 } else { 2 })
}
