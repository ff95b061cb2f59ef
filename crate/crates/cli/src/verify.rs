//! `fbflow verify`: check a written solution field against the configured
//! interface conditions. The interface is the set of threshold crossings;
//! every scan runs on the excess above the threshold, so a field produced by
//! continuation (support values >= its final ε) is measured without the
//! ε-level head start. Exit 0 iff every configured tolerance passes, 2 on a
//! failed check, 3 when there is no interface to verify.

use std::fs;
use std::path::Path;

use fbflow_core::{
    blowup_fit, check_euler_lagrange, density_scan, extract_fb, fb_gradient_trace, growth_scan,
    lambda_star, nondegeneracy_scan, ElResiduals, FBReport, Grid, GrowthConstants, PointRecord,
    ScalarField, ScanConstant,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{write_json, CliError};

#[derive(Serialize)]
struct Checks {
    slope: bool,
    growth: bool,
    nondegeneracy: bool,
    density: bool,
    blowup: bool,
    equation: bool,
}

#[derive(Serialize)]
struct BlowupSummary {
    worst_rel_err: f64,
    worst_residual: f64,
    radius: f64,
    points: usize,
}

#[derive(Serialize)]
struct VerifyReport {
    threshold: f64,
    no_free_boundary: bool,
    fb: Option<FBReport>,
    equation: Option<ElResiduals>,
    blowup: Option<BlowupSummary>,
    density_range: Option<[f64; 2]>,
    lambda_star_range: Option<[f64; 2]>,
    checks: Option<Checks>,
    pass: bool,
}

fn snap_to_node(g: &Grid, pt: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for a in 0..g.dim() {
        let i = ((pt[a] - g.origin()[a]) / g.spacing()[a])
            .round()
            .clamp(0.0, (g.n()[a] - 1) as f64);
        out[a] = g.origin()[a] + i * g.spacing()[a];
    }
    out
}

fn check_line(name: &str, pass: bool, detail: &str) {
    println!("{name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

pub fn run(cfg: &ExperimentConfig, field_path: &Path) -> Result<u8, CliError> {
    let u = ScalarField::read_field(field_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", field_path.display())))?;
    if u.grid() != &cfg.grid {
        return Err(CliError::Config(format!(
            "{}: field grid (n = {:?}) does not match the [grid] section (n = {:?})",
            field_path.display(),
            u.grid().n(),
            cfg.grid.n()
        )));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let data = cfg.problem_data()?;
    let scan = &cfg.scan;
    let thr = scan.threshold;
    let report_path = cfg.out_dir.join("report.json");

    let fb = extract_fb(&u, thr)?;
    if fb.is_empty() {
        write_json(
            &report_path,
            &VerifyReport {
                threshold: thr,
                no_free_boundary: true,
                fb: None,
                equation: None,
                blowup: None,
                density_range: None,
                lambda_star_range: None,
                checks: None,
                pass: false,
            },
        )?;
        println!("no crossings of u = {thr}: nothing to verify");
        return Ok(3);
    }

    let g = u.grid();
    let v = if thr > 0.0 {
        ScalarField::from_values(g, u.values().iter().map(|w| (w - thr).max(0.0)).collect())?
    } else {
        u.clone()
    };

    let blowup_radius = scan
        .radii
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let take = fb.len().min(scan.max_points);
    let mut per_point: Vec<PointRecord> = Vec::new();
    let mut slope_worst = 0.0_f64;
    let mut c_max = f64::NEG_INFINITY;
    let mut c_min = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut den_range = [f64::INFINITY, f64::NEG_INFINITY];
    let mut ls_range = [f64::INFINITY, f64::NEG_INFINITY];
    let mut bl = BlowupSummary {
        worst_rel_err: 0.0,
        worst_residual: 0.0,
        radius: blowup_radius,
        points: 0,
    };
    let mut trimmed = false;
    for s in 0..take {
        let pt = fb[s * fb.len() / take];
        let p_val = data.exponents().field().sample(pt)?;
        let lam_val = data.lambda().sample(pt)?;
        let target = lambda_star(p_val, lam_val)?;
        ls_range = [ls_range[0].min(target), ls_range[1].max(target)];
        if let Ok(trace) = fb_gradient_trace(&v, pt, scan.n_samples) {
            slope_worst = slope_worst.max((trace.slope - target).abs() / target);
            per_point.push(PointRecord {
                point: pt,
                measured_slope: trace.slope,
                target_lambda_star: target,
                normal: trace.normal,
                fit_residual: trace.fit_residual,
            });
        }
        let sn = snap_to_node(g, pt);
        if let Ok(gs) = growth_scan(&v, sn, &scan.radii) {
            c_max = c_max.max(gs.c_max);
            trimmed |= gs.trimmed;
        }
        if let Ok(ns) = nondegeneracy_scan(&v, sn, &scan.radii) {
            c_min = c_min.min(ns.c_min);
            trimmed |= ns.trimmed;
        }
        if let Ok(ds) = density_scan(&v, sn, &scan.density_radii, 0.0) {
            gap = gap.min(ds.gap);
            for row in &ds.rows {
                den_range = [den_range[0].min(row[1]), den_range[1].max(row[1])];
            }
            trimmed |= ds.trimmed;
        }
        if let Ok(bf) = blowup_fit(&v, sn, blowup_radius) {
            bl.worst_rel_err = bl.worst_rel_err.max((bf.alpha - target).abs() / target);
            bl.worst_residual = bl.worst_residual.max(bf.residual);
            bl.points += 1;
        }
    }
    if !(c_max.is_finite() && c_min.is_finite() && den_range[0].is_finite() && bl.points > 0) {
        return Err(CliError::Core(fbflow_core::Error::Inconclusive(
            "no interface point admits the configured radius ladders".into(),
        )));
    }

    // The one-sided minimality test belongs on the closed zero phase, where
    // equality is not available; interior equality holds wherever the whole
    // stencil is positive.
    let hats: Vec<[usize; 2]> = g
        .nodes()
        .filter(|&idx| !g.is_boundary_node(idx) && u.at(idx) <= thr)
        .collect();
    let el = check_euler_lagrange(&u, &data, cfg.solver.delta, thr, &hats)?;

    let checks = Checks {
        slope: !per_point.is_empty() && slope_worst <= scan.slope_tol,
        growth: c_max >= scan.growth_window[0] * ls_range[0]
            && c_max <= scan.growth_window[1] * ls_range[1],
        nondegeneracy: c_min >= scan.nondeg_min * ls_range[0],
        density: den_range[0] >= scan.density_window[0] && den_range[1] <= scan.density_window[1],
        blowup: bl.worst_rel_err <= scan.blowup_tol && bl.worst_residual <= scan.blowup_residual_max,
        equation: el.equality_nodes > 0
            && el.equality_sup <= scan.tol_equality
            && el.onesided_max <= scan.tol_equality,
    };
    check_line(
        "slope",
        checks.slope,
        &format!(
            "{} traced points, worst rel err {:.3e}, tol {:.3e}",
            per_point.len(),
            slope_worst,
            scan.slope_tol
        ),
    );
    check_line(
        "growth",
        checks.growth,
        &format!(
            "c_max {c_max:.6} vs window [{:.6}, {:.6}]",
            scan.growth_window[0] * ls_range[0],
            scan.growth_window[1] * ls_range[1]
        ),
    );
    check_line(
        "nondegeneracy",
        checks.nondegeneracy,
        &format!("c_min {c_min:.6} vs floor {:.6}", scan.nondeg_min * ls_range[0]),
    );
    check_line(
        "density",
        checks.density,
        &format!(
            "fractions [{:.4}, {:.4}] vs window [{}, {}]",
            den_range[0], den_range[1], scan.density_window[0], scan.density_window[1]
        ),
    );
    check_line(
        "blowup",
        checks.blowup,
        &format!(
            "{} points at r = {blowup_radius:.4}: worst rel err {:.3e}, worst residual {:.3e}",
            bl.points, bl.worst_rel_err, bl.worst_residual
        ),
    );
    check_line(
        "equation",
        checks.equation,
        &format!(
            "equality {:.3e} over {} nodes, one-sided {:.3e} over {} hats, tol {:.3e}",
            el.equality_sup,
            el.equality_nodes,
            el.onesided_max,
            hats.len(),
            scan.tol_equality
        ),
    );

    let pass = checks.slope
        && checks.growth
        && checks.nondegeneracy
        && checks.density
        && checks.blowup
        && checks.equation;
    let fb_report = FBReport {
        fb_points: fb,
        per_point,
        growth_constants: GrowthConstants {
            c_max: ScanConstant {
                value: c_max,
                radii: scan.radii.clone(),
                trimmed,
            },
            c_min: ScanConstant {
                value: c_min,
                radii: scan.radii.clone(),
                trimmed,
            },
            density_gap: ScanConstant {
                value: gap,
                radii: scan.density_radii.clone(),
                trimmed,
            },
        },
    };
    write_json(
        &report_path,
        &VerifyReport {
            threshold: thr,
            no_free_boundary: false,
            fb: Some(fb_report),
            equation: Some(el),
            blowup: Some(bl),
            density_range: Some(den_range),
            lambda_star_range: Some(ls_range),
            checks: Some(checks),
            pass,
        },
    )?;
    println!(
        "verdict: {} (report at {})",
        if pass { "PASS" } else { "FAIL" },
        report_path.display()
    );
    Ok(if pass { 0 } else { 2 })
}
