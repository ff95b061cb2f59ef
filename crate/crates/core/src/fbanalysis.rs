//! Free-boundary extraction and quantitative interface diagnostics: the
//! slope target λ*, interface crossings, gradient traces toward the free
//! boundary, growth / nondegeneracy / density scans over radius ladders,
//! blow-up fits against the planar profile, the tangent-ball condition, and
//! the half-plane development coefficient.

use serde::Serialize;

use crate::energy::ProblemData;
use crate::error::{Error, Result};
use crate::grid::{ball_nodes, cell_gradient_unchecked, Grid, ScalarField};

/// Slope of the planar free-boundary profile: λ*(p, λ) = (p/(p−1)·λ)^{1/p}.
/// Satisfies the defining identity λ*^p·(p−1)/p = λ.
pub fn lambda_star(p_val: f64, lam_val: f64) -> Result<f64> {
    if !(p_val > 1.0) || !p_val.is_finite() {
        return Err(Error::contract(format!(
            "slope target needs p > 1, got {p_val}"
        )));
    }
    if !(lam_val > 0.0) || !lam_val.is_finite() {
        return Err(Error::contract(format!(
            "slope target needs lambda > 0, got {lam_val}"
        )));
    }
    let base = p_val / (p_val - 1.0) * lam_val;
    Ok(if p_val == 2.0 {
        base.sqrt()
    } else {
        base.powf(1.0 / p_val)
    })
}

/// Linear-interpolated crossings of u = threshold on grid edges with one
/// endpoint above and one at/below, deduplicated. Empty when u stays on one
/// side of the threshold everywhere.
pub fn extract_fb(u: &ScalarField, threshold: f64) -> Result<Vec<[f64; 2]>> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::contract(format!(
            "threshold must be a finite nonnegative real, got {threshold}"
        )));
    }
    let g = u.grid();
    let [n0, n1] = g.n();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut push_edge = |a_idx: [usize; 2], b_idx: [usize; 2]| {
        let ua = u.at(a_idx);
        let ub = u.at(b_idx);
        let (hi_idx, hi, lo_idx, lo) = if ua > threshold && ub <= threshold {
            (a_idx, ua, b_idx, ub)
        } else if ub > threshold && ua <= threshold {
            (b_idx, ub, a_idx, ua)
        } else {
            return;
        };
        let t = (threshold - lo) / (hi - lo);
        let xl = g.node_pos(lo_idx);
        let xh = g.node_pos(hi_idx);
        pts.push([xl[0] + t * (xh[0] - xl[0]), xl[1] + t * (xh[1] - xl[1])]);
    };
    if g.dim() == 1 {
        for i in 0..n0 - 1 {
            push_edge([i, 0], [i + 1, 0]);
        }
    } else {
        for i in 0..n0 {
            for j in 0..n1 {
                if i + 1 < n0 {
                    push_edge([i, j], [i + 1, j]);
                }
                if j + 1 < n1 {
                    push_edge([i, j], [i, j + 1]);
                }
            }
        }
    }
    pts.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite positions"));
    pts.dedup();
    Ok(pts)
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Mean positive-phase gradient direction near `x0`: the inward unit normal
/// proxy (u grows into its positivity set). Cells are counted when their
/// center lies within `radius` of `x0` and carries a positive value.
fn inward_normal(u: &ScalarField, x0: [f64; 2], radius: f64) -> Result<[f64; 2]> {
    let g = u.grid();
    let h = g.spacing();
    let mut acc = [0.0_f64; 2];
    let mut count = 0usize;
    let cell_range = |axis: usize| -> (usize, usize) {
        let cells = g.cells_along(axis);
        let lo = ((x0[axis] - radius - g.origin()[axis]) / h[axis]).floor().max(0.0) as usize;
        let hi = (((x0[axis] + radius - g.origin()[axis]) / h[axis]).ceil().max(0.0) as usize)
            .min(cells.saturating_sub(1));
        (lo.min(cells.saturating_sub(1)), hi)
    };
    let (lo0, hi0) = cell_range(0);
    let (lo1, hi1) = if g.dim() == 2 { cell_range(1) } else { (0, 0) };
    let r2 = radius * radius;
    for c0 in lo0..=hi0 {
        for c1 in lo1..=hi1 {
            let cell = [c0, c1];
            let ctr = g.cell_center(cell);
            let d = [ctr[0] - x0[0], ctr[1] - x0[1]];
            if d[0] * d[0] + d[1] * d[1] > r2 {
                continue;
            }
            if u.cell_center_value(cell) <= 0.0 {
                continue;
            }
            let grad = cell_gradient_unchecked(u, cell);
            acc[0] += grad[0];
            acc[1] += grad[1];
            count += 1;
        }
    }
    let len = norm2(acc);
    if count == 0 || !(len > 1e-14 * count as f64) {
        return Err(Error::contract(
            "positive phase empty near the point: no usable gradient direction",
        ));
    }
    Ok([acc[0] / len, acc[1] / len])
}

/// Gradient trace toward a free-boundary point: |∇u| sampled at cell centers
/// along the inward normal, an affine fit in distance, and the extrapolated
/// slope at distance zero.
#[derive(Debug, Clone, Serialize)]
pub struct GradientTrace {
    /// Extrapolated |∇u| at the free boundary (the measured slope).
    pub slope: f64,
    /// RMS misfit of the affine fit over the samples.
    pub fit_residual: f64,
    /// Inward unit normal used for the sampling ray.
    pub normal: [f64; 2],
    /// (distance, |∇u|) sample rows.
    pub samples: Vec<[f64; 2]>,
}

/// Sample |∇u| at positive-phase cell centers at distances ≈ {2h, 4h, …,
/// 2·n_samples·h} along the inward normal from `fb_point`, fit affine in the
/// (projected) distance, and report the extrapolated value at distance zero.
pub fn fb_gradient_trace(
    u: &ScalarField,
    fb_point: [f64; 2],
    n_samples: usize,
) -> Result<GradientTrace> {
    if n_samples < 2 {
        return Err(Error::contract(format!(
            "affine extrapolation needs at least 2 samples, got {n_samples}"
        )));
    }
    let g = u.grid();
    let h = g.h_max();
    let normal = inward_normal(u, fb_point, (2 * n_samples + 2) as f64 * h)?;
    let mut samples = Vec::with_capacity(n_samples);
    for k in 1..=n_samples {
        let d_nominal = 2.0 * k as f64 * h;
        let q = [
            fb_point[0] + d_nominal * normal[0],
            fb_point[1] + d_nominal * normal[1],
        ];
        let cell = g.cell_containing(q).ok_or_else(|| {
            Error::contract(format!(
                "insufficient positive-phase room: sample {k} at distance {d_nominal} exits the grid"
            ))
        })?;
        if u.cell_center_value(cell) <= 0.0 {
            return Err(Error::contract(format!(
                "insufficient positive-phase room: sample {k} at distance {d_nominal} leaves the positive phase"
            )));
        }
        let ctr = g.cell_center(cell);
        let d = (ctr[0] - fb_point[0]) * normal[0] + (ctr[1] - fb_point[1]) * normal[1];
        let grad = cell_gradient_unchecked(u, cell);
        samples.push([d, norm2(grad)]);
    }
    let (slope, fit_residual) = affine_intercept(&samples);
    Ok(GradientTrace {
        slope,
        fit_residual,
        normal,
        samples,
    })
}

/// Least-squares affine fit y ≈ a + b·x over rows [x, y]; returns (a, rms).
fn affine_intercept(rows: &[[f64; 2]]) -> (f64, f64) {
    let n = rows.len() as f64;
    let sx: f64 = rows.iter().map(|r| r[0]).sum();
    let sy: f64 = rows.iter().map(|r| r[1]).sum();
    let sxx: f64 = rows.iter().map(|r| r[0] * r[0]).sum();
    let sxy: f64 = rows.iter().map(|r| r[0] * r[1]).sum();
    let det = n * sxx - sx * sx;
    let (a, b) = if det.abs() > 0.0 {
        (
            (sy * sxx - sx * sxy) / det,
            (n * sxy - sx * sy) / det,
        )
    } else {
        (sy / n, 0.0)
    };
    let mut ss = 0.0;
    for r in rows {
        let e = r[1] - (a + b * r[0]);
        ss += e * e;
    }
    (a, (ss / n).sqrt())
}

/// Ball B_r(x0) fits inside the grid box (tiny slack for rounding).
fn ball_fits(g: &Grid, x0: [f64; 2], r: f64) -> bool {
    for a in 0..g.dim() {
        if x0[a] - r < g.origin()[a] - 1e-12 || x0[a] + r > g.origin()[a] + g.extent()[a] + 1e-12 {
            return false;
        }
    }
    true
}

/// Validate a radius ladder against the grid: keeps fitting radii in caller
/// order, flags whether any were trimmed; errors when none fit.
fn usable_ladder(g: &Grid, x0: [f64; 2], radii: &[f64]) -> Result<(Vec<f64>, bool)> {
    if radii.is_empty() {
        return Err(Error::contract("radius ladder is empty"));
    }
    for &r in radii {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::contract(format!("radii must be positive, got {r}")));
        }
    }
    let keep: Vec<f64> = radii.iter().copied().filter(|&r| ball_fits(g, x0, r)).collect();
    if keep.is_empty() {
        return Err(Error::contract(
            "radius ladder exits the grid at every radius",
        ));
    }
    let trimmed = keep.len() != radii.len();
    Ok((keep, trimmed))
}

/// Growth-constant scan: per-radius sup of u over B_r(x0) divided by r, and
/// the maximum over the ladder.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthScan {
    pub c_max: f64,
    /// Rows [r, sup/r].
    pub rows: Vec<[f64; 2]>,
    pub trimmed: bool,
}

pub fn growth_scan(u: &ScalarField, x0: [f64; 2], radii: &[f64]) -> Result<GrowthScan> {
    let g = u.grid();
    let (ladder, trimmed) = usable_ladder(g, x0, radii)?;
    let mut rows = Vec::with_capacity(ladder.len());
    let mut c_max = 0.0_f64;
    for r in ladder {
        let sup = ball_nodes(g, x0, r)
            .into_iter()
            .map(|idx| u.at(idx))
            .fold(0.0_f64, f64::max);
        let ratio = sup / r;
        c_max = c_max.max(ratio);
        rows.push([r, ratio]);
    }
    Ok(GrowthScan {
        c_max,
        rows,
        trimmed,
    })
}

/// Nondegeneracy scan: the sup form plus the two mean-value forms, per
/// radius, and the worst (smallest) sup/r over the ladder.
#[derive(Debug, Clone, Serialize)]
pub struct NondegScan {
    pub c_min: f64,
    /// Rows [r, sup/r, ball-mean/r, shell-mean/r].
    pub rows: Vec<[f64; 4]>,
    pub trimmed: bool,
}

pub fn nondegeneracy_scan(u: &ScalarField, x0: [f64; 2], radii: &[f64]) -> Result<NondegScan> {
    let g = u.grid();
    let (ladder, trimmed) = usable_ladder(g, x0, radii)?;
    let shell_w = g.h_max();
    let mut rows = Vec::with_capacity(ladder.len());
    let mut c_min = f64::INFINITY;
    for r in ladder {
        let mut sup = 0.0_f64;
        let mut sum = 0.0_f64;
        let mut count = 0usize;
        let mut shell_sum = 0.0_f64;
        let mut shell_count = 0usize;
        for idx in ball_nodes(g, x0, r) {
            let v = u.at(idx);
            let x = g.node_pos(idx);
            sup = sup.max(v);
            sum += v;
            count += 1;
            let d = norm2([x[0] - x0[0], x[1] - x0[1]]);
            if d > r - shell_w {
                shell_sum += v;
                shell_count += 1;
            }
        }
        let sup_ratio = sup / r;
        let ball_mean = if count > 0 { sum / count as f64 } else { 0.0 };
        let shell_mean = if shell_count > 0 {
            shell_sum / shell_count as f64
        } else {
            0.0
        };
        c_min = c_min.min(sup_ratio);
        rows.push([r, sup_ratio, ball_mean / r, shell_mean / r]);
    }
    Ok(NondegScan {
        c_min,
        rows,
        trimmed,
    })
}

/// Density scan: fraction of ball nodes with u > threshold per radius, and
/// the gap c̃ = 1 − max fraction over the ladder.
#[derive(Debug, Clone, Serialize)]
pub struct DensityScan {
    pub gap: f64,
    /// Rows [r, positive fraction].
    pub rows: Vec<[f64; 2]>,
    pub trimmed: bool,
}

pub fn density_scan(
    u: &ScalarField,
    x0: [f64; 2],
    radii: &[f64],
    threshold: f64,
) -> Result<DensityScan> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::contract(format!(
            "threshold must be a finite nonnegative real, got {threshold}"
        )));
    }
    let g = u.grid();
    let (ladder, trimmed) = usable_ladder(g, x0, radii)?;
    let mut rows = Vec::with_capacity(ladder.len());
    let mut max_fraction = 0.0_f64;
    for r in ladder {
        let nodes = ball_nodes(g, x0, r);
        let total = nodes.len();
        let positive = nodes.into_iter().filter(|&idx| u.at(idx) > threshold).count();
        let fraction = if total > 0 {
            positive as f64 / total as f64
        } else {
            0.0
        };
        max_fraction = max_fraction.max(fraction);
        rows.push([r, fraction]);
    }
    Ok(DensityScan {
        gap: 1.0 - max_fraction,
        rows,
        trimmed,
    })
}

/// Least-squares fit of the rescaled field u_ρ(x) = u(x0 + ρx)/ρ against the
/// planar profile α⟨x, ν⟩⁺ on the unit ball.
#[derive(Debug, Clone, Serialize)]
pub struct BlowupFit {
    /// Rescale radius used.
    pub rho: f64,
    /// Fitted planar slope.
    pub alpha: f64,
    /// Inward unit normal estimate.
    pub normal: [f64; 2],
    /// L² misfit on the rescaled unit ball, relative to α.
    pub residual: f64,
}

pub fn blowup_fit(u: &ScalarField, x0: [f64; 2], rho: f64) -> Result<BlowupFit> {
    let g = u.grid();
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::contract(format!(
            "rescale radius must be positive, got {rho}"
        )));
    }
    if !ball_fits(g, x0, rho) {
        return Err(Error::contract(format!(
            "rescale ball of radius {rho} exits the grid box"
        )));
    }
    let normal = inward_normal(u, x0, rho)
        .map_err(|_| Error::contract("positive phase empty in the rescale ball"))?;
    // Resample at the resolution of the underlying mesh (at least 17 points
    // per axis) over the unit ball in rescaled coordinates.
    let k = ((rho / g.h_max()).round() as usize).max(8);
    let m = 2 * k + 1;
    let step = 1.0 / k as f64;
    let mut num = 0.0_f64; // Σ u_ρ·s⁺
    let mut den = 0.0_f64; // Σ (s⁺)²
    let mut pts: Vec<(f64, f64)> = Vec::new(); // (u_ρ, s⁺) for the residual pass
    let jr = if g.dim() == 2 { 0..m } else { 0..1 };
    for i in 0..m {
        let y0 = -1.0 + i as f64 * step;
        for j in jr.clone() {
            let y1 = if g.dim() == 2 {
                -1.0 + j as f64 * step
            } else {
                0.0
            };
            if y0 * y0 + y1 * y1 > 1.0 + 1e-12 {
                continue;
            }
            let x = [x0[0] + rho * y0, x0[1] + rho * y1];
            let v = u.sample(x)? / rho;
            let s = (y0 * normal[0] + y1 * normal[1]).max(0.0);
            num += v * s;
            den += s * s;
            pts.push((v, s));
        }
    }
    if !(den > 0.0) {
        return Err(Error::contract(
            "positive half of the rescale ball holds no sample points",
        ));
    }
    let alpha = num / den;
    if !(alpha > 0.0) {
        return Err(Error::contract(format!(
            "planar fit slope must be positive, got {alpha}: not a free-boundary profile"
        )));
    }
    let mut ss = 0.0_f64;
    for (v, s) in &pts {
        let e = v - alpha * s;
        ss += e * e;
    }
    let residual = (ss / pts.len() as f64).sqrt() / alpha;
    Ok(BlowupFit {
        rho,
        alpha,
        normal,
        residual,
    })
}

/// Outcome of the tangent-ball condition check.
#[derive(Debug, Clone, Serialize)]
pub enum BallCondition {
    /// A tangent ball inside {u ≤ 0} was fitted; `ell` is the measured
    /// limsup proxy of u(x)/dist(x, B) and `target` the local λ*.
    Checked {
        ell: f64,
        target: f64,
        ball_center: [f64; 2],
        ball_radius: f64,
    },
    /// Mesh resolution (or the zero set) forbids a tangent ball of radius
    /// ≥ 2h; reported, not an error.
    Inconclusive(String),
}

/// Fit the largest empty ball inside {u ≤ 0} touching `x0` (along the
/// outward normal, radii doubling from 2h), then report the maximum of
/// u(x)/dist(x, B) over positive-phase nodes within 8h of `x0` against the
/// local slope target λ*(x0).
pub fn ball_condition_check(
    u: &ScalarField,
    x0: [f64; 2],
    data: &ProblemData,
) -> Result<BallCondition> {
    let g = u.grid();
    let h = g.h_max();
    let inward = match inward_normal(u, x0, 8.0 * h) {
        Ok(v) => v,
        Err(_) => {
            return Ok(BallCondition::Inconclusive(
                "no positive phase near the point to orient the ball".into(),
            ))
        }
    };
    let outward = [-inward[0], -inward[1]];
    let empty_ball_at = |rho: f64| -> Option<[f64; 2]> {
        let center = [x0[0] + rho * outward[0], x0[1] + rho * outward[1]];
        if !ball_fits(g, center, rho) {
            return None;
        }
        for idx in ball_nodes(g, center, rho) {
            if u.at(idx) > 0.0 {
                return None;
            }
        }
        Some(center)
    };
    let mut rho = 2.0 * h;
    let mut best: Option<(f64, [f64; 2])> = None;
    while let Some(center) = empty_ball_at(rho) {
        best = Some((rho, center));
        rho *= 2.0;
    }
    let Some((ball_radius, ball_center)) = best else {
        return Ok(BallCondition::Inconclusive(
            "no empty tangent ball of radius >= 2h inside the zero set".into(),
        ));
    };
    let mut ell = 0.0_f64;
    let mut found = false;
    for idx in ball_nodes(g, x0, 8.0 * h) {
        let v = u.at(idx);
        if v <= 0.0 {
            continue;
        }
        let x = g.node_pos(idx);
        let dist = norm2([x[0] - ball_center[0], x[1] - ball_center[1]]) - ball_radius;
        if dist <= 1e-12 {
            continue;
        }
        ell = ell.max(v / dist);
        found = true;
    }
    if !found {
        return Ok(BallCondition::Inconclusive(
            "no positive-phase nodes within 8h of the point".into(),
        ));
    }
    let p_val = data.exponents().field().sample(x0)?;
    let lam_val = data.lambda().sample(x0)?;
    let target = lambda_star(p_val, lam_val)?;
    Ok(BallCondition::Checked {
        ell,
        target,
        ball_center,
        ball_radius,
    })
}

/// Development coefficient α of a nonnegative field on a half-ball-style
/// domain vanishing on the flat face {x_d = origin_d} (d = last axis):
/// u(x) = α·x_d + o(|x|). The field must satisfy the equation
/// div(a|∇u|^{p−2}∇u) = f on its positivity set (residual-checked against
/// `residual_tol`); α is fitted from u/t at dyadic heights above the face
/// midpoint and extrapolated to height zero.
pub fn halfplane_development_check(
    u: &ScalarField,
    data: &ProblemData,
    residual_tol: f64,
) -> Result<f64> {
    if !(residual_tol > 0.0) {
        return Err(Error::contract(format!(
            "residual tolerance must be positive, got {residual_tol}"
        )));
    }
    let g = u.grid();
    if u.min() < 0.0 {
        return Err(Error::contract(format!(
            "development check needs u >= 0, found min {}",
            u.min()
        )));
    }
    let d = g.dim() - 1;
    let [n0, n1] = g.n();
    // Zero trace on the flat face.
    let face_n = if d == 0 { n1.max(1) } else { n0 };
    for t in 0..face_n {
        let idx = if d == 0 { [0, t] } else { [t, 0] };
        if u.at(idx).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "development check needs u = 0 on the flat face, found {} at {idx:?}",
                u.at(idx)
            )));
        }
    }
    let resid = crate::solver::check_euler_lagrange(u, data, 1e-8, 0.0, &[])?;
    if resid.equality_sup > residual_tol {
        return Err(Error::contract(format!(
            "field does not satisfy the equation on its positivity set: residual {} > {residual_tol}",
            resid.equality_sup
        )));
    }
    let mut foot = g.origin();
    for a in 0..g.dim() {
        if a != d {
            foot[a] += 0.5 * g.extent()[a];
        }
    }
    let h = g.spacing()[d];
    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut t = 0.5 * g.extent()[d];
    while t >= 2.0 * h {
        let mut x = foot;
        x[d] += t;
        let v = u.sample(x)?;
        rows.push([t, v / t]);
        t *= 0.5;
    }
    if rows.len() < 2 {
        return Err(Error::contract(
            "grid too coarse for the development fit: fewer than 2 dyadic heights above 2h",
        ));
    }
    let (alpha, _) = affine_intercept(&rows);
    Ok(alpha)
}

/// Per-free-boundary-point verification record.
#[derive(Debug, Clone, Serialize)]
pub struct PointRecord {
    pub point: [f64; 2],
    pub measured_slope: f64,
    pub target_lambda_star: f64,
    pub normal: [f64; 2],
    pub fit_residual: f64,
}

/// One empirical constant with the radius ladder it was measured on.
#[derive(Debug, Clone, Serialize)]
pub struct ScanConstant {
    pub value: f64,
    pub radii: Vec<f64>,
    pub trimmed: bool,
}

/// Aggregated growth / nondegeneracy / density constants.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthConstants {
    pub c_max: ScanConstant,
    pub c_min: ScanConstant,
    pub density_gap: ScanConstant,
}

/// Free-boundary verification report: interface points, per-point slope
/// records, and the empirical constants over the requested radius ladder.
#[derive(Debug, Clone, Serialize)]
pub struct FBReport {
    pub fb_points: Vec<[f64; 2]>,
    pub per_point: Vec<PointRecord>,
    pub growth_constants: GrowthConstants,
}

/// Extract the free boundary of `u` at `threshold` and verify slopes and
/// ball constants at up to `max_points` interface points (evenly subsampled).
/// Scan centers snap to the nearest grid node; points too close to the
/// domain boundary for the gradient trace are skipped in `per_point`.
pub fn fb_report(
    u: &ScalarField,
    data: &ProblemData,
    threshold: f64,
    radii: &[f64],
    n_samples: usize,
    max_points: usize,
) -> Result<FBReport> {
    if max_points == 0 {
        return Err(Error::contract("max_points must be at least 1"));
    }
    let fb_points = extract_fb(u, threshold)?;
    let empty = |v: f64| ScanConstant {
        value: v,
        radii: radii.to_vec(),
        trimmed: false,
    };
    if fb_points.is_empty() {
        return Ok(FBReport {
            fb_points,
            per_point: Vec::new(),
            growth_constants: GrowthConstants {
                c_max: empty(0.0),
                c_min: empty(0.0),
                density_gap: empty(0.0),
            },
        });
    }
    let g = u.grid();
    let take = fb_points.len().min(max_points);
    let mut per_point = Vec::new();
    let mut c_max = f64::NEG_INFINITY;
    let mut c_min = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut any_scan = false;
    let mut trimmed = false;
    for s in 0..take {
        let pt = fb_points[s * fb_points.len() / take];
        if let Ok(trace) = fb_gradient_trace(u, pt, n_samples) {
            let p_val = data.exponents().field().sample(pt)?;
            let lam_val = data.lambda().sample(pt)?;
            per_point.push(PointRecord {
                point: pt,
                measured_slope: trace.slope,
                target_lambda_star: lambda_star(p_val, lam_val)?,
                normal: trace.normal,
                fit_residual: trace.fit_residual,
            });
        }
        // Snap the scan center to the nearest node: dyadic radii reach whole
        // node shells only from a node, and off-node centers quantize the
        // sup-scan reach by up to one full h.
        let mut snapped = [0.0; 2];
        for a in 0..g.dim() {
            let i = ((pt[a] - g.origin()[a]) / g.spacing()[a])
                .round()
                .clamp(0.0, (g.n()[a] - 1) as f64) as usize;
            snapped[a] = g.origin()[a] + i as f64 * g.spacing()[a];
        }
        if let (Ok(gs), Ok(ns), Ok(ds)) = (
            growth_scan(u, snapped, radii),
            nondegeneracy_scan(u, snapped, radii),
            density_scan(u, snapped, radii, threshold),
        ) {
            c_max = c_max.max(gs.c_max);
            c_min = c_min.min(ns.c_min);
            gap = gap.min(ds.gap);
            trimmed |= gs.trimmed || ns.trimmed || ds.trimmed;
            any_scan = true;
        }
    }
    if !any_scan {
        return Err(Error::Inconclusive(
            "no free-boundary point admits the radius ladder".into(),
        ));
    }
    Ok(FBReport {
        fb_points,
        per_point,
        growth_constants: GrowthConstants {
            c_max: ScanConstant {
                value: c_max,
                radii: radii.to_vec(),
                trimmed,
            },
            c_min: ScanConstant {
                value: c_min,
                radii: radii.to_vec(),
                trimmed,
            },
            density_gap: ScanConstant {
                value: gap,
                radii: radii.to_vec(),
                trimmed,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ExponentField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_star_known_values() {
        assert_eq!(lambda_star(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(lambda_star(2.0, 2.0).unwrap(), 2.0);
        let a = lambda_star(3.0, 1.0).unwrap();
        assert!((a - 1.5_f64.powf(1.0 / 3.0)).abs() <= 1e-15);
        assert!((a - 1.144714).abs() <= 1e-6);
        assert!(lambda_star(1.0, 1.0).is_err());
        assert!(lambda_star(0.5, 1.0).is_err());
        assert!(lambda_star(2.0, 0.0).is_err());
        assert!(lambda_star(2.0, -1.0).is_err());
    }

    #[test]
    fn lambda_star_identity_over_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p: f64 = rng.gen_range(1.1..6.0);
            let lam: f64 = rng.gen_range(0.01..100.0);
            let a = lambda_star(p, lam).unwrap();
            let defect = a.powf(p) * (p - 1.0) / p - lam;
            assert!(defect.abs() <= 1e-12, "p {p} lam {lam} defect {defect}");
        }
    }

    fn planar_field(n: usize, alpha: f64) -> ScalarField {
        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [n, n]).unwrap();
        ScalarField::from_fn(&g, |x| (alpha * x[0]).max(0.0)).unwrap()
    }

    #[test]
    fn extract_fb_planar_constant_and_1d() {
        let u = planar_field(65, 1.0);
        let pts = extract_fb(&u, 0.0).unwrap();
        assert_eq!(pts.len(), 65);
        for p in &pts {
            assert!(p[0].abs() <= 1e-15, "crossing off the axis: {p:?}");
        }
        let ones = ScalarField::from_fn(u.grid(), |_| 1.0).unwrap();
        assert!(extract_fb(&ones, 0.0).unwrap().is_empty());
        let g1 = Grid::new_1d(0.0, 1.0, 33).unwrap();
        let u1 = ScalarField::from_fn(&g1, |x| (x[0] - 0.25).max(0.0)).unwrap();
        let pts1 = extract_fb(&u1, 0.0).unwrap();
        assert_eq!(pts1.len(), 1);
        assert!((pts1[0][0] - 0.25).abs() <= 1e-12);
        assert!(extract_fb(&u1, -0.1).is_err());
    }

    #[test]
    fn extract_fb_radial_cone_radius_statistics() {
        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [129, 129]).unwrap();
        let u = ScalarField::from_fn(&g, |x| {
            (0.3 - (x[0] * x[0] + x[1] * x[1]).sqrt()).max(0.0)
        })
        .unwrap();
        let pts = extract_fb(&u, 0.0).unwrap();
        assert!(pts.len() > 50);
        let h = g.h_max();
        let mut mean_r = 0.0;
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.3).abs() <= h, "crossing radius {r}");
            mean_r += r;
        }
        mean_r /= pts.len() as f64;
        assert!((mean_r - 0.3).abs() <= h);
    }

    #[test]
    fn gradient_trace_exact_planar() {
        let u = planar_field(129, 1.0);
        let trace = fb_gradient_trace(&u, [0.0, 0.0], 6).unwrap();
        assert!((trace.slope - 1.0).abs() <= 1e-10, "slope {}", trace.slope);
        assert!(trace.fit_residual <= 1e-10);
        assert!((trace.normal[0] - 1.0).abs() <= 1e-10);
        assert!(trace.normal[1].abs() <= 1e-10);
        assert_eq!(trace.samples.len(), 6);
        assert!(fb_gradient_trace(&u, [0.0, 0.0], 1).is_err());
    }

    #[test]
    fn gradient_trace_requires_room() {
        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [129, 129]).unwrap();
        let u = ScalarField::from_fn(&g, |x| (x[0] - 0.45).max(0.0)).unwrap();
        assert!(fb_gradient_trace(&u, [0.45, 0.0], 6).is_err());
    }

    #[test]
    fn scans_on_exact_planar_field() {
        let u = planar_field(129, 1.0);
        let h = u.grid().h_max();
        let radii: Vec<f64> = [32.0, 16.0, 8.0, 4.0].iter().map(|k| k * h).collect();
        let gs = growth_scan(&u, [0.0, 0.0], &radii).unwrap();
        assert!(!gs.trimmed);
        for row in &gs.rows {
            assert!((row[1] - 1.0).abs() <= 1e-12, "sup/r {} at r {}", row[1], row[0]);
        }
        assert!((gs.c_max - 1.0).abs() <= 1e-12);

        let ns = nondegeneracy_scan(&u, [0.0, 0.0], &radii).unwrap();
        assert!((ns.c_min - 1.0).abs() <= 1e-12);
        assert!(ns.c_min <= gs.c_max + 1e-15);
        // Ball mean of x₁⁺ over the unit disc is 2/(3π); shell mean is 1/π.
        let big = &ns.rows[0];
        assert!((big[2] - 2.0 / (3.0 * std::f64::consts::PI)).abs() <= 0.05, "ball mean {}", big[2]);
        assert!((big[3] - 1.0 / std::f64::consts::PI).abs() <= 0.07, "shell mean {}", big[3]);
        for row in &ns.rows {
            assert!(row[1] > 0.0 && row[2] > 0.0 && row[3] > 0.0);
        }

        let ds = density_scan(&u, [0.0, 0.0], &radii, 0.0).unwrap();
        for row in &ds.rows {
            // The interface node column biases small balls by O(h/r).
            assert!((row[1] - 0.5).abs() <= 0.1, "fraction {} at r {}", row[1], row[0]);
            assert!(row[1] >= 0.0 && row[1] <= 1.0);
        }
        // The fraction approaches 1/2 as the radius grows.
        assert!((ds.rows[0][1] - 0.5).abs() <= 0.025, "fraction {}", ds.rows[0][1]);
        assert!(ds.gap >= 0.4 && ds.gap <= 0.6, "gap {}", ds.gap);

        // Purity: identical reruns bit for bit.
        let gs2 = growth_scan(&u, [0.0, 0.0], &radii).unwrap();
        assert_eq!(gs.rows, gs2.rows);
    }

    #[test]
    fn scans_on_degenerate_fields() {
        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [65, 65]).unwrap();
        let zero = ScalarField::zeros(&g);
        let h = g.h_max();
        let radii = vec![8.0 * h, 4.0 * h];
        let gs = growth_scan(&zero, [0.0, 0.0], &radii).unwrap();
        assert_eq!(gs.c_max, 0.0);
        let ns = nondegeneracy_scan(&zero, [0.0, 0.0], &radii).unwrap();
        assert_eq!(ns.c_min, 0.0);
        let ones = ScalarField::from_fn(&g, |_| 1.0).unwrap();
        let ds = density_scan(&ones, [0.0, 0.0], &radii, 0.0).unwrap();
        assert_eq!(ds.gap, 0.0);
        for row in &ds.rows {
            assert_eq!(row[1], 1.0);
        }
        // Ladder trimming: one radius exits, the rest survive and flag it.
        let gs_trim = growth_scan(&ones, [0.45, 0.0], &[0.2, 2.0 * h]).unwrap();
        assert!(gs_trim.trimmed);
        assert_eq!(gs_trim.rows.len(), 1);
        assert!(growth_scan(&ones, [0.45, 0.0], &[0.2]).is_err());
    }

    #[test]
    fn blowup_fit_exact_planar_scale_invariant() {
        let u = planar_field(257, 1.3);
        let fit = blowup_fit(&u, [0.0, 0.0], 0.25).unwrap();
        assert!((fit.alpha - 1.3).abs() <= 1e-10, "alpha {}", fit.alpha);
        assert!(fit.residual <= 1e-10, "residual {}", fit.residual);
        assert!((fit.normal[0] - 1.0).abs() <= 1e-10);
        let half = blowup_fit(&u, [0.0, 0.0], 0.125).unwrap();
        assert!((half.alpha - fit.alpha).abs() <= 1e-12);
        assert!(blowup_fit(&u, [0.45, 0.0], 0.25).is_err());
        let g = u.grid().clone();
        let zero = ScalarField::zeros(&g);
        assert!(blowup_fit(&zero, [0.0, 0.0], 0.25).is_err());
    }

    #[test]
    fn blowup_fit_recovers_rotated_normal() {
        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [257, 257]).unwrap();
        let th = 30.0_f64.to_radians();
        let nu = [th.cos(), th.sin()];
        let u = ScalarField::from_fn(&g, |x| (x[0] * nu[0] + x[1] * nu[1]).max(0.0)).unwrap();
        let fit = blowup_fit(&u, [0.0, 0.0], 0.25).unwrap();
        let angle = fit.normal[1].atan2(fit.normal[0]).to_degrees();
        assert!((angle - 30.0).abs() <= 1.0, "normal angle {angle}");
        assert!((fit.alpha - 1.0).abs() <= 0.05, "alpha {}", fit.alpha);
    }

    fn dummy_data(g: &Grid, p: f64, lam: f64) -> ProblemData {
        let pf = ExponentField::constant(g, p).unwrap();
        let lamf = ScalarField::from_fn(g, |_| lam).unwrap();
        ProblemData::sharp(pf, lamf, ScalarField::zeros(g)).unwrap()
    }

    #[test]
    fn ball_condition_planar_cone_and_inconclusive() {
        let u = planar_field(257, 1.2);
        let data = dummy_data(u.grid(), 2.0, 0.72);
        match ball_condition_check(&u, [0.0, 0.0], &data).unwrap() {
            BallCondition::Checked { ell, target, .. } => {
                assert!((ell - 1.2).abs() <= 0.03 * 1.2, "ell {ell}");
                assert!((target - 1.2).abs() <= 1e-12, "target {target}");
            }
            BallCondition::Inconclusive(msg) => panic!("unexpectedly inconclusive: {msg}"),
        }

        let g = Grid::new_2d([-0.5, -0.5], [1.0, 1.0], [129, 129]).unwrap();
        let cone = ScalarField::from_fn(&g, |x| {
            (0.3 - (x[0] * x[0] + x[1] * x[1]).sqrt()).max(0.0)
        })
        .unwrap();
        let data_c = dummy_data(&g, 2.0, 0.5);
        match ball_condition_check(&cone, [0.3, 0.0], &data_c).unwrap() {
            BallCondition::Checked { ell, .. } => {
                assert!((ell - 1.0).abs() <= 0.05, "cone ell {ell}");
            }
            BallCondition::Inconclusive(msg) => panic!("unexpectedly inconclusive: {msg}"),
        }

        let ones = ScalarField::from_fn(&g, |_| 1.0).unwrap();
        match ball_condition_check(&ones, [0.0, 0.0], &data_c).unwrap() {
            BallCondition::Inconclusive(_) => {}
            BallCondition::Checked { .. } => panic!("positive field cannot host a tangent ball"),
        }
    }

    #[test]
    fn halfplane_development_cases() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [65, 65]).unwrap();
        let lin = ScalarField::from_fn(&g, |x| 0.7 * x[1]).unwrap();
        let data0 = dummy_data(&g, 2.0, 1.0);
        let a = halfplane_development_check(&lin, &data0, 1e-6).unwrap();
        assert!((a - 0.7).abs() <= 1e-12, "alpha {a}");

        let quad = ScalarField::from_fn(&g, |x| x[1] + x[1] * x[1]).unwrap();
        let pf = ExponentField::constant(&g, 2.0).unwrap();
        let lamf = ScalarField::from_fn(&g, |_| 1.0).unwrap();
        let f2 = ScalarField::from_fn(&g, |_| 2.0).unwrap();
        let data2 = ProblemData::sharp(pf, lamf, f2).unwrap();
        let a2 = halfplane_development_check(&quad, &data2, 1e-6).unwrap();
        assert!((a2 - 1.0).abs() <= 0.05, "alpha {a2}");
        // Wrong forcing: the residual precondition must reject the field.
        assert!(halfplane_development_check(&quad, &data0, 1e-6).is_err());

        let zero = ScalarField::zeros(&g);
        let a0 = halfplane_development_check(&zero, &data0, 1e-6).unwrap();
        assert_eq!(a0, 0.0);

        let neg = ScalarField::from_fn(&g, |x| x[1] - 0.5).unwrap();
        assert!(halfplane_development_check(&neg, &data0, 1e-6).is_err());
    }

    #[test]
    fn fb_report_on_planar_field() {
        let u = planar_field(129, 1.0);
        let data = dummy_data(u.grid(), 2.0, 0.5);
        let h = u.grid().h_max();
        let radii: Vec<f64> = [16.0, 8.0, 4.0].iter().map(|k| k * h).collect();
        let report = fb_report(&u, &data, 0.0, &radii, 6, 16).unwrap();
        assert!(!report.fb_points.is_empty());
        assert!(!report.per_point.is_empty());
        for rec in &report.per_point {
            assert!((rec.measured_slope - 1.0).abs() <= 1e-8);
            assert!((rec.target_lambda_star - 1.0).abs() <= 1e-12);
            let len = norm2(rec.normal);
            assert!((len - 1.0).abs() <= 1e-10);
        }
        assert!((report.growth_constants.c_max.value - 1.0).abs() <= 1e-10);
        assert!((report.growth_constants.c_min.value - 1.0).abs() <= 1e-10);
        assert!(report.growth_constants.density_gap.value >= 0.4);
        // Empty positivity set: no interface points, zeroed constants.
        let zero = ScalarField::zeros(u.grid());
        let empty = fb_report(&zero, &data, 0.0, &radii, 6, 16).unwrap();
        assert!(empty.fb_points.is_empty());
        assert!(empty.per_point.is_empty());
    }
}
