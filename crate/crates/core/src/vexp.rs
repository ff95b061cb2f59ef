//! Variable-exponent Lebesgue-space numerics: the modular, the Luxemburg norm,
//! dual exponents, and the classical inequality checks (norm–modular sandwich,
//! Hölder, Poincaré) that later modules lean on as property tests.

use crate::error::{Error, Result};
use crate::grid::{cell_gradient, same_grid, ExponentField, Grid, ScalarField};

/// Exponents above this cap have duals below the 1.05 floor, so dualization refuses them.
pub const DUAL_P_MAX: f64 = 21.0;

/// Geometric bracket expansions / bisection steps allowed before giving up.
const NORM_ITER_CAP: usize = 2000;

/// The quantity ∫ |u(x)|^{p(x)} dx over the grid, by cell-center quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Modular {
    value: f64,
}

impl Modular {
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Cell-center magnitudes and exponents of a nodal field: the data every
/// modular/norm evaluation works from.
fn cell_arrays(u: &ScalarField, p: &ExponentField) -> Result<(Vec<f64>, Vec<f64>)> {
    same_grid(u.grid(), p.field().grid())?;
    let g = u.grid();
    let mut mag = Vec::with_capacity(g.n_cells());
    let mut pc = Vec::with_capacity(g.n_cells());
    for lin in 0..g.n_cells() {
        let cell = g.cell_unlin(lin);
        mag.push(u.cell_center_value(cell).abs());
        pc.push(p.cell_center_value(cell));
    }
    Ok((mag, pc))
}

fn modular_scaled(mag: &[f64], pc: &[f64], vol: f64, s: f64) -> f64 {
    let mut total = 0.0;
    for (m, &p) in mag.iter().zip(pc) {
        total += (m / s).powf(p);
    }
    total * vol
}

/// Discretized modular ρ(u) = ∫ |u|^{p(x)} dx.
pub fn modular(u: &ScalarField, p: &ExponentField) -> Result<Modular> {
    let (mag, pc) = cell_arrays(u, p)?;
    let value = modular_scaled(&mag, &pc, u.grid().cell_vol(), 1.0);
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "modular overflowed to {value}; field magnitudes up to {}",
            mag.iter().cloned().fold(0.0, f64::max)
        )));
    }
    Ok(Modular { value })
}

/// Luxemburg norm inf{s > 0 : ρ(u/s) ≤ 1} on pre-extracted cell data.
/// Brackets by geometric expansion, then bisects; the final interval width is
/// at most `tol` in absolute terms once the norm exceeds 1, and `tol` relative
/// below that, so small norms keep full relative accuracy.
fn luxemburg_core(mag: &[f64], pc: &[f64], vol: f64, p_min: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::contract(format!("tolerance must be positive, got {tol}")));
    }
    let sup = mag.iter().cloned().fold(0.0, f64::max);
    if sup == 0.0 {
        return Ok(0.0);
    }
    let measure = vol * mag.len() as f64;
    let rho = |s: f64| modular_scaled(mag, pc, vol, s);
    // Upper bracket: grow until the scaled modular drops to 1 or below.
    let mut hi = (sup * measure.powf(1.0 / p_min) + 1.0).max(1.0);
    let mut guard = 0;
    while rho(hi) > 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > NORM_ITER_CAP {
            return Err(Error::numeric("Luxemburg bracket expansion did not terminate"));
        }
    }
    // Lower bracket: shrink until the scaled modular climbs to 1 or above.
    let mut lo = hi / 2.0;
    while rho(lo) < 1.0 {
        hi = lo;
        lo /= 2.0;
        guard += 1;
        if guard > NORM_ITER_CAP {
            return Err(Error::numeric("Luxemburg bracket contraction did not terminate"));
        }
    }
    while hi - lo > tol * hi.min(1.0) {
        let mid = 0.5 * (lo + hi);
        if rho(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        guard += 1;
        if guard > NORM_ITER_CAP {
            return Err(Error::numeric("Luxemburg bisection did not terminate"));
        }
    }
    Ok(hi)
}

/// Luxemburg norm of a nodal field: inf{s > 0 : ρ(u/s) ≤ 1}, 0 for u ≡ 0.
pub fn luxemburg_norm(u: &ScalarField, p: &ExponentField, tol: f64) -> Result<f64> {
    let (mag, pc) = cell_arrays(u, p)?;
    luxemburg_core(&mag, &pc, u.grid().cell_vol(), p.p_min(), tol)
}

/// Nodewise dual exponent p′ = p/(p−1). Requires p ≤ 21 so the dual stays at
/// or above the 1.05 floor every exponent field must satisfy.
pub fn dual_exponent(p: &ExponentField) -> Result<ExponentField> {
    if p.p_max() > DUAL_P_MAX {
        return Err(Error::contract(format!(
            "dual of p = {} would fall below the exponent floor; need p <= {DUAL_P_MAX}",
            p.p_max()
        )));
    }
    let vals: Vec<f64> = p.field().values().iter().map(|&v| v / (v - 1.0)).collect();
    ExponentField::new(ScalarField::from_values(p.field().grid(), vals)?)
}

/// Norm–modular sandwich: returns (lhs, norm, rhs) where lhs/rhs are the
/// min/max of ρ^{1/p_min} and ρ^{1/p_max}; the norm must land between them.
pub fn check_norm_modular_sandwich(
    u: &ScalarField,
    p: &ExponentField,
) -> Result<(f64, f64, f64)> {
    if u.values().iter().all(|&v| v == 0.0) {
        return Err(Error::contract(
            "sandwich check needs a field that is not identically zero",
        ));
    }
    let m = modular(u, p)?.value();
    let norm = luxemburg_norm(u, p, 1e-10)?;
    let a = m.powf(1.0 / p.p_min());
    let b = m.powf(1.0 / p.p_max());
    Ok((a.min(b), norm, a.max(b)))
}

/// Hölder check: lhs = ∫|f||g| (cell quadrature), rhs = 2‖f‖_{p(·)}‖g‖_{p′(·)}.
pub fn check_holder(
    f: &ScalarField,
    g: &ScalarField,
    p: &ExponentField,
) -> Result<(f64, f64)> {
    same_grid(f.grid(), g.grid())?;
    same_grid(f.grid(), p.field().grid())?;
    let grid = f.grid();
    let lhs = crate::grid::integrate_cells(grid, |cell, _| {
        f.cell_center_value(cell).abs() * g.cell_center_value(cell).abs()
    });
    let p_dual = dual_exponent(p)?;
    let rhs = 2.0 * luxemburg_norm(f, p, 1e-9)? * luxemburg_norm(g, &p_dual, 1e-9)?;
    Ok((lhs, rhs))
}

/// Poincaré check for fields vanishing on the boundary: returns
/// (‖u‖_{p(·)}, ‖|∇u|‖_{p(·)}, ratio). The ratio is 0 when the gradient norm
/// vanishes; across families of fields on a fixed domain it stays bounded.
pub fn check_poincare(u: &ScalarField, p: &ExponentField) -> Result<(f64, f64, f64)> {
    same_grid(u.grid(), p.field().grid())?;
    let grid: &Grid = u.grid();
    for idx in grid.nodes() {
        if grid.is_boundary_node(idx) && u.at(idx) != 0.0 {
            return Err(Error::contract(format!(
                "Poincaré check needs zero boundary values; node {idx:?} holds {}",
                u.at(idx)
            )));
        }
    }
    let lhs = luxemburg_norm(u, p, 1e-10)?;
    let mut mag = Vec::with_capacity(grid.n_cells());
    let mut pc = Vec::with_capacity(grid.n_cells());
    for lin in 0..grid.n_cells() {
        let cell = grid.cell_unlin(lin);
        let gr = cell_gradient(u, cell)?;
        mag.push((gr[0] * gr[0] + gr[1] * gr[1]).sqrt());
        pc.push(p.cell_center_value(cell));
    }
    let rhs = luxemburg_core(&mag, &pc, grid.cell_vol(), p.p_min(), 1e-10)?;
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok((lhs, rhs, ratio))
}
