//! Uniform Cartesian grids in 1D/2D, nodal scalar fields, cell-center quadrature,
//! discrete gradients, ball sampling, and the text field-file format.

use crate::error::{Error, Result};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Every exponent field must stay at or above this floor; duals then stay below 21.
pub const P_MIN_FLOOR: f64 = 1.05;

/// Relative slack applied to squared radii so closed-ball membership is stable
/// on grids whose spacing is not exactly representable in binary.
const BALL_SLACK: f64 = 1e-12;

/// Uniform node-centered grid on an axis-aligned box. `h = extent / (n - 1)`
/// per axis; node positions are always computed as `origin + i * h`, never by
/// accumulation, so they are bit-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 2],
    origin: [f64; 2],
    extent: [f64; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new_1d(origin: f64, extent: f64, n: usize) -> Result<Grid> {
        Self::build(1, [origin, 0.0], [extent, 0.0], [n, 1])
    }

    pub fn new_2d(origin: [f64; 2], extent: [f64; 2], n: [usize; 2]) -> Result<Grid> {
        Self::build(2, origin, extent, n)
    }

    fn build(dim: usize, origin: [f64; 2], extent: [f64; 2], n: [usize; 2]) -> Result<Grid> {
        let mut h = [0.0_f64; 2];
        for a in 0..dim {
            if n[a] < 2 {
                return Err(Error::contract(format!(
                    "grid needs at least 2 nodes per axis, got n[{a}] = {}",
                    n[a]
                )));
            }
            if !(extent[a] > 0.0) || !extent[a].is_finite() || !origin[a].is_finite() {
                return Err(Error::contract(format!(
                    "grid axis {a} needs finite origin and positive extent, got origin {} extent {}",
                    origin[a], extent[a]
                )));
            }
            h[a] = extent[a] / (n[a] - 1) as f64;
        }
        Ok(Grid {
            dim,
            n,
            origin,
            extent,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis (axis 1 reports 1 on 1D grids).
    pub fn n(&self) -> [usize; 2] {
        self.n
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.h
    }

    /// Largest axis spacing; the natural length unit for scan ladders.
    pub fn h_max(&self) -> f64 {
        self.h[..self.dim].iter().cloned().fold(0.0, f64::max)
    }

    pub fn n_nodes(&self) -> usize {
        self.n[0] * self.n[1]
    }

    /// Cells per axis: one fewer than nodes (axis 1 reports 1 on 1D grids).
    pub fn cells_along(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis] - 1
        } else {
            1
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells_along(0) * self.cells_along(1)
    }

    /// Volume of one cell (length in 1D, area in 2D).
    pub fn cell_vol(&self) -> f64 {
        let mut v = self.h[0];
        if self.dim == 2 {
            v *= self.h[1];
        }
        v
    }

    /// Total measure of the box (length in 1D, area in 2D).
    pub fn measure(&self) -> f64 {
        let mut m = self.extent[0];
        if self.dim == 2 {
            m *= self.extent[1];
        }
        m
    }

    #[inline]
    pub fn node_lin(&self, idx: [usize; 2]) -> usize {
        debug_assert!(idx[0] < self.n[0] && idx[1] < self.n[1]);
        idx[0] * self.n[1] + idx[1]
    }

    #[inline]
    pub fn node_unlin(&self, lin: usize) -> [usize; 2] {
        [lin / self.n[1], lin % self.n[1]]
    }

    #[inline]
    pub fn cell_lin(&self, cell: [usize; 2]) -> usize {
        cell[0] * self.cells_along(1) + cell[1]
    }

    #[inline]
    pub fn cell_unlin(&self, lin: usize) -> [usize; 2] {
        let c1 = self.cells_along(1);
        [lin / c1, lin % c1]
    }

    #[inline]
    pub fn node_pos(&self, idx: [usize; 2]) -> [f64; 2] {
        [
            self.origin[0] + idx[0] as f64 * self.h[0],
            if self.dim == 2 {
                self.origin[1] + idx[1] as f64 * self.h[1]
            } else {
                0.0
            },
        ]
    }

    pub fn cell_center(&self, cell: [usize; 2]) -> [f64; 2] {
        [
            self.origin[0] + (cell[0] as f64 + 0.5) * self.h[0],
            if self.dim == 2 {
                self.origin[1] + (cell[1] as f64 + 0.5) * self.h[1]
            } else {
                0.0
            },
        ]
    }

    pub fn is_boundary_node(&self, idx: [usize; 2]) -> bool {
        let mut b = idx[0] == 0 || idx[0] == self.n[0] - 1;
        if self.dim == 2 {
            b = b || idx[1] == 0 || idx[1] == self.n[1] - 1;
        }
        b
    }

    pub fn nodes(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        (0..self.n_nodes()).map(move |lin| self.node_unlin(lin))
    }

    pub fn cells(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        (0..self.n_cells()).map(move |lin| self.cell_unlin(lin))
    }

    /// Linear node indices of a cell's corners (2 in 1D, 4 in 2D, low corner first).
    #[inline]
    pub fn cell_corners(&self, cell: [usize; 2]) -> ([usize; 4], usize) {
        let i = self.node_lin([cell[0], cell[1]]);
        if self.dim == 1 {
            ([i, i + 1, 0, 0], 2)
        } else {
            let n1 = self.n[1];
            ([i, i + n1, i + 1, i + n1 + 1], 4)
        }
    }

    /// Cell containing a point, clamped to valid range; `None` outside the box.
    pub fn cell_containing(&self, x: [f64; 2]) -> Option<[usize; 2]> {
        let mut cell = [0usize; 2];
        for a in 0..self.dim {
            let t = (x[a] - self.origin[a]) / self.h[a];
            if t < -1e-12 || t > (self.n[a] - 1) as f64 + 1e-12 {
                return None;
            }
            cell[a] = (t.floor().max(0.0) as usize).min(self.n[a] - 2);
        }
        Some(cell)
    }

    fn check_cell(&self, cell: [usize; 2]) -> Result<()> {
        if cell[0] >= self.cells_along(0) || cell[1] >= self.cells_along(1) {
            return Err(Error::Index(format!(
                "cell [{}, {}] outside {}x{} cell block",
                cell[0],
                cell[1],
                self.cells_along(0),
                self.cells_along(1)
            )));
        }
        Ok(())
    }
}

/// Nodal scalar field over a [`Grid`], stored row-major (axis 1 fastest).
/// All public constructors and operations keep every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Result<ScalarField> {
        let values: Vec<f64> = (0..grid.n_nodes())
            .map(|lin| f(grid.node_pos(grid.node_unlin(lin))))
            .collect();
        Self::from_values(grid, values)
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.n_nodes() {
            return Err(Error::contract(format!(
                "value buffer holds {} entries, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value {} at node {bad}",
                values[bad]
            )));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, idx: [usize; 2]) -> f64 {
        self.values[self.grid.node_lin(idx)]
    }

    pub fn set(&mut self, idx: [usize; 2], v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::numeric(format!("refusing to store {v}")));
        }
        let lin = self.grid.node_lin(idx);
        self.values[lin] = v;
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Corner average at a cell center (the one-point quadrature sample).
    #[inline]
    pub fn cell_center_value(&self, cell: [usize; 2]) -> f64 {
        let (corners, k) = self.grid.cell_corners(cell);
        let mut s = 0.0;
        for &c in &corners[..k] {
            s += self.values[c];
        }
        s / k as f64
    }

    /// Bilinear (linear in 1D) interpolation at a point inside the box.
    pub fn sample(&self, x: [f64; 2]) -> Result<f64> {
        let cell = self.grid.cell_containing(x).ok_or_else(|| {
            Error::Index(format!("point ({}, {}) outside the grid box", x[0], x[1]))
        })?;
        let p0 = self.grid.node_pos(cell);
        let tx = ((x[0] - p0[0]) / self.grid.spacing()[0]).clamp(0.0, 1.0);
        let (corners, _) = self.grid.cell_corners(cell);
        if self.grid.dim() == 1 {
            Ok(self.values[corners[0]] * (1.0 - tx) + self.values[corners[1]] * tx)
        } else {
            let ty = ((x[1] - p0[1]) / self.grid.spacing()[1]).clamp(0.0, 1.0);
            let v00 = self.values[corners[0]];
            let v10 = self.values[corners[1]];
            let v01 = self.values[corners[2]];
            let v11 = self.values[corners[3]];
            Ok(v00 * (1.0 - tx) * (1.0 - ty)
                + v10 * tx * (1.0 - ty)
                + v01 * (1.0 - tx) * ty
                + v11 * tx * ty)
        }
    }

    /// Overwrite boundary nodes with values from `other` (grids must match).
    pub fn copy_boundary_from(&mut self, other: &ScalarField) -> Result<()> {
        same_grid(&self.grid, &other.grid)?;
        for lin in 0..self.values.len() {
            if self.grid.is_boundary_node(self.grid.node_unlin(lin)) {
                self.values[lin] = other.values[lin];
            }
        }
        Ok(())
    }

    pub fn write_field(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let g = &self.grid;
        if g.dim() == 1 {
            writeln!(w, "1 {}", g.n()[0])?;
            writeln!(w, "{:.16e}", g.origin()[0])?;
            writeln!(w, "{:.16e}", g.extent()[0])?;
        } else {
            writeln!(w, "2 {} {}", g.n()[0], g.n()[1])?;
            writeln!(w, "{:.16e} {:.16e}", g.origin()[0], g.origin()[1])?;
            writeln!(w, "{:.16e} {:.16e}", g.extent()[0], g.extent()[1])?;
        }
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_field(path: &Path) -> Result<ScalarField> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::parse(format!("field file ended before {what}")))?
                .map_err(Error::Io)
        };
        let header = next_line("header")?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let dim: usize = head
            .first()
            .ok_or_else(|| Error::parse("empty header line"))?
            .parse()
            .map_err(|_| Error::parse(format!("bad dim in header '{header}'")))?;
        if dim != head.len() - 1 || !(dim == 1 || dim == 2) {
            return Err(Error::parse(format!(
                "header '{header}' must read 'dim n1 [n2]' with dim in {{1, 2}}"
            )));
        }
        let parse_f64s = |line: &str, what: &str| -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(format!("bad {what} entry '{t}'")))
                })
                .collect()
        };
        let mut n = [1usize; 2];
        for (a, tok) in head[1..].iter().enumerate() {
            n[a] = tok
                .parse()
                .map_err(|_| Error::parse(format!("bad node count '{tok}'")))?;
        }
        let origin_v = parse_f64s(&next_line("origin")?, "origin")?;
        let extent_v = parse_f64s(&next_line("extent")?, "extent")?;
        if origin_v.len() != dim || extent_v.len() != dim {
            return Err(Error::parse(format!(
                "origin/extent lines must carry {dim} entries"
            )));
        }
        let grid = if dim == 1 {
            Grid::new_1d(origin_v[0], extent_v[0], n[0])?
        } else {
            Grid::new_2d([origin_v[0], origin_v[1]], [extent_v[0], extent_v[1]], n)?
        };
        let mut values = Vec::with_capacity(grid.n_nodes());
        for _ in 0..grid.n_nodes() {
            let line = next_line("value")?;
            let t = line.trim();
            values.push(
                t.parse::<f64>()
                    .map_err(|_| Error::parse(format!("bad value line '{t}'")))?,
            );
        }
        ScalarField::from_values(&grid, values)
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!(
            "grids differ: {:?} nodes on {:?} vs {:?} nodes on {:?}",
            a.n(),
            a.origin(),
            b.n(),
            b.origin()
        )));
    }
    Ok(())
}

/// Discrete gradient of `u` at a cell center: forward difference in 1D; in 2D
/// each component averages the two parallel edge differences of the cell
/// (the gradient of the bilinear interpolant at the center). Exact on affine fields.
pub fn cell_gradient(u: &ScalarField, cell: [usize; 2]) -> Result<[f64; 2]> {
    u.grid().check_cell(cell)?;
    Ok(cell_gradient_unchecked(u, cell))
}

#[inline]
pub(crate) fn cell_gradient_unchecked(u: &ScalarField, cell: [usize; 2]) -> [f64; 2] {
    let g = u.grid();
    let h = g.spacing();
    let (corners, _) = g.cell_corners(cell);
    let v = u.values();
    if g.dim() == 1 {
        [(v[corners[1]] - v[corners[0]]) / h[0], 0.0]
    } else {
        let (v00, v10, v01, v11) = (v[corners[0]], v[corners[1]], v[corners[2]], v[corners[3]]);
        [
            ((v10 - v00) + (v11 - v01)) / (2.0 * h[0]),
            ((v01 - v00) + (v11 - v10)) / (2.0 * h[1]),
        ]
    }
}

/// Midpoint quadrature: sum of `g(cell, center)` over all cells times cell volume.
/// Exact for integrands that are affine on every cell.
pub fn integrate_cells(grid: &Grid, g: impl Fn([usize; 2], [f64; 2]) -> f64) -> f64 {
    let vol = grid.cell_vol();
    let mut total = 0.0;
    for lin in 0..grid.n_cells() {
        let cell = grid.cell_unlin(lin);
        total += g(cell, grid.cell_center(cell));
    }
    total * vol
}

/// All nodes with `|x - center| <= r` (closed Euclidean ball) with their values.
/// An empty result is valid, not an error.
pub fn ball_values(u: &ScalarField, center: [f64; 2], r: f64) -> Vec<([f64; 2], f64)> {
    ball_nodes(u.grid(), center, r)
        .into_iter()
        .map(|idx| (u.grid().node_pos(idx), u.at(idx)))
        .collect()
}

/// Node multi-indices inside the closed ball of radius `r` about `center`.
pub fn ball_nodes(grid: &Grid, center: [f64; 2], r: f64) -> Vec<[usize; 2]> {
    if !(r >= 0.0) {
        return Vec::new();
    }
    let r2 = r * r * (1.0 + BALL_SLACK);
    let mut lo = [0usize; 2];
    let mut hi = [0usize; 2];
    for a in 0..grid.dim() {
        let h = grid.spacing()[a];
        let t_lo = ((center[a] - r - grid.origin()[a]) / h).floor();
        let t_hi = ((center[a] + r - grid.origin()[a]) / h).ceil();
        if t_hi < 0.0 || t_lo > (grid.n()[a] - 1) as f64 {
            return Vec::new();
        }
        lo[a] = t_lo.max(0.0) as usize;
        hi[a] = (t_hi.max(0.0) as usize).min(grid.n()[a] - 1);
    }
    let mut out = Vec::new();
    let j_range = if grid.dim() == 2 { lo[1]..=hi[1] } else { 0..=0 };
    for i in lo[0]..=hi[0] {
        for j in j_range.clone() {
            let p = grid.node_pos([i, j]);
            let dx = p[0] - center[0];
            let dy = if grid.dim() == 2 { p[1] - center[1] } else { 0.0 };
            if dx * dx + dy * dy <= r2 {
                out.push([i, j]);
            }
        }
    }
    out
}

/// A scan center with a strictly decreasing radius ladder that fits the grid.
#[derive(Debug, Clone)]
pub struct ScanWindow {
    pub center: [f64; 2],
    pub radii: Vec<f64>,
    /// Set when radii had to be dropped because their ball left the grid box.
    pub trimmed: bool,
}

impl ScanWindow {
    /// Validates the ladder as given; any radius whose ball exits the box is an error.
    pub fn new(grid: &Grid, center: [f64; 2], radii: Vec<f64>) -> Result<ScanWindow> {
        let w = Self::fit(grid, center, radii.clone())?;
        if w.trimmed {
            return Err(Error::contract(format!(
                "radius ladder {:?} does not fit the grid around ({}, {})",
                radii, center[0], center[1]
            )));
        }
        Ok(w)
    }

    /// Keeps the decreasing-ladder contract but drops radii that exit the grid,
    /// flagging the trim instead of failing.
    pub fn fit(grid: &Grid, center: [f64; 2], radii: Vec<f64>) -> Result<ScanWindow> {
        if radii.is_empty() {
            return Err(Error::contract("radius ladder is empty"));
        }
        for w in radii.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::contract(format!(
                    "radius ladder must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(radii[radii.len() - 1] > 0.0) {
            return Err(Error::contract("radii must be positive"));
        }
        let fits = |r: f64| -> bool {
            (0..grid.dim()).all(|a| {
                center[a] - r >= grid.origin()[a] - 1e-12
                    && center[a] + r <= grid.origin()[a] + grid.extent()[a] + 1e-12
            })
        };
        let kept: Vec<f64> = radii.iter().cloned().filter(|&r| fits(r)).collect();
        let trimmed = kept.len() != radii.len();
        if kept.is_empty() {
            return Err(Error::contract(format!(
                "no ladder radius fits the grid around ({}, {})",
                center[0], center[1]
            )));
        }
        Ok(ScanWindow {
            center,
            radii: kept,
            trimmed,
        })
    }
}

/// Variable exponent p(x) stored nodally, with validated bounds and a recorded
/// Lipschitz constant (max adjacent-node slope).
#[derive(Debug, Clone)]
pub struct ExponentField {
    field: ScalarField,
    p_min: f64,
    p_max: f64,
    lipschitz_l: f64,
}

impl ExponentField {
    pub fn new(field: ScalarField) -> Result<ExponentField> {
        let mut p_min = f64::INFINITY;
        let mut p_max = f64::NEG_INFINITY;
        for &v in field.values() {
            p_min = p_min.min(v);
            p_max = p_max.max(v);
        }
        if !(p_min >= P_MIN_FLOOR) {
            return Err(Error::contract(format!(
                "exponent field reaches p = {p_min}, below the floor {P_MIN_FLOOR}"
            )));
        }
        let grid = field.grid().clone();
        let mut lipschitz_l: f64 = 0.0;
        // Edge slopes, not the averaged cell gradient: in 2D each cell
        // contributes both parallel edge differences per axis.
        for lin in 0..grid.n_cells() {
            let cell = grid.cell_unlin(lin);
            let (corners, k) = grid.cell_corners(cell);
            let v = field.values();
            let h = grid.spacing();
            if k == 2 {
                lipschitz_l = lipschitz_l.max(((v[corners[1]] - v[corners[0]]) / h[0]).abs());
            } else {
                lipschitz_l = lipschitz_l
                    .max(((v[corners[1]] - v[corners[0]]) / h[0]).abs())
                    .max(((v[corners[3]] - v[corners[2]]) / h[0]).abs())
                    .max(((v[corners[2]] - v[corners[0]]) / h[1]).abs())
                    .max(((v[corners[3]] - v[corners[1]]) / h[1]).abs());
            }
        }
        Ok(ExponentField {
            field,
            p_min,
            p_max,
            lipschitz_l,
        })
    }

    pub fn constant(grid: &Grid, p: f64) -> Result<ExponentField> {
        Self::new(ScalarField::from_fn(grid, |_| p)?)
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz_l
    }

    #[inline]
    pub fn cell_center_value(&self, cell: [usize; 2]) -> f64 {
        self.field.cell_center_value(cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square(n: usize) -> Grid {
        Grid::new_2d([0.0, 0.0], [1.0, 1.0], [n, n]).unwrap()
    }

    #[test]
    fn node_positions_are_reproducible_products() {
        let g = Grid::new_1d(-1.0, 2.0, 257).unwrap();
        for i in 0..257 {
            let p = g.node_pos([i, 0]);
            assert_eq!(p[0], -1.0 + i as f64 * g.spacing()[0]);
        }
        assert_eq!(g.spacing()[0], 2.0 / 256.0);
    }

    #[test]
    fn gradient_exact_on_affine_fields() {
        let g = unit_square(17);
        let u = ScalarField::from_fn(&g, |x| 3.0 + 2.0 * x[0] - 5.0 * x[1]).unwrap();
        for cell in g.cells() {
            let grad = cell_gradient(&u, cell).unwrap();
            assert!(
                (grad[0] - 2.0).abs() < 1e-13 * 2.0 && (grad[1] + 5.0).abs() < 1e-13 * 5.0,
                "cell {cell:?} gradient {grad:?}"
            );
        }
        let g1 = Grid::new_1d(0.0, 1.0, 11).unwrap();
        let u1 = ScalarField::from_fn(&g1, |x| 7.0 * x[0] - 1.0).unwrap();
        for cell in g1.cells() {
            let grad = cell_gradient(&u1, cell).unwrap();
            assert!((grad[0] - 7.0).abs() < 1e-13 * 7.0);
            assert_eq!(grad[1], 0.0);
        }
    }

    #[test]
    fn gradient_rejects_out_of_range_cell() {
        let g = unit_square(5);
        let u = ScalarField::zeros(&g);
        assert!(matches!(
            cell_gradient(&u, [4, 0]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn midpoint_rule_integrates_linear_exactly() {
        let g = Grid::new_1d(0.0, 1.0, 101).unwrap();
        let val = integrate_cells(&g, |_, x| x[0]);
        assert!((val - 0.5).abs() <= 1e-12, "got {val}");
        let one = integrate_cells(&g, |_, _| 1.0);
        assert!((one - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ball_count_tracks_disk_area() {
        let g = unit_square(101);
        let u = ScalarField::zeros(&g);
        let r = 0.25;
        let count = ball_values(&u, [0.5, 0.5], r).len() as f64;
        let expect = std::f64::consts::PI * r * r / (g.spacing()[0] * g.spacing()[1]);
        assert!(
            (count - expect).abs() <= 0.02 * expect,
            "count {count} vs area estimate {expect}"
        );
    }

    #[test]
    fn ball_edge_cases() {
        let g = unit_square(11);
        let u = ScalarField::zeros(&g);
        assert_eq!(ball_values(&u, [0.5, 0.5], 1e-6).len(), 1);
        assert_eq!(ball_values(&u, [0.5, 0.5], 10.0).len(), g.n_nodes());
        assert!(ball_values(&u, [50.0, 50.0], 0.3).is_empty());
    }

    #[test]
    fn scan_window_trims_and_flags() {
        let g = unit_square(33);
        let w = ScanWindow::fit(&g, [0.5, 0.5], vec![0.9, 0.4, 0.2]).unwrap();
        assert!(w.trimmed);
        assert_eq!(w.radii, vec![0.4, 0.2]);
        assert!(ScanWindow::new(&g, [0.5, 0.5], vec![0.9, 0.4]).is_err());
        assert!(ScanWindow::fit(&g, [0.5, 0.5], vec![0.2, 0.4]).is_err());
    }

    #[test]
    fn field_file_round_trip_is_bit_identical() {
        let g = Grid::new_2d([-1.0, 0.0], [2.0, 1.0], [9, 5]).unwrap();
        let u = ScalarField::from_fn(&g, |x| (31.0 * x[0]).sin() * (17.0 * x[1] + 0.37).cos()).unwrap();
        let dir = std::env::temp_dir().join("fbflow_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.field");
        u.write_field(&path).unwrap();
        let back = ScalarField::read_field(&path).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn from_values_validates() {
        let g = unit_square(4);
        assert!(ScalarField::from_values(&g, vec![0.0; 3]).is_err());
        let mut vals = vec![0.0; g.n_nodes()];
        vals[5] = f64::NAN;
        assert!(ScalarField::from_values(&g, vals).is_err());
    }

    #[test]
    fn bilinear_sample_reproduces_bilinear_functions() {
        let g = unit_square(9);
        let u = ScalarField::from_fn(&g, |x| 1.0 + 2.0 * x[0] - 3.0 * x[1] + 4.0 * x[0] * x[1]).unwrap();
        for &(x, y) in &[(0.13, 0.77), (0.5, 0.5), (0.999, 0.001)] {
            let exact = 1.0 + 2.0 * x - 3.0 * y + 4.0 * x * y;
            let got = u.sample([x, y]).unwrap();
            assert!((got - exact).abs() < 1e-12, "({x},{y}): {got} vs {exact}");
        }
        assert!(u.sample([1.5, 0.5]).is_err());
    }

    #[test]
    fn exponent_field_bounds_and_floor() {
        let g = Grid::new_1d(0.0, 1.0, 33).unwrap();
        let p = ExponentField::new(ScalarField::from_fn(&g, |x| 2.0 + 0.5 * x[0]).unwrap()).unwrap();
        assert_eq!(p.p_min(), 2.0);
        assert_eq!(p.p_max(), 2.5);
        assert!((p.lipschitz_l() - 0.5).abs() < 1e-12);
        let low = ScalarField::from_fn(&g, |x| 1.0 + 0.01 * x[0]).unwrap();
        assert!(ExponentField::new(low).is_err());
    }

    proptest! {
        #[test]
        fn integrate_is_linear(a in -3.0_f64..3.0, b in -3.0_f64..3.0) {
            let g = unit_square(13);
            let f1 = |_: [usize; 2], x: [f64; 2]| x[0] * x[1] + 0.3;
            let f2 = |_: [usize; 2], x: [f64; 2]| (2.9 * x[0]).sin();
            let combined = integrate_cells(&g, |c, x| a * f1(c, x) + b * f2(c, x));
            let separate = a * integrate_cells(&g, f1) + b * integrate_cells(&g, f2);
            prop_assert!((combined - separate).abs() <= 1e-12 * (1.0 + separate.abs()));
        }

        #[test]
        fn integrate_is_translation_invariant(shift in -5.0_f64..5.0) {
            let g0 = Grid::new_1d(0.0, 1.0, 41).unwrap();
            let g1 = Grid::new_1d(shift, 1.0, 41).unwrap();
            let f = |x: f64| (3.0 * x).cos() + x * x;
            let v0 = integrate_cells(&g0, |_, x| f(x[0]));
            let v1 = integrate_cells(&g1, |_, x| f(x[0] - shift));
            prop_assert!((v0 - v1).abs() <= 1e-10 * (1.0 + v0.abs()));
        }

        #[test]
        fn balls_nest_with_radius(r1 in 0.01_f64..0.5, r2 in 0.01_f64..0.5) {
            let (small, big) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let g = unit_square(21);
            let inner = ball_nodes(&g, [0.4, 0.6], small);
            let outer = ball_nodes(&g, [0.4, 0.6], big);
            for idx in &inner {
                prop_assert!(outer.contains(idx));
            }
        }

        #[test]
        fn gradient_exact_on_random_affine(a in -4.0_f64..4.0, b in -4.0_f64..4.0, c in -4.0_f64..4.0) {
            let g = Grid::new_2d([-0.5, 0.25], [1.5, 2.0], [7, 9]).unwrap();
            let u = ScalarField::from_fn(&g, |x| a + b * x[0] + c * x[1]).unwrap();
            for cell in g.cells() {
                let grad = cell_gradient(&u, cell).unwrap();
                let scale = 1.0 + b.abs() + c.abs();
                prop_assert!((grad[0] - b).abs() <= 1e-12 * scale);
                prop_assert!((grad[1] - c).abs() <= 1e-12 * scale);
            }
        }
    }
}
