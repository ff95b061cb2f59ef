//! The two energies of the model: the sharp-interface functional
//! J(v) = ∫ a|∇v|^{p(x)}/p(x) + λ·χ_{v>0} + f·v and its smooth regularization
//! J_ε with the indicator replaced by B_ε(v). Also the reaction family
//! β_ε/B_ε, the flux A(x,ξ) = a(x)|ξ|^{p(x)−2}ξ, the monotonicity probe, and
//! the analytic nodal gradient of J_ε.

use crate::error::{Error, Result};
use crate::grid::{cell_gradient_unchecked, same_grid, ExponentField, Grid, ScalarField};
use serde::Serialize;

/// Construction-time check that the numerically integrated reaction mass
/// matches the requested M (relative once M exceeds 1).
const MASS_CHECK_TOL: f64 = 1e-10;
/// Simpson panels for that check; exact for the polynomial shapes anyway.
const MASS_CHECK_PANELS: usize = 2048;

/// Shape of the normalized reaction term on (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BetaShape {
    /// s ↦ 6Ms(1−s): the default profile.
    Quadratic,
    /// s ↦ 12Ms²(1−s): a second profile with the same mass, used to confirm
    /// that limit quantities depend on β only through M.
    Cubic,
}

/// A reaction profile β: positive on (0,1), zero outside, Lipschitz, with
/// total mass M = ∫₀¹ β validated at construction.
#[derive(Debug, Clone, Copy)]
pub struct BetaProfile {
    shape: BetaShape,
    mass: f64,
    lipschitz: f64,
}

impl BetaProfile {
    pub fn quadratic(mass: f64) -> Result<BetaProfile> {
        Self::build(BetaShape::Quadratic, mass, 6.0 * mass)
    }

    pub fn cubic(mass: f64) -> Result<BetaProfile> {
        Self::build(BetaShape::Cubic, mass, 12.0 * mass)
    }

    fn build(shape: BetaShape, mass: f64, lipschitz: f64) -> Result<BetaProfile> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::contract(format!(
                "reaction mass must be positive and finite, got {mass}"
            )));
        }
        let profile = BetaProfile {
            shape,
            mass,
            lipschitz,
        };
        let integrated = profile.simpson_mass();
        if (integrated - mass).abs() > MASS_CHECK_TOL * mass.max(1.0) {
            return Err(Error::numeric(format!(
                "profile mass check failed: quadrature gives {integrated}, wanted {mass}"
            )));
        }
        Ok(profile)
    }

    fn simpson_mass(&self) -> f64 {
        let n = MASS_CHECK_PANELS;
        let h = 1.0 / n as f64;
        let mut s = self.eval(0.0) + self.eval(1.0);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.eval(k as f64 * h);
        }
        s * h / 3.0
    }

    /// β(s): zero outside (0, 1).
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        match self.shape {
            BetaShape::Quadratic => 6.0 * self.mass * s * (1.0 - s),
            BetaShape::Cubic => 12.0 * self.mass * s * s * (1.0 - s),
        }
    }

    /// β′(s): zero outside (0, 1), closed form inside.
    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        match self.shape {
            BetaShape::Quadratic => 6.0 * self.mass * (1.0 - 2.0 * s),
            BetaShape::Cubic => 12.0 * self.mass * s * (2.0 - 3.0 * s),
        }
    }

    /// B(s) = ∫₀^s β: zero for s ≤ 0, M for s ≥ 1, closed form between.
    #[inline]
    pub fn primitive(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= 1.0 {
            self.mass
        } else {
            match self.shape {
                BetaShape::Quadratic => self.mass * s * s * (3.0 - 2.0 * s),
                BetaShape::Cubic => self.mass * s * s * s * (4.0 - 3.0 * s),
            }
        }
    }

    pub fn shape(&self) -> BetaShape {
        self.shape
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Rescaled reaction β_ε(s) = (1/ε)β(s/ε), supported in (0, ε).
pub fn beta_eps(s: f64, eps: f64, beta: &BetaProfile) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    Ok(beta.eval(s / eps) / eps)
}

/// B_ε(s) = ∫₀^s β_ε = B(s/ε): nondecreasing, saturates at M for s ≥ ε.
pub fn b_eps(s: f64, eps: f64, beta: &BetaProfile) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    Ok(beta.primitive(s / eps))
}

/// One energy evaluation split into its three integrands; the total is the
/// sum by construction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBreakdown {
    pub gradient_term: f64,
    pub interface_term: f64,
    pub forcing_term: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_parts(gradient_term: f64, interface_term: f64, forcing_term: f64) -> Self {
        EnergyBreakdown {
            gradient_term,
            interface_term,
            forcing_term,
            total: gradient_term + interface_term + forcing_term,
        }
    }
}

/// Coefficients of one problem instance: the exponent field p(x), the sharp
/// interface weight λ(x), the regularization pair (β, ε) when present, the
/// forcing f, and the optional diffusion weight a(x) (default ≡ 1). All
/// bounds are validated nodewise at construction and recorded.
#[derive(Debug, Clone)]
pub struct ProblemData {
    p: ExponentField,
    lambda: ScalarField,
    lambda_bounds: (f64, f64),
    beta: Option<BetaProfile>,
    eps: Option<f64>,
    f: ScalarField,
    a: Option<ScalarField>,
    a_bounds: (f64, f64),
}

impl ProblemData {
    /// Sharp-interface data: λ must be strictly positive everywhere.
    pub fn sharp(p: ExponentField, lambda: ScalarField, f: ScalarField) -> Result<ProblemData> {
        same_grid(p.field().grid(), lambda.grid())?;
        same_grid(p.field().grid(), f.grid())?;
        let lambda_bounds = (lambda.min(), lambda.max());
        if !(lambda_bounds.0 > 0.0) {
            return Err(Error::contract(format!(
                "interface weight must be strictly positive, found min {}",
                lambda_bounds.0
            )));
        }
        Ok(ProblemData {
            p,
            lambda,
            lambda_bounds,
            beta: None,
            eps: None,
            f,
            a: None,
            a_bounds: (1.0, 1.0),
        })
    }

    /// Regularized data: carries (β, ε); the induced sharp weight is the
    /// constant λ ≡ M, the mass surviving the ε → 0 limit.
    pub fn regularized(
        p: ExponentField,
        beta: BetaProfile,
        eps: f64,
        f: ScalarField,
    ) -> Result<ProblemData> {
        let grid = p.field().grid().clone();
        let lambda = ScalarField::from_fn(&grid, |_| beta.mass())?;
        let mut data = Self::sharp(p, lambda, f)?;
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::contract(format!("eps must be positive, got {eps}")));
        }
        data.beta = Some(beta);
        data.eps = Some(eps);
        Ok(data)
    }

    /// Attach a diffusion weight a(x); must be strictly positive.
    pub fn with_weight(mut self, a: ScalarField) -> Result<ProblemData> {
        same_grid(self.grid(), a.grid())?;
        let bounds = (a.min(), a.max());
        if !(bounds.0 > 0.0) {
            return Err(Error::contract(format!(
                "diffusion weight must be strictly positive, found min {}",
                bounds.0
            )));
        }
        self.a = Some(a);
        self.a_bounds = bounds;
        Ok(self)
    }

    /// Move to a new regularization width (continuation stages do this).
    pub fn set_eps(&mut self, eps: f64) -> Result<()> {
        if self.beta.is_none() {
            return Err(Error::contract(
                "cannot set eps on sharp-interface data without a reaction profile",
            ));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::contract(format!("eps must be positive, got {eps}")));
        }
        self.eps = Some(eps);
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        self.p.field().grid()
    }

    pub fn exponents(&self) -> &ExponentField {
        &self.p
    }

    pub fn lambda(&self) -> &ScalarField {
        &self.lambda
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        self.lambda_bounds
    }

    pub fn forcing(&self) -> &ScalarField {
        &self.f
    }

    pub fn weight(&self) -> Option<&ScalarField> {
        self.a.as_ref()
    }

    pub fn weight_bounds(&self) -> (f64, f64) {
        self.a_bounds
    }

    pub fn beta(&self) -> Option<&BetaProfile> {
        self.beta.as_ref()
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub(crate) fn require_regularized(&self) -> Result<(&BetaProfile, f64)> {
        match (self.beta.as_ref(), self.eps) {
            (Some(b), Some(e)) => Ok((b, e)),
            _ => Err(Error::contract(
                "operation needs regularized data carrying a reaction profile and eps",
            )),
        }
    }

    #[inline]
    fn weight_at(&self, cell: [usize; 2]) -> f64 {
        match &self.a {
            Some(a) => a.cell_center_value(cell),
            None => 1.0,
        }
    }
}

/// Sharp functional J(u) with the positivity set read off cell-center values
/// strictly above `threshold`.
pub fn energy_j(u: &ScalarField, data: &ProblemData, threshold: f64) -> Result<EnergyBreakdown> {
    same_grid(u.grid(), data.grid())?;
    if !(threshold >= 0.0) {
        return Err(Error::contract(format!(
            "positivity threshold must be nonnegative, got {threshold}"
        )));
    }
    let g = u.grid();
    let mut grad_t = 0.0;
    let mut int_t = 0.0;
    let mut force_t = 0.0;
    for lin in 0..g.n_cells() {
        let cell = g.cell_unlin(lin);
        let gr = cell_gradient_unchecked(u, cell);
        let g2 = gr[0] * gr[0] + gr[1] * gr[1];
        let pc = data.p.cell_center_value(cell);
        let pow = if pc == 2.0 { g2 } else { g2.powf(0.5 * pc) };
        grad_t += data.weight_at(cell) * pow / pc;
        let uc = u.cell_center_value(cell);
        if uc > threshold {
            int_t += data.lambda.cell_center_value(cell);
        }
        force_t += data.f.cell_center_value(cell) * uc;
    }
    let vol = g.cell_vol();
    Ok(EnergyBreakdown::from_parts(
        grad_t * vol,
        int_t * vol,
        force_t * vol,
    ))
}

/// Regularized functional J_ε(u), with B_ε(u) replacing the indicator.
pub fn energy_jeps(u: &ScalarField, data: &ProblemData) -> Result<EnergyBreakdown> {
    data.require_regularized()?;
    objective_breakdown(u, data, true)
}

/// Shared smooth-objective evaluation: gradient and forcing terms always, the
/// B_ε term only when `include_reaction` is set (the Dirichlet sub-problem
/// drops it). This is the single energy path every solver iteration uses.
pub(crate) fn objective_breakdown(
    u: &ScalarField,
    data: &ProblemData,
    include_reaction: bool,
) -> Result<EnergyBreakdown> {
    same_grid(u.grid(), data.grid())?;
    let reaction = if include_reaction {
        let (beta, eps) = data.require_regularized()?;
        Some((beta, 1.0 / eps))
    } else {
        None
    };
    let g = u.grid();
    let uv = u.values();
    let pv = data.p.field().values();
    let fv = data.f.values();
    let av = data.a.as_ref().map(|a| a.values());
    let mut grad_t = 0.0;
    let mut int_t = 0.0;
    let mut force_t = 0.0;
    if g.dim() == 1 {
        let inv_h = 1.0 / g.spacing()[0];
        for i in 0..g.cells_along(0) {
            let gr = (uv[i + 1] - uv[i]) * inv_h;
            let g2 = gr * gr;
            let pc = 0.5 * (pv[i] + pv[i + 1]);
            let ac = av.map_or(1.0, |a| 0.5 * (a[i] + a[i + 1]));
            let pow = if pc == 2.0 { g2 } else { g2.powf(0.5 * pc) };
            grad_t += ac * pow / pc;
            let uc = 0.5 * (uv[i] + uv[i + 1]);
            if let Some((beta, inv_eps)) = reaction {
                int_t += beta.primitive(uc * inv_eps);
            }
            force_t += 0.5 * (fv[i] + fv[i + 1]) * uc;
        }
    } else {
        let [n0, n1] = g.n();
        let inv2h0 = 0.5 / g.spacing()[0];
        let inv2h1 = 0.5 / g.spacing()[1];
        for c0 in 0..n0 - 1 {
            for c1 in 0..n1 - 1 {
                let i00 = c0 * n1 + c1;
                let i01 = i00 + 1;
                let i10 = i00 + n1;
                let i11 = i10 + 1;
                let (v00, v01, v10, v11) = (uv[i00], uv[i01], uv[i10], uv[i11]);
                let gx = ((v10 - v00) + (v11 - v01)) * inv2h0;
                let gy = ((v01 - v00) + (v11 - v10)) * inv2h1;
                let g2 = gx * gx + gy * gy;
                let pc = 0.25 * (pv[i00] + pv[i01] + pv[i10] + pv[i11]);
                let ac = av.map_or(1.0, |a| 0.25 * (a[i00] + a[i01] + a[i10] + a[i11]));
                let pow = if pc == 2.0 { g2 } else { g2.powf(0.5 * pc) };
                grad_t += ac * pow / pc;
                let uc = 0.25 * (v00 + v01 + v10 + v11);
                if let Some((beta, inv_eps)) = reaction {
                    int_t += beta.primitive(uc * inv_eps);
                }
                force_t += 0.25 * (fv[i00] + fv[i01] + fv[i10] + fv[i11]) * uc;
            }
        }
    }
    let vol = g.cell_vol();
    Ok(EnergyBreakdown::from_parts(
        grad_t * vol,
        int_t * vol,
        force_t * vol,
    ))
}

/// The flux A(x,ξ) = a(x)(|ξ|² + δ²)^{(p(x)−2)/2}ξ at a cell center; δ = 0
/// gives the exact flux, with the ξ = 0, p < 2 singularity resolved to the
/// zero vector (its limit along every ray).
pub fn flux(data: &ProblemData, cell: [usize; 2], xi: [f64; 2], delta: f64) -> Result<[f64; 2]> {
    if !(delta >= 0.0) {
        return Err(Error::contract(format!(
            "flux regularization must be nonnegative, got {delta}"
        )));
    }
    let n_cells = [data.grid().cells_along(0), data.grid().cells_along(1)];
    if cell[0] >= n_cells[0] || cell[1] >= n_cells[1] {
        return Err(Error::Index(format!(
            "cell {cell:?} outside {n_cells:?} cell block"
        )));
    }
    let n2 = xi[0] * xi[0] + xi[1] * xi[1] + delta * delta;
    if n2 == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let pc = data.exponents().cell_center_value(cell);
    let w = data.weight_at(cell)
        * if pc == 2.0 {
            1.0
        } else {
            n2.powf(0.5 * pc - 1.0)
        };
    Ok([w * xi[0], w * xi[1]])
}

/// Monotonicity probe for the flux comparison: returns (lhs, rhs) where
/// rhs = (|η|^{p−2}η − |ξ|^{p−2}ξ)·(η−ξ) and lhs is |η−ξ|^p for p ≥ 2 or
/// |η−ξ|²(|η|+|ξ|)^{p−2} for p < 2. rhs > 0 whenever η ≠ ξ; lhs stays within
/// a bounded multiple of rhs (the multiple is recorded empirically, not asserted).
pub fn check_monotonicity(xi: [f64; 2], eta: [f64; 2], p_val: f64) -> (f64, f64) {
    debug_assert!(p_val > 1.0, "exponent must exceed 1, got {p_val}");
    let d = [eta[0] - xi[0], eta[1] - xi[1]];
    let dn2 = d[0] * d[0] + d[1] * d[1];
    if dn2 == 0.0 {
        return (0.0, 0.0);
    }
    let flux_of = |v: [f64; 2]| -> [f64; 2] {
        let n2 = v[0] * v[0] + v[1] * v[1];
        if n2 == 0.0 {
            return [0.0, 0.0];
        }
        let w = if p_val == 2.0 { 1.0 } else { n2.powf(0.5 * p_val - 1.0) };
        [w * v[0], w * v[1]]
    };
    let fe = flux_of(eta);
    let fx = flux_of(xi);
    let rhs = (fe[0] - fx[0]) * d[0] + (fe[1] - fx[1]) * d[1];
    let lhs = if p_val >= 2.0 {
        if p_val == 2.0 {
            dn2
        } else {
            dn2.powf(0.5 * p_val)
        }
    } else {
        let ne = (eta[0] * eta[0] + eta[1] * eta[1]).sqrt();
        let nx = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        dn2 * (ne + nx).powf(p_val - 2.0)
    };
    (lhs, rhs)
}

/// Analytic nodal gradient of the discrete J_ε. Flux terms are scattered from
/// cells to their corners; reaction and forcing weights spread evenly over
/// the corners. Boundary nodes are Dirichlet-fixed and carry zero gradient.
/// `delta` regularizes the p ≠ 2 flux factor; the energy itself stays exact.
pub fn grad_energy_jeps(u: &ScalarField, data: &ProblemData, delta: f64) -> Result<ScalarField> {
    data.require_regularized()?;
    let out = objective_gradient(u, data, delta, true)?;
    ScalarField::from_values(u.grid(), out)
}

/// Gradient of the smooth objective (see [`objective_breakdown`]); raw nodal
/// buffer with boundary entries zeroed.
pub(crate) fn objective_gradient(
    u: &ScalarField,
    data: &ProblemData,
    delta: f64,
    include_reaction: bool,
) -> Result<Vec<f64>> {
    same_grid(u.grid(), data.grid())?;
    let reaction = if include_reaction {
        let (beta, eps) = data.require_regularized()?;
        Some((beta, 1.0 / eps))
    } else {
        None
    };
    if !(delta >= 0.0) {
        return Err(Error::contract(format!(
            "flux regularization must be nonnegative, got {delta}"
        )));
    }
    let g = u.grid();
    let vol = g.cell_vol();
    let d2 = delta * delta;
    let uv = u.values();
    let pv = data.p.field().values();
    let fv = data.f.values();
    let av = data.a.as_ref().map(|a| a.values());
    let mut out = vec![0.0; g.n_nodes()];
    if g.dim() == 1 {
        let inv_h = 1.0 / g.spacing()[0];
        for i in 0..g.cells_along(0) {
            let gr = (uv[i + 1] - uv[i]) * inv_h;
            let pc = 0.5 * (pv[i] + pv[i + 1]);
            let ac = av.map_or(1.0, |a| 0.5 * (a[i] + a[i + 1]));
            let w = if pc == 2.0 {
                ac
            } else {
                ac * (gr * gr + d2).powf(0.5 * pc - 1.0)
            };
            let uc = 0.5 * (uv[i] + uv[i + 1]);
            let mut rc = 0.5 * (fv[i] + fv[i + 1]);
            if let Some((beta, inv_eps)) = reaction {
                rc += beta.eval(uc * inv_eps) * inv_eps;
            }
            let flux_term = w * gr * inv_h;
            out[i] += (0.5 * rc - flux_term) * vol;
            out[i + 1] += (0.5 * rc + flux_term) * vol;
        }
    } else {
        let [n0, n1] = g.n();
        let inv2h0 = 0.5 / g.spacing()[0];
        let inv2h1 = 0.5 / g.spacing()[1];
        for c0 in 0..n0 - 1 {
            for c1 in 0..n1 - 1 {
                let i00 = c0 * n1 + c1;
                let i01 = i00 + 1;
                let i10 = i00 + n1;
                let i11 = i10 + 1;
                let (v00, v01, v10, v11) = (uv[i00], uv[i01], uv[i10], uv[i11]);
                let gx = ((v10 - v00) + (v11 - v01)) * inv2h0;
                let gy = ((v01 - v00) + (v11 - v10)) * inv2h1;
                let pc = 0.25 * (pv[i00] + pv[i01] + pv[i10] + pv[i11]);
                let ac = av.map_or(1.0, |a| 0.25 * (a[i00] + a[i01] + a[i10] + a[i11]));
                let w = if pc == 2.0 {
                    ac
                } else {
                    ac * (gx * gx + gy * gy + d2).powf(0.5 * pc - 1.0)
                };
                let uc = 0.25 * (v00 + v01 + v10 + v11);
                let mut rc = 0.25 * (fv[i00] + fv[i01] + fv[i10] + fv[i11]);
                if let Some((beta, inv_eps)) = reaction {
                    rc += beta.eval(uc * inv_eps) * inv_eps;
                }
                let fx = w * gx * inv2h0;
                let fy = w * gy * inv2h1;
                let r4 = 0.25 * rc;
                out[i00] += (r4 - fx - fy) * vol;
                out[i01] += (r4 - fx + fy) * vol;
                out[i10] += (r4 + fx - fy) * vol;
                out[i11] += (r4 + fx + fy) * vol;
            }
        }
    }
    for lin in 0..out.len() {
        if g.is_boundary_node(g.node_unlin(lin)) {
            out[lin] = 0.0;
        }
    }
    Ok(out)
}

/// Curvature regularization for the descent metric: caps the p < 2 flux
/// curvature |∇u|^{p−2} near flat cells. Enters only step scaling, never the
/// gradient or energy, so it cannot bias minimizers.
const HESS_REG: f64 = 1e-8;
/// Positive floor for metric entries so directions stay finite.
const METRIC_FLOOR: f64 = 1e-18;

/// Diagonal curvature estimate of the objective at `u`, one positive entry
/// per node: cell flux curvature a·(p−1)(|∇u|² + δ²)^{(p−2)/2}·|∂∇u/∂u_i|²
/// plus the positive part of the reaction curvature β′_ε(u_c)/ε², both scaled
/// by cell volume and corner weights. Used by the solver as a Jacobi metric
/// for exponents below 2, where the flux curvature blows up at flat cells and
/// unscaled gradient steps crawl. Boundary entries are set to 1.
pub(crate) fn objective_metric(
    u: &ScalarField,
    data: &ProblemData,
    include_reaction: bool,
) -> Result<Vec<f64>> {
    same_grid(u.grid(), data.grid())?;
    let reaction = if include_reaction {
        let (beta, eps) = data.require_regularized()?;
        Some((beta, 1.0 / eps))
    } else {
        None
    };
    let g = u.grid();
    let vol = g.cell_vol();
    let d2 = HESS_REG * HESS_REG;
    let uv = u.values();
    let pv = data.p.field().values();
    let av = data.a.as_ref().map(|a| a.values());
    let mut out = vec![0.0_f64; g.n_nodes()];
    if g.dim() == 1 {
        let inv_h = 1.0 / g.spacing()[0];
        for i in 0..g.cells_along(0) {
            let gr = (uv[i + 1] - uv[i]) * inv_h;
            let pc = 0.5 * (pv[i] + pv[i + 1]);
            let ac = av.map_or(1.0, |a| 0.5 * (a[i] + a[i + 1]));
            let shape = if pc == 2.0 {
                1.0
            } else {
                (gr * gr + d2).powf(0.5 * pc - 1.0)
            };
            let wflux = ac * (pc - 1.0) * shape * inv_h * inv_h * vol;
            let mut rcur = 0.0;
            if let Some((beta, inv_eps)) = reaction {
                let uc = 0.5 * (uv[i] + uv[i + 1]);
                rcur = beta.derivative(uc * inv_eps).max(0.0) * inv_eps * inv_eps * vol * 0.25;
            }
            out[i] += wflux + rcur;
            out[i + 1] += wflux + rcur;
        }
    } else {
        let [n0, n1] = g.n();
        let inv2h0 = 0.5 / g.spacing()[0];
        let inv2h1 = 0.5 / g.spacing()[1];
        let corner2 = inv2h0 * inv2h0 + inv2h1 * inv2h1;
        for c0 in 0..n0 - 1 {
            for c1 in 0..n1 - 1 {
                let i00 = c0 * n1 + c1;
                let i01 = i00 + 1;
                let i10 = i00 + n1;
                let i11 = i10 + 1;
                let (v00, v01, v10, v11) = (uv[i00], uv[i01], uv[i10], uv[i11]);
                let gx = ((v10 - v00) + (v11 - v01)) * inv2h0;
                let gy = ((v01 - v00) + (v11 - v10)) * inv2h1;
                let pc = 0.25 * (pv[i00] + pv[i01] + pv[i10] + pv[i11]);
                let ac = av.map_or(1.0, |a| 0.25 * (a[i00] + a[i01] + a[i10] + a[i11]));
                let shape = if pc == 2.0 {
                    1.0
                } else {
                    (gx * gx + gy * gy + d2).powf(0.5 * pc - 1.0)
                };
                let wflux = ac * (pc - 1.0) * shape * corner2 * vol;
                let mut rcur = 0.0;
                if let Some((beta, inv_eps)) = reaction {
                    let uc = 0.25 * (v00 + v01 + v10 + v11);
                    rcur = beta.derivative(uc * inv_eps).max(0.0)
                        * inv_eps
                        * inv_eps
                        * vol
                        * (1.0 / 16.0);
                }
                let add = wflux + rcur;
                out[i00] += add;
                out[i01] += add;
                out[i10] += add;
                out[i11] += add;
            }
        }
    }
    for lin in 0..out.len() {
        if g.is_boundary_node(g.node_unlin(lin)) {
            out[lin] = 1.0;
        } else {
            out[lin] = out[lin].max(METRIC_FLOOR);
        }
    }
    Ok(out)
}
