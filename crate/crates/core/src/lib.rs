//! Core library of the free-boundary laboratory: grids and fields, variable
//! exponent utilities, sharp and regularized energies, the descent solver with
//! continuation, interface diagnostics, and independent reference oracles.

pub mod energy;
pub mod error;
pub mod fbanalysis;
pub mod grid;
pub mod oracles;
pub mod solver;
pub mod vexp;

pub use energy::{
    b_eps, beta_eps, check_monotonicity, energy_j, energy_jeps, flux, grad_energy_jeps,
    BetaProfile, BetaShape, EnergyBreakdown, ProblemData,
};
pub use error::{Error, Result};
pub use fbanalysis::{
    ball_condition_check, blowup_fit, density_scan, extract_fb, fb_gradient_trace, fb_report,
    growth_scan, halfplane_development_check, lambda_star, nondegeneracy_scan, BallCondition,
    BlowupFit, DensityScan, FBReport, GradientTrace, GrowthConstants, GrowthScan, NondegScan,
    PointRecord, ScanConstant,
};
pub use grid::{
    ball_nodes, ball_values, cell_gradient, integrate_cells, ExponentField, Grid, ScalarField,
    ScanWindow, P_MIN_FLOOR,
};
pub use oracles::{
    brute_force_1d, ode_profile_1d, ode_profile_energy, planar_oracle, BruteForceResult,
    FirstIntegral1D, OdeProfile, PlanarSolution, BRUTE_FORCE_SCOPE,
};
pub use solver::{
    check_comparison, check_euler_lagrange, check_harnack, minimize_j_continuation,
    minimize_j_continuation_traced, minimize_jeps, minimize_jeps_traced, solve_dirichlet,
    solve_dirichlet_traced, threshold_field, ContinuationSchedule, ElResiduals, IterTrace,
    SolveConfig, SolveResult, StageReport, StepRule,
};
pub use vexp::{
    check_holder, check_norm_modular_sandwich, check_poincare, dual_exponent, luxemburg_norm,
    modular, Modular, DUAL_P_MAX,
};
