//! Experiment configuration: `[section]` headers over `key = value` lines.
//! Comments start with `#`. Every diagnostic names the file and line it came
//! from, and keys no section consumes are errors, so configs stay diffable
//! and typo-proof.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use fbflow_core::{
    BetaProfile, ContinuationSchedule, ExponentField, Grid, ProblemData, ScalarField, SolveConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sharp-interface data (explicit λ field); verification only.
    Sharp,
    /// One regularized solve at a fixed ε.
    Regularized,
    /// ε-ladder toward the sharp problem.
    SharpContinuation,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sharp => "sharp",
            Mode::Regularized => "regularized",
            Mode::SharpContinuation => "sharp-continuation",
        }
    }
}

pub struct ScanSpec {
    /// Level whose crossings define the interface; scans run on the excess
    /// above it.
    pub threshold: f64,
    /// Radius ladder for growth and nondegeneracy scans.
    pub radii: Vec<f64>,
    /// Radius ladder for density scans (small radii under-resolve fractions,
    /// so this ladder usually stops earlier).
    pub density_radii: Vec<f64>,
    pub n_samples: usize,
    pub max_points: usize,
    pub slope_tol: f64,
    pub growth_window: [f64; 2],
    pub nondeg_min: f64,
    pub density_window: [f64; 2],
    pub blowup_tol: f64,
    pub blowup_residual_max: f64,
    pub tol_equality: f64,
}

pub struct ExperimentConfig {
    pub grid: Grid,
    pub mode: Mode,
    pub p: ExponentField,
    pub lambda: Option<ScalarField>,
    pub beta: Option<BetaProfile>,
    pub eps: Option<f64>,
    /// Explicit ladder; `None` in continuation mode means the automatic one.
    pub eps_schedule: Option<Vec<f64>>,
    pub f: ScalarField,
    pub weight: Option<ScalarField>,
    pub boundary: ScalarField,
    pub solver: SolveConfig,
    pub warm_start: bool,
    pub scan: ScanSpec,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn problem_data(&self) -> Result<ProblemData, CliError> {
        let data = match self.mode {
            Mode::Sharp => ProblemData::sharp(
                self.p.clone(),
                self.lambda.clone().expect("validated at load"),
                self.f.clone(),
            )?,
            Mode::Regularized | Mode::SharpContinuation => ProblemData::regularized(
                self.p.clone(),
                self.beta.clone().expect("validated at load"),
                self.initial_eps()?,
                self.f.clone(),
            )?,
        };
        Ok(match &self.weight {
            Some(a) => data.with_weight(a.clone())?,
            None => data,
        })
    }

    pub fn initial_eps(&self) -> Result<f64, CliError> {
        match self.mode {
            Mode::Regularized => Ok(self.eps.expect("validated at load")),
            Mode::SharpContinuation => Ok(self.schedule()?.eps_list[0]),
            Mode::Sharp => Err(CliError::Config(
                "sharp mode carries no regularization level".into(),
            )),
        }
    }

    pub fn schedule(&self) -> Result<ContinuationSchedule, CliError> {
        match &self.eps_schedule {
            Some(list) => Ok(ContinuationSchedule::new(list.clone(), self.warm_start)?),
            None => {
                let mut sched = ContinuationSchedule::default_for(&self.boundary)?;
                sched.warm_start = self.warm_start;
                Ok(sched)
            }
        }
    }
}

/// Raw parse result: every `key = value` with its line, consumed key by key
/// so leftovers can be reported as unknown.
struct Raw {
    path: PathBuf,
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl Raw {
    fn err(&self, line: usize, msg: impl Display) -> CliError {
        CliError::Config(format!("{}:{line}: {msg}", self.path.display()))
    }

    fn missing(&self, section: &str, key: &str) -> CliError {
        CliError::Config(format!(
            "{}: missing required key `{key}` in section [{section}]",
            self.path.display()
        ))
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<(T, usize)>, CliError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => match v.parse::<T>() {
                Ok(t) => Ok(Some((t, line))),
                Err(_) => Err(self.err(line, format!("`{key}` wants {what}, got `{v}`"))),
            },
        }
    }

    fn take_f64(&mut self, section: &str, key: &str) -> Result<Option<(f64, usize)>, CliError> {
        self.take_parsed(section, key, "a number")
    }

    fn take_usize(&mut self, section: &str, key: &str) -> Result<Option<(usize, usize)>, CliError> {
        self.take_parsed(section, key, "a nonnegative integer")
    }

    fn take_bool(&mut self, section: &str, key: &str) -> Result<Option<(bool, usize)>, CliError> {
        self.take_parsed(section, key, "true or false")
    }

    fn take_f64_list(
        &mut self,
        section: &str,
        key: &str,
    ) -> Result<Option<(Vec<f64>, usize)>, CliError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => {
                let parsed: Result<Vec<f64>, _> =
                    v.split(',').map(|t| t.trim().parse::<f64>()).collect();
                match parsed {
                    Ok(list) => Ok(Some((list, line))),
                    Err(_) => Err(self.err(
                        line,
                        format!("`{key}` wants a comma-separated list of numbers, got `{v}`"),
                    )),
                }
            }
        }
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some(((section, key), (_, line))) = self.entries.into_iter().next() {
            let path = self.path.display();
            return Err(CliError::Config(format!(
                "{path}:{line}: unknown key `{key}` in section [{section}]"
            )));
        }
        Ok(())
    }
}

fn parse_raw(path: &Path) -> Result<Raw, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut raw = Raw {
        path: path.to_path_buf(),
        entries: BTreeMap::new(),
    };
    let mut section = String::new();
    for (i, line_text) in text.lines().enumerate() {
        let line = i + 1;
        let body = match line_text.split_once('#') {
            Some((before, _)) => before.trim(),
            None => line_text.trim(),
        };
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| raw.err(line, "section header must close with `]`"))?;
            section = name.trim().to_string();
            if section.is_empty() {
                return Err(raw.err(line, "section name is empty"));
            }
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| raw.err(line, "expected `key = value` or `[section]`"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(raw.err(line, "key is empty"));
        }
        if section.is_empty() {
            return Err(raw.err(line, format!("key `{key}` appears before any [section]")));
        }
        if let Some((_, first)) = raw
            .entries
            .insert((section.clone(), key.clone()), (value, line))
        {
            return Err(raw.err(
                line,
                format!("duplicate key `{key}` in section [{section}] (first set on line {first})"),
            ));
        }
    }
    Ok(raw)
}

fn split_args<const N: usize>(
    raw: &Raw,
    line: usize,
    name: &str,
    args: Option<&str>,
) -> Result<[f64; N], CliError> {
    let args = args.unwrap_or("");
    let parts: Vec<&str> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',').collect()
    };
    if parts.len() != N {
        return Err(raw.err(
            line,
            format!("profile `{name}` wants {N} comma-separated numbers, got `{args}`"),
        ));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| raw.err(line, format!("profile `{name}`: bad number `{part}`")))?;
    }
    Ok(out)
}

/// Materialize a field from a profile spec. Every analytic profile is a
/// function of the first coordinate; `file:` loads a field written by this
/// tool and insists it lives on the configured grid.
fn field_from_spec(
    raw: &Raw,
    spec: &str,
    line: usize,
    grid: &Grid,
    base_dir: &Path,
) -> Result<ScalarField, CliError> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let field = match name {
        "const" => {
            let [c] = split_args::<1>(raw, line, name, args)?;
            ScalarField::from_fn(grid, |_| c)
        }
        "linear" => {
            let [a, b] = split_args::<2>(raw, line, name, args)?;
            ScalarField::from_fn(grid, move |x| a + b * x[0])
        }
        "sin" => {
            let [] = split_args::<0>(raw, line, name, args)?;
            ScalarField::from_fn(grid, |x| (std::f64::consts::PI * x[0]).sin())
        }
        "bump" => {
            let [center, width, height] = split_args::<3>(raw, line, name, args)?;
            if width <= 0.0 {
                return Err(raw.err(line, "profile `bump`: width must be positive"));
            }
            ScalarField::from_fn(grid, move |x| {
                let t = (x[0] - center) / width;
                if t.abs() < 1.0 {
                    height * (1.0 - 1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            })
        }
        "ramp" => {
            let [alpha, offset] = split_args::<2>(raw, line, name, args)?;
            ScalarField::from_fn(grid, move |x| alpha * (x[0] - offset).max(0.0))
        }
        "file" => {
            let rel = args.filter(|a| !a.is_empty()).ok_or_else(|| {
                raw.err(line, "profile `file` wants a path, as in `file:fields/u.field`")
            })?;
            let path = base_dir.join(rel);
            let field = ScalarField::read_field(&path)
                .map_err(|e| raw.err(line, format!("{}: {e}", path.display())))?;
            if field.grid() != grid {
                return Err(raw.err(
                    line,
                    format!("{}: field grid does not match the [grid] section", path.display()),
                ));
            }
            return Ok(field);
        }
        other => {
            return Err(raw.err(
                line,
                format!(
                    "unknown profile `{other}` (const:c, linear:a,b, sin, \
                     bump:center,width,height, ramp:alpha,offset, file:path)"
                ),
            ))
        }
    };
    field.map_err(|e| raw.err(line, e))
}

fn parse_grid(raw: &mut Raw) -> Result<Grid, CliError> {
    let (dim, dim_line) = raw
        .take_usize("grid", "dim")?
        .ok_or_else(|| raw.missing("grid", "dim"))?;
    let (n, n_line) = raw
        .take_f64_list("grid", "n")?
        .ok_or_else(|| raw.missing("grid", "n"))?;
    let (origin, o_line) = raw
        .take_f64_list("grid", "origin")?
        .ok_or_else(|| raw.missing("grid", "origin"))?;
    let (extent, e_line) = raw
        .take_f64_list("grid", "extent")?
        .ok_or_else(|| raw.missing("grid", "extent"))?;
    for (list, line, key) in [(&n, n_line, "n"), (&origin, o_line, "origin"), (&extent, e_line, "extent")]
    {
        if list.len() != dim {
            return Err(raw.err(line, format!("`{key}` wants {dim} entries (dim is set on line {dim_line})")));
        }
    }
    let nodes = |v: f64, line: usize| -> Result<usize, CliError> {
        if v.fract() != 0.0 || v < 2.0 {
            return Err(raw.err(line, format!("node count must be an integer >= 2, got {v}")));
        }
        Ok(v as usize)
    };
    let grid = match dim {
        1 => Grid::new_1d(origin[0], extent[0], nodes(n[0], n_line)?),
        2 => Grid::new_2d(
            [origin[0], origin[1]],
            [extent[0], extent[1]],
            [nodes(n[0], n_line)?, nodes(n[1], n_line)?],
        ),
        _ => return Err(raw.err(dim_line, format!("dim must be 1 or 2, got {dim}"))),
    };
    grid.map_err(|e| raw.err(dim_line, e))
}

fn forbid(raw: &mut Raw, section: &str, key: &str, mode: Mode, wanted: &str) -> Result<(), CliError> {
    if let Some((_, line)) = raw.take(section, key) {
        return Err(raw.err(
            line,
            format!("key `{key}` is only meaningful with `mode = {wanted}` (this config says {})", mode.name()),
        ));
    }
    Ok(())
}

pub fn load(
    path: &Path,
    out_override: Option<&Path>,
    workers_override: Option<usize>,
) -> Result<ExperimentConfig, CliError> {
    let mut raw = parse_raw(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let grid = parse_grid(&mut raw)?;
    let h = grid.h_max();

    let (mode_str, mode_line) = raw
        .take("problem", "mode")
        .ok_or_else(|| raw.missing("problem", "mode"))?;
    let mode = match mode_str.as_str() {
        "sharp" => Mode::Sharp,
        "regularized" => Mode::Regularized,
        "sharp-continuation" => Mode::SharpContinuation,
        other => {
            return Err(raw.err(
                mode_line,
                format!("mode must be sharp, regularized, or sharp-continuation, got `{other}`"),
            ))
        }
    };

    let (p_spec, p_line) = raw
        .take("problem", "p")
        .ok_or_else(|| raw.missing("problem", "p"))?;
    let p_field = field_from_spec(&raw, &p_spec, p_line, &grid, &base_dir)?;
    let p = ExponentField::new(p_field).map_err(|e| raw.err(p_line, e))?;

    let f = match raw.take("problem", "f") {
        Some((spec, line)) => field_from_spec(&raw, &spec, line, &grid, &base_dir)?,
        None => ScalarField::zeros(&grid),
    };
    let weight = match raw.take("problem", "a") {
        Some((spec, line)) => Some(field_from_spec(&raw, &spec, line, &grid, &base_dir)?),
        None => None,
    };

    let mut lambda = None;
    let mut beta = None;
    let mut eps = None;
    let mut eps_schedule = None;
    match mode {
        Mode::Sharp => {
            forbid(&mut raw, "problem", "beta", mode, "regularized or sharp-continuation")?;
            forbid(&mut raw, "problem", "mass", mode, "regularized or sharp-continuation")?;
            forbid(&mut raw, "problem", "eps", mode, "regularized")?;
            forbid(&mut raw, "problem", "eps_schedule", mode, "sharp-continuation")?;
            let (spec, line) = raw
                .take("problem", "lambda")
                .ok_or_else(|| raw.missing("problem", "lambda"))?;
            let field = field_from_spec(&raw, &spec, line, &grid, &base_dir)?;
            if !(field.min() > 0.0) {
                return Err(raw.err(line, format!("lambda must be positive, reaches {}", field.min())));
            }
            lambda = Some(field);
        }
        Mode::Regularized | Mode::SharpContinuation => {
            forbid(&mut raw, "problem", "lambda", mode, "sharp")?;
            let (shape, b_line) = raw
                .take("problem", "beta")
                .unwrap_or_else(|| ("quadratic".into(), mode_line));
            let (mass, m_line) = raw
                .take_f64("problem", "mass")?
                .ok_or_else(|| raw.missing("problem", "mass"))?;
            if !(mass > 0.0) {
                return Err(raw.err(m_line, format!("mass must be positive, got {mass}")));
            }
            let profile = match shape.as_str() {
                "quadratic" => BetaProfile::quadratic(mass),
                "cubic" => BetaProfile::cubic(mass),
                other => {
                    return Err(raw.err(b_line, format!("beta must be quadratic or cubic, got `{other}`")))
                }
            };
            beta = Some(profile.map_err(|e| raw.err(m_line, e))?);
            if mode == Mode::Regularized {
                forbid(&mut raw, "problem", "eps_schedule", mode, "sharp-continuation")?;
                let (val, e_line) = raw
                    .take_f64("problem", "eps")?
                    .ok_or_else(|| raw.missing("problem", "eps"))?;
                if !(val > 0.0) {
                    return Err(raw.err(e_line, format!("eps must be positive, got {val}")));
                }
                eps = Some(val);
            } else {
                forbid(&mut raw, "problem", "eps", mode, "regularized")?;
                match raw.take("problem", "eps_schedule") {
                    None => {}
                    Some((v, line)) if v == "auto" => {
                        let _ = line;
                    }
                    Some((v, line)) => {
                        let parsed: Result<Vec<f64>, _> =
                            v.split(',').map(|t| t.trim().parse::<f64>()).collect();
                        let list = parsed.map_err(|_| {
                            raw.err(line, format!("eps_schedule wants `auto` or a list of numbers, got `{v}`"))
                        })?;
                        if list.iter().any(|e| !(*e > 0.0)) {
                            return Err(raw.err(line, "eps_schedule entries must be positive"));
                        }
                        eps_schedule = Some(list);
                    }
                }
            }
        }
    }

    let (g_spec, g_line) = raw
        .take("boundary", "g")
        .ok_or_else(|| raw.missing("boundary", "g"))?;
    let boundary = field_from_spec(&raw, &g_spec, g_line, &grid, &base_dir)?;

    let mut solver = SolveConfig::default();
    if let Some((v, _)) = raw.take_f64("solver", "tol_grad")? {
        solver.tol_grad = v;
    }
    if let Some((v, _)) = raw.take_f64("solver", "tol_energy")? {
        solver.tol_energy = v;
    }
    if let Some((v, _)) = raw.take_usize("solver", "max_iters")? {
        solver.max_iters = v;
    }
    if let Some((v, _)) = raw.take_f64("solver", "delta")? {
        solver.delta = v;
    }
    if let Some((v, _)) = raw.take_bool("solver", "clamp_nonnegative")? {
        solver.clamp_nonnegative = v;
    }
    let warm_start = raw.take_bool("solver", "warm_start")?.map_or(true, |(v, _)| v);
    let workers = match workers_override {
        Some(n) => n,
        None => raw.take_usize("solver", "workers")?.map_or(0, |(v, _)| v),
    };
    if workers_override.is_some() {
        // The flag wins; a config key underneath is not an unknown-key error.
        let _ = raw.take_usize("solver", "workers")?;
    }

    let scan = ScanSpec {
        threshold: raw.take_f64("scan", "threshold")?.map_or(0.0, |(v, _)| v),
        radii: raw
            .take_f64_list("scan", "radii")?
            .map_or_else(|| vec![32.0 * h, 16.0 * h, 8.0 * h, 4.0 * h], |(v, _)| v),
        density_radii: raw
            .take_f64_list("scan", "density_radii")?
            .map_or_else(|| vec![32.0 * h, 16.0 * h, 8.0 * h], |(v, _)| v),
        n_samples: raw.take_usize("scan", "n_samples")?.map_or(4, |(v, _)| v),
        max_points: raw.take_usize("scan", "max_points")?.map_or(32, |(v, _)| v),
        slope_tol: raw.take_f64("scan", "slope_tol")?.map_or(0.05, |(v, _)| v),
        growth_window: [
            raw.take_f64("scan", "growth_lo")?.map_or(0.9, |(v, _)| v),
            raw.take_f64("scan", "growth_hi")?.map_or(1.1, |(v, _)| v),
        ],
        nondeg_min: raw.take_f64("scan", "nondeg_min")?.map_or(0.5, |(v, _)| v),
        density_window: [
            raw.take_f64("scan", "density_lo")?.map_or(0.45, |(v, _)| v),
            raw.take_f64("scan", "density_hi")?.map_or(0.55, |(v, _)| v),
        ],
        blowup_tol: raw.take_f64("scan", "blowup_tol")?.map_or(0.05, |(v, _)| v),
        blowup_residual_max: raw
            .take_f64("scan", "blowup_residual_max")?
            .map_or(0.05, |(v, _)| v),
        tol_equality: raw.take_f64("scan", "tol_equality")?.map_or(1e-6, |(v, _)| v),
    };

    let out_dir = match out_override {
        Some(p) => p.to_path_buf(),
        None => raw
            .take("output", "dir")
            .map(|(v, _)| base_dir.join(v))
            .unwrap_or_else(|| base_dir.join("out")),
    };
    if out_override.is_some() {
        let _ = raw.take("output", "dir");
    }

    raw.finish()?;
    Ok(ExperimentConfig {
        grid,
        mode,
        p,
        lambda,
        beta,
        eps,
        eps_schedule,
        f,
        weight,
        boundary,
        solver,
        warm_start,
        scan,
        out_dir,
        workers,
    })
}
