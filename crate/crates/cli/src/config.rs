//! Run configuration: TOML schema, validation, and construction of the grid,
//! fields and energy the pipeline consumes.
//!
//! Validation is all-up-front so a bad file fails before any numerics start,
//! and every message names the offending key (`solver.omega`, `obstacle.expr`,
//! ...). Unknown keys are rejected by serde.

use std::sync::Arc;

use freebd_core::energy::{self, EnergySpec, SampleBox};
use freebd_core::riemann::Metric;
use freebd_core::solver::SolverParams;
use freebd_core::{Bind, Expr, Grid, MatrixField, ScalarField};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error ({}): {}", self.field, self.message)
    }
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub domain: Domain,
    pub obstacle: FieldSource,
    pub boundary: FieldSource,
    pub source: Option<FieldSource>,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub linearize: Linearize,
    #[serde(default)]
    pub freeboundary: FreeBoundary,
    #[serde(default)]
    pub hypotheses: Hypotheses,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Quadratic,
    PEnergy,
    Area,
    Riemannian,
    #[serde(alias = "custom-field")]
    CustomField,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub kind: Kind,
    /// Exponent for `kind = "p_energy"`.
    pub p: Option<f64>,
    /// Coefficient matrix entries for `kind = "custom_field"`, expressions
    /// in x (and y in 2D). Symmetric, so only the upper triangle is given.
    pub a11: Option<String>,
    pub a12: Option<String>,
    pub a22: Option<String>,
    /// Metric for `kind = "riemannian"`.
    pub metric: Option<MetricCfg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricCfg {
    /// "flat", "conformal" (needs `phi`), or "general" (needs `g`).
    pub preset: String,
    /// Chart radius r0.
    pub radius: f64,
    /// Tolerance on the first-derivative normalization at the chart origin.
    pub norm_tol: Option<f64>,
    /// Conformal factor expression in (x(, y), z): g = exp(2 phi) I.
    pub phi: Option<String>,
    /// Full (n+1) x (n+1) entry table of expressions in (x(, y), z).
    pub g: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub dim: usize,
    /// Per-axis [lo, hi].
    pub bounds: Vec<[f64; 2]>,
    /// Nodes per axis, at least 9.
    pub resolution: Vec<usize>,
}

/// A scalar field given either as an expression in the space variables or as
/// a constant; exactly one of the two.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSource {
    pub expr: Option<String>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Psor,
    Ssnewton,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    /// Defaults to psor for quadratic-coefficient kinds, ssnewton otherwise.
    pub method: Option<Method>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub omega: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Linearize {
    /// Gauss-Legendre nodes for the segment-averaged hessian.
    pub quad_nodes: usize,
}

impl Default for Linearize {
    fn default() -> Self {
        Linearize { quad_nodes: 6 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeBoundary {
    /// Radii (in the normalized blow-up frame) at which the balanced energy
    /// is reported per point.
    pub radii: Vec<f64>,
    /// A model (half-space vs quadratic) must fit better than the other by
    /// this ratio before the point is labeled; ties are ambiguous.
    pub confidence: f64,
}

impl Default for FreeBoundary {
    fn default() -> Self {
        FreeBoundary {
            radii: vec![0.1, 0.2, 0.4],
            confidence: 1.2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hypotheses {
    /// Required lower bound on the obstacle residual h near the contact set;
    /// 0 only asks for strict positivity.
    pub c0: f64,
    /// Required Holder exponent of h; 0 disables the requirement.
    pub alpha: f64,
    /// Sample count for the structural checks.
    pub samples: usize,
}

impl Default for Hypotheses {
    fn default() -> Self {
        Hypotheses {
            c0: 0.0,
            alpha: 0.0,
            samples: 512,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: String,
    /// Subset of {"csv", "json"}.
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Output {
            directory: "out".to_string(),
            formats: vec!["csv".to_string(), "json".to_string()],
        }
    }
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| bad("toml", e.message().to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let dim = cfg.domain.dim;
    if dim != 1 && dim != 2 {
        return Err(bad("domain.dim", format!("{dim} unsupported; use 1 or 2")));
    }
    if cfg.domain.bounds.len() != dim {
        return Err(bad(
            "domain.bounds",
            format!("{} ranges given for a {dim}d domain", cfg.domain.bounds.len()),
        ));
    }
    if cfg.domain.resolution.len() != dim {
        return Err(bad(
            "domain.resolution",
            format!("{} counts given for a {dim}d domain", cfg.domain.resolution.len()),
        ));
    }
    for (ax, b) in cfg.domain.bounds.iter().enumerate() {
        if !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite() {
            return Err(bad(
                "domain.bounds",
                format!("axis {ax} range [{}, {}] is not well ordered", b[0], b[1]),
            ));
        }
    }
    for (ax, &n) in cfg.domain.resolution.iter().enumerate() {
        if n < 9 {
            return Err(bad(
                "domain.resolution",
                format!("axis {ax} has {n} nodes; need at least 9"),
            ));
        }
    }

    field_source(&cfg.obstacle, "obstacle")?;
    field_source(&cfg.boundary, "boundary")?;
    if let Some(src) = &cfg.source {
        field_source(src, "source")?;
        if !matches!(cfg.problem.kind, Kind::Quadratic | Kind::CustomField) {
            return Err(bad(
                "source",
                "this energy has no source term; only quadratic and custom_field take one",
            ));
        }
    }

    match cfg.problem.kind {
        Kind::PEnergy => {
            let p = cfg.problem.p.ok_or_else(|| bad("problem.p", "required for p_energy"))?;
            if !(p > 1.0) {
                return Err(bad("problem.p", format!("{p} not admissible; need p > 1")));
            }
        }
        _ => {
            if cfg.problem.p.is_some() {
                return Err(bad("problem.p", "only used by kind p_energy"));
            }
        }
    }
    match cfg.problem.kind {
        Kind::CustomField => {
            if cfg.problem.a11.is_none() {
                return Err(bad("problem.a11", "required for custom_field"));
            }
            if dim == 2 && (cfg.problem.a12.is_none() || cfg.problem.a22.is_none()) {
                return Err(bad("problem.a22", "a12 and a22 required on a 2d domain"));
            }
            if dim == 1 && (cfg.problem.a12.is_some() || cfg.problem.a22.is_some()) {
                return Err(bad("problem.a12", "only a11 applies on a 1d domain"));
            }
        }
        _ => {
            if cfg.problem.a11.is_some() || cfg.problem.a12.is_some() || cfg.problem.a22.is_some()
            {
                return Err(bad("problem.a11", "coefficient entries are only used by custom_field"));
            }
        }
    }
    match cfg.problem.kind {
        Kind::Riemannian => {
            let m = cfg
                .problem
                .metric
                .as_ref()
                .ok_or_else(|| bad("problem.metric", "required for riemannian"))?;
            if !(m.radius > 0.0) {
                return Err(bad("problem.metric.radius", "chart radius must be positive"));
            }
            match m.preset.as_str() {
                "flat" => {
                    if m.phi.is_some() || m.g.is_some() {
                        return Err(bad("problem.metric", "flat preset takes no phi or g"));
                    }
                }
                "conformal" => {
                    if m.phi.is_none() {
                        return Err(bad("problem.metric.phi", "required for the conformal preset"));
                    }
                    if m.g.is_some() {
                        return Err(bad("problem.metric.g", "conformal preset takes phi, not g"));
                    }
                }
                "general" => {
                    let g = m
                        .g
                        .as_ref()
                        .ok_or_else(|| bad("problem.metric.g", "required for the general preset"))?;
                    let want = dim + 1;
                    if g.len() != want || g.iter().any(|row| row.len() != want) {
                        return Err(bad(
                            "problem.metric.g",
                            format!("need a {want} x {want} entry table on a {dim}d base"),
                        ));
                    }
                    if m.phi.is_some() {
                        return Err(bad("problem.metric.phi", "general preset takes g, not phi"));
                    }
                }
                other => {
                    return Err(bad(
                        "problem.metric.preset",
                        format!("unknown preset {other:?}; use flat, conformal or general"),
                    ));
                }
            }
            // The grid lives in chart coordinates, which only exist inside
            // the chart.
            for b in &cfg.domain.bounds {
                if b[0] < -m.radius || b[1] > m.radius {
                    return Err(bad(
                        "domain.bounds",
                        format!(
                            "[{}, {}] leaves the metric chart of radius {}",
                            b[0], b[1], m.radius
                        ),
                    ));
                }
            }
        }
        _ => {
            if cfg.problem.metric.is_some() {
                return Err(bad("problem.metric", "only used by kind riemannian"));
            }
        }
    }

    if let Some(m) = cfg.solver.method {
        if m == Method::Psor && !matches!(cfg.problem.kind, Kind::Quadratic | Kind::CustomField) {
            return Err(bad(
                "solver.method",
                "psor applies to quadratic coefficients only; use ssnewton",
            ));
        }
    }
    if let Some(omega) = cfg.solver.omega {
        if !(omega > 0.0 && omega < 2.0) {
            return Err(bad(
                "solver.omega",
                format!("relaxation factor {omega} outside the open interval (0, 2)"),
            ));
        }
    }
    if let Some(tol) = cfg.solver.tol {
        if !(tol > 0.0) {
            return Err(bad("solver.tol", "tolerance must be positive"));
        }
    }
    if cfg.solver.max_iter == Some(0) {
        return Err(bad("solver.max_iter", "iteration cap must be positive"));
    }

    if cfg.linearize.quad_nodes < 1 || cfg.linearize.quad_nodes > 16 {
        return Err(bad("linearize.quad_nodes", "need between 1 and 16 nodes"));
    }
    if cfg.freeboundary.radii.is_empty() {
        return Err(bad("freeboundary.radii", "need at least one radius"));
    }
    if cfg.freeboundary.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(bad("freeboundary.radii", "radii must be positive"));
    }
    if !(cfg.freeboundary.confidence > 1.0) {
        return Err(bad("freeboundary.confidence", "ratio must exceed 1"));
    }
    if cfg.hypotheses.c0 < 0.0 {
        return Err(bad("hypotheses.c0", "lower bound cannot be negative"));
    }
    if !(0.0..=1.0).contains(&cfg.hypotheses.alpha) {
        return Err(bad("hypotheses.alpha", "exponent must lie in [0, 1]"));
    }
    if cfg.hypotheses.samples < 16 {
        return Err(bad("hypotheses.samples", "need at least 16 samples"));
    }
    if cfg.output.formats.is_empty() {
        return Err(bad("output.formats", "need at least one of csv, json"));
    }
    for f in &cfg.output.formats {
        if f != "csv" && f != "json" {
            return Err(bad("output.formats", format!("unknown format {f:?}")));
        }
    }
    if cfg.output.directory.is_empty() {
        return Err(bad("output.directory", "cannot be empty"));
    }
    Ok(())
}

fn field_source(src: &FieldSource, section: &str) -> Result<(), ConfigError> {
    match (&src.expr, &src.value) {
        (Some(_), None) | (None, Some(_)) => Ok(()),
        _ => Err(bad(section, "give exactly one of expr or value")),
    }
}

/// Everything the pipeline needs, constructed and cross-checked.
pub struct Built {
    pub grid: Grid,
    pub psi: ScalarField,
    pub g: ScalarField,
    pub spec: EnergySpec,
    /// Coefficient matrix and source for the projected-SOR path; present for
    /// quadratic-coefficient kinds only.
    pub quad: Option<(MatrixField, ScalarField)>,
    pub method: Method,
    pub params: SolverParams,
    pub sample_box: SampleBox,
}

fn parse_expr(src: &str, section: &str) -> Result<Expr, ConfigError> {
    freebd_core::expr::parse(src).map_err(|e| bad(section, e.to_string()))
}

fn eval_field(
    grid: Grid,
    src: &FieldSource,
    section: &str,
) -> Result<ScalarField, ConfigError> {
    if let Some(v) = src.value {
        return Ok(ScalarField::from_fn(grid, |_| v));
    }
    let expr = parse_expr(src.expr.as_deref().unwrap(), section)?;
    let dim = grid.dim();
    ScalarField::try_from_fn(grid, |p| {
        let bind = if dim == 1 { Bind::d1(p[0]) } else { Bind::d2(p[0], p[1]) };
        expr.eval(&bind)
    })
    .map_err(|e| bad(section, e.to_string()))
}

/// Sample box for the structural checks. Globally coercive energies are
/// probed over the whole domain with O(1) state and slope ranges; locally
/// coercive ones get the certified budget split evenly across coordinates,
/// state and slope so every sample stays inside the certificate.
fn sample_region(grid: Grid, spec: &EnergySpec, zmax: f64) -> SampleBox {
    let dim = grid.dim();
    let (lo, hi) = grid.bounds();
    match spec.coercive_box {
        None => SampleBox {
            x_lo: lo[..dim].to_vec(),
            x_hi: hi[..dim].to_vec(),
            z: (-zmax, zmax),
            xi: (-2.0, 2.0),
        },
        Some(r) => {
            let c = 0.9 * r / (2 * dim + 1) as f64;
            SampleBox {
                x_lo: vec![-c; dim],
                x_hi: vec![c; dim],
                z: (-c, c),
                xi: (-c, c),
            }
        }
    }
}

pub fn build(cfg: &RunConfig) -> Result<Built, ConfigError> {
    build_with_resolution(cfg, &cfg.domain.resolution)
}

/// Same construction on an overridden node count; the refinement study uses
/// this to walk dyadic levels without touching the parsed config.
pub fn build_with_resolution(cfg: &RunConfig, resolution: &[usize]) -> Result<Built, ConfigError> {
    let dim = cfg.domain.dim;
    let grid = if dim == 1 {
        Grid::new_1d(cfg.domain.bounds[0][0], cfg.domain.bounds[0][1], resolution[0])
    } else {
        Grid::new_2d(
            [cfg.domain.bounds[0][0], cfg.domain.bounds[1][0]],
            [cfg.domain.bounds[0][1], cfg.domain.bounds[1][1]],
            [resolution[0], resolution[1]],
        )
    }
    .map_err(|e| bad("domain", e.to_string()))?;

    let psi = eval_field(grid, &cfg.obstacle, "obstacle")?;
    let g = eval_field(grid, &cfg.boundary, "boundary")?;
    let f = match &cfg.source {
        Some(src) => eval_field(grid, src, "source")?,
        None => ScalarField::zeros(grid),
    };

    let (lo, hi) = grid.bounds();
    let x_lo: Vec<f64> = lo[..dim].to_vec();
    let x_hi: Vec<f64> = hi[..dim].to_vec();

    let (spec, quad) = match cfg.problem.kind {
        Kind::Quadratic => {
            let f_expr = cfg
                .source
                .as_ref()
                .map(|s| -> Result<Arc<Expr>, ConfigError> {
                    match (&s.expr, s.value) {
                        (Some(e), _) => Ok(Arc::new(parse_expr(e, "source")?)),
                        (None, Some(v)) => Ok(Arc::new(Expr::Num(v))),
                        _ => unreachable!(),
                    }
                })
                .transpose()?;
            let fk = f_expr.clone();
            let spec = energy::quadratic(
                dim,
                &x_lo,
                &x_hi,
                |_| [[1.0, 0.0], [0.0, 1.0]],
                move |p| match &fk {
                    Some(e) => {
                        let bind = if p.len() == 1 { Bind::d1(p[0]) } else { Bind::d2(p[0], p[1]) };
                        e.eval(&bind).unwrap_or(f64::NAN)
                    }
                    None => 0.0,
                },
            )
            .map_err(|e| bad("problem", e.to_string()))?;
            // The energy density is A xi.xi + 2 f z, so its Euler operator
            // carries twice the coefficient matrix and source. The direct
            // solver gets the doubled fields to keep its residuals and
            // multiplier on the same scale as the linearization.
            let a = MatrixField::constant(grid, [[2.0, 0.0], [0.0, 2.0]]);
            let f2 = ScalarField::from_index_fn(grid, |i, j| 2.0 * f.at(i, j));
            (spec, Some((a, f2)))
        }
        Kind::CustomField => {
            let a11 = Arc::new(parse_expr(cfg.problem.a11.as_deref().unwrap(), "problem.a11")?);
            let (a12, a22) = if dim == 2 {
                (
                    Arc::new(parse_expr(cfg.problem.a12.as_deref().unwrap(), "problem.a12")?),
                    Arc::new(parse_expr(cfg.problem.a22.as_deref().unwrap(), "problem.a22")?),
                )
            } else {
                (Arc::new(Expr::Num(0.0)), Arc::new(Expr::Num(1.0)))
            };
            let entries = move |p: &[f64]| -> [[f64; 2]; 2] {
                let bind = if p.len() == 1 { Bind::d1(p[0]) } else { Bind::d2(p[0], p[1]) };
                let v11 = a11.eval(&bind).unwrap_or(f64::NAN);
                let v12 = a12.eval(&bind).unwrap_or(f64::NAN);
                let v22 = a22.eval(&bind).unwrap_or(f64::NAN);
                [[v11, v12], [v12, v22]]
            };
            let e2 = entries.clone();
            let f_expr = cfg
                .source
                .as_ref()
                .map(|s| -> Result<Arc<Expr>, ConfigError> {
                    match (&s.expr, s.value) {
                        (Some(e), _) => Ok(Arc::new(parse_expr(e, "source")?)),
                        (None, Some(v)) => Ok(Arc::new(Expr::Num(v))),
                        _ => unreachable!(),
                    }
                })
                .transpose()?;
            let spec = energy::quadratic(dim, &x_lo, &x_hi, entries, move |p| match &f_expr {
                Some(e) => {
                    let bind = if p.len() == 1 { Bind::d1(p[0]) } else { Bind::d2(p[0], p[1]) };
                    e.eval(&bind).unwrap_or(f64::NAN)
                }
                None => 0.0,
            })
            .map_err(|e| bad("problem", e.to_string()))?;
            // Doubled for the same scale reason as the identity preset.
            let mut a = MatrixField::identity(grid);
            for (i, j) in grid.nodes() {
                let m = e2(&grid.node(i, j)[..dim]);
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(bad(
                        "problem.a11",
                        format!("coefficient entries fail to evaluate at {:?}", grid.node(i, j)),
                    ));
                }
                a.set(i, j, [[2.0 * m[0][0], 2.0 * m[0][1]], [2.0 * m[1][0], 2.0 * m[1][1]]]);
            }
            let f2 = ScalarField::from_index_fn(grid, |i, j| 2.0 * f.at(i, j));
            (spec, Some((a, f2)))
        }
        Kind::PEnergy => {
            let spec = energy::p_energy(dim, cfg.problem.p.unwrap())
                .map_err(|e| bad("problem.p", e.to_string()))?;
            (spec, None)
        }
        Kind::Area => {
            let spec = energy::area(dim).map_err(|e| bad("problem", e.to_string()))?;
            (spec, None)
        }
        Kind::Riemannian => {
            let metric = build_metric(cfg.problem.metric.as_ref().unwrap(), dim)?;
            let spec = freebd_core::riemann::field_from_chart(&metric)
                .map_err(|e| bad("problem.metric", e.to_string()))?;
            (spec, None)
        }
    };

    let method = cfg.solver.method.unwrap_or(match cfg.problem.kind {
        Kind::Quadratic | Kind::CustomField => Method::Psor,
        _ => Method::Ssnewton,
    });
    let base = match method {
        Method::Psor => SolverParams::default(),
        Method::Ssnewton => SolverParams::nonlinear(),
    };
    let params = SolverParams {
        tol: cfg.solver.tol.unwrap_or(base.tol),
        max_iter: cfg.solver.max_iter.unwrap_or(base.max_iter),
        omega: cfg.solver.omega.unwrap_or(base.omega),
        ..base
    };

    let zmax = psi
        .sup_norm()
        .max(g.sup_norm())
        .max(1.0)
        .min(2.0);
    let sample_box = sample_region(grid, &spec, zmax);

    Ok(Built {
        grid,
        psi,
        g,
        spec,
        quad: if method == Method::Psor { quad } else { None },
        method,
        params,
        sample_box,
    })
}

fn build_metric(m: &MetricCfg, dim: usize) -> Result<Metric, ConfigError> {
    let norm_tol = m.norm_tol.unwrap_or(1e-6);
    let built = match m.preset.as_str() {
        "flat" => Metric::flat(dim, m.radius),
        "conformal" => {
            let expr = Arc::new(parse_expr(m.phi.as_deref().unwrap(), "problem.metric.phi")?);
            Metric::conformal(dim, m.radius, norm_tol, move |x, z| {
                expr.eval(&Bind::chart(x, z)).unwrap_or(f64::NAN)
            })
        }
        "general" => {
            let table = m.g.as_ref().unwrap();
            let mut exprs = Vec::new();
            for (r, row) in table.iter().enumerate() {
                let mut out = Vec::new();
                for (c, e) in row.iter().enumerate() {
                    out.push(parse_expr(e, &format!("problem.metric.g[{r}][{c}]"))?);
                }
                exprs.push(out);
            }
            let exprs = Arc::new(exprs);
            let n1 = dim + 1;
            Metric::new(dim, m.radius, norm_tol, move |x, z| {
                let bind = Bind::chart(x, z);
                let mut g = [[0.0; 3]; 3];
                for i in 0..3 {
                    g[i][i] = 1.0;
                }
                for r in 0..n1 {
                    for c in 0..n1 {
                        g[r][c] = exprs[r][c].eval(&bind).unwrap_or(f64::NAN);
                    }
                }
                g
            })
        }
        _ => unreachable!("preset validated"),
    };
    built.map_err(|e| bad("problem.metric", e.to_string()))
}
