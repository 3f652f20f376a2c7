//! The three commands: run (solve and write artifacts), check (structural
//! hypotheses only), study (dyadic refinement table).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freebd_core::energy::{check_hypotheses, HypothesisReport};
use freebd_core::freeboundary::{
    stratify, FreeBoundaryReport, LocalProfile, NormalizedProfile, PointKind,
};
use freebd_core::linearize::{linearize, verify_h4_h5, verify_pde2, H45Report, LinearizedProblem};
use freebd_core::solver::{
    complementarity_audit, solve_nonlinear_vi, solve_quadratic_vi, ComplementarityAudit, Solution,
};
use freebd_core::{Error, MatrixField, ScalarField};

use crate::config::{self, Built, ConfigError, Method, RunConfig};
use crate::emit::{self, Obj};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("{msg}");
    code
}

fn config_fail(e: ConfigError) -> i32 {
    fail(EXIT_CONFIG, e)
}

/// Core errors split into "your config is wrong" and "the solve went wrong".
fn core_fail(e: Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::Eval(_) | Error::Range(_) => {
            fail(EXIT_CONFIG, e)
        }
        _ => fail(EXIT_SOLVE, e),
    }
}

fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        field: "config".to_string(),
        message: format!("{}: {e}", path.display()),
    })?;
    config::parse(&text)
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

struct HypothesisGate {
    failures: Vec<String>,
}

impl HypothesisGate {
    fn new(
        report: &HypothesisReport,
        h45: Option<&H45Report>,
        cfg: &RunConfig,
    ) -> HypothesisGate {
        let mut failures = Vec::new();
        for c in &report.checks {
            if !c.pass {
                failures.push(format!(
                    "{} violated: worst margin {:.3e} at sample {:?}",
                    c.hypothesis.name(),
                    c.margin,
                    c.worst
                ));
            }
        }
        if let Some(h45) = h45 {
            match h45.c0_est {
                Some(m) => {
                    if !(m > 0.0 && m >= cfg.hypotheses.c0 - 1e-12) {
                        failures.push(format!(
                            "obstacle residual near the contact set dips to {m:.6} \
                             below the required c0 = {}",
                            cfg.hypotheses.c0
                        ));
                    }
                }
                None => {} // no contact set: nothing to be nondegenerate about
            }
            if cfg.hypotheses.alpha > 0.0 && h45.holder_alpha + 1e-9 < cfg.hypotheses.alpha {
                failures.push(format!(
                    "obstacle residual Holder exponent {:.3} below the required {}",
                    h45.holder_alpha, cfg.hypotheses.alpha
                ));
            }
        }
        HypothesisGate { failures }
    }

    fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn hypotheses_json(report: &HypothesisReport) -> String {
    let mut obj = Obj::new();
    for c in &report.checks {
        obj = obj.field(
            c.hypothesis.name(),
            Obj::new()
                .field("pass", c.pass.to_string())
                .field("margin", emit::num(c.margin))
                .render(2),
        );
    }
    obj.field("samples", report.samples.to_string()).render(1)
}

fn grid_json(grid: freebd_core::Grid) -> String {
    let dim = grid.dim();
    let (lo, hi) = grid.bounds();
    let [nx, ny] = grid.shape();
    let [hx, hy] = grid.spacing();
    let bounds = emit::array(
        (0..dim).map(|ax| emit::array([emit::num(lo[ax]), emit::num(hi[ax])])),
    );
    let res = if dim == 1 {
        emit::array([nx.to_string()])
    } else {
        emit::array([nx.to_string(), ny.to_string()])
    };
    let spacing = if dim == 1 {
        emit::array([emit::num(hx)])
    } else {
        emit::array([emit::num(hx), emit::num(hy)])
    };
    Obj::new()
        .field("dim", dim.to_string())
        .field("bounds", bounds)
        .field("resolution", res)
        .field("spacing", spacing)
        .render(1)
}

#[allow(clippy::too_many_arguments)]
fn report_json(
    hyp: &HypothesisReport,
    lambda_k: Option<f64>,
    h45: Option<&H45Report>,
    c0_required: f64,
    h4_pass: bool,
    audit: Option<&ComplementarityAudit>,
    iters: usize,
    converged: bool,
    grid: freebd_core::Grid,
    warnings: &[String],
) -> String {
    let h4 = match h45 {
        Some(h) => Obj::new()
            .field("min_h", emit::opt_num(h.c0_est))
            .field("c0", emit::num(c0_required))
            .field("pass", h4_pass.to_string())
            .render(1),
        None => "null".to_string(),
    };
    let h5 = match h45 {
        Some(h) => Obj::new()
            .field("alpha", emit::num(h.holder_alpha))
            .field("quotient", emit::num(h.holder_const))
            .render(1),
        None => "null".to_string(),
    };
    let comp = match audit {
        Some(a) => Obj::new()
            .field("max_zeta_minus_hplus", emit::num(a.deep_active_mismatch))
            .field("max_zeta_inactive", emit::num(a.max_abs_residual_inactive))
            .render(1),
        None => "null".to_string(),
    };
    let mut out = Obj::new()
        .field("hypotheses", hypotheses_json(hyp))
        .field(
            "ellipticity",
            match lambda_k {
                Some(l) => Obj::new().field("lambda_K", emit::num(l)).render(1),
                None => "null".to_string(),
            },
        )
        .field("h4", h4)
        .field("h5", h5)
        .field("complementarity", comp)
        .field(
            "solver",
            Obj::new()
                .field("iters", iters.to_string())
                .field("converged", converged.to_string())
                .render(1),
        )
        .field("grid", grid_json(grid));
    out = out.field(
        "warnings",
        emit::array(warnings.iter().map(|w| emit::string(w))),
    );
    out.field("timestamp", emit::string(&timestamp())).render(0)
}

/// Bilinear sample of the coefficient field at an off-node point.
fn interp_matrix(a: &MatrixField, x: [f64; 2]) -> [[f64; 2]; 2] {
    let grid = a.grid;
    let (lo, _) = grid.bounds();
    let [hx, hy] = grid.spacing();
    let [nx, ny] = grid.shape();
    let fx = ((x[0] - lo[0]) / hx).clamp(0.0, (nx - 1) as f64);
    let i0 = (fx.floor() as usize).min(nx - 2);
    let tx = fx - i0 as f64;
    let (j0, ty) = if grid.dim() == 2 {
        let fy = ((x[1] - lo[1]) / hy).clamp(0.0, (ny - 1) as f64);
        let j0 = (fy.floor() as usize).min(ny - 2);
        (j0, fy - j0 as f64)
    } else {
        (0, 0.0)
    };
    let j1 = if grid.dim() == 2 { j0 + 1 } else { j0 };
    let mut out = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let v00 = a.at(i0, j0)[r][c];
            let v10 = a.at(i0 + 1, j0)[r][c];
            let v01 = a.at(i0, j1)[r][c];
            let v11 = a.at(i0 + 1, j1)[r][c];
            out[r][c] =
                (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        }
    }
    out
}

/// Balanced-energy samples at the configured radii, clipped to what the
/// domain geometry supports around this point.
fn weiss_samples(
    w: &ScalarField,
    lin: &LinearizedProblem,
    x: [f64; 2],
    radii: &[f64],
) -> Vec<(f64, f64)> {
    let a0 = interp_matrix(&lin.a, x);
    let f0 = match lin.h.interp(x) {
        Ok(v) if v > 0.0 => v,
        _ => return Vec::new(),
    };
    let profile = match NormalizedProfile::new(w, a0, f0, x) {
        Ok(p) => p,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    for &r in radii {
        if r > 0.8 * profile.max_radius() || r < profile.cell() {
            continue;
        }
        if let Ok(val) = freebd_core::freeboundary::weiss_energy(&profile, r) {
            out.push((r, val));
        }
    }
    out
}

fn freeboundary_json(
    fb: &FreeBoundaryReport,
    w: &ScalarField,
    lin: &LinearizedProblem,
    dim: usize,
    radii: &[f64],
    confidence: f64,
) -> String {
    let mut points = Vec::new();
    let mut strata = vec![0usize; dim];
    for p in &fb.points {
        // A label only stands if its model beats the other by the configured
        // ratio; otherwise it is downgraded to ambiguous in the artifact.
        let c = &p.class;
        let confident = match c.kind {
            PointKind::Regular { .. } => c.fit_regular * confidence <= c.fit_singular,
            PointKind::Singular { .. } => c.fit_singular * confidence <= c.fit_regular,
            PointKind::Ambiguous => false,
        };
        let kind = if confident { &c.kind } else { &PointKind::Ambiguous };
        let mut obj = Obj::new().field("x", emit::vector(&p.x[..dim]));
        match kind {
            PointKind::Regular { normal } => {
                obj = obj
                    .field("class", emit::string("regular"))
                    .field("normal", emit::vector(&normal[..dim]));
            }
            PointKind::Singular { stratum, q } => {
                if *stratum < strata.len() {
                    strata[*stratum] += 1;
                }
                let rows = emit::array((0..dim).map(|r| emit::vector(&q[r][..dim])));
                obj = obj
                    .field("class", emit::string("singular"))
                    .field("Q", rows)
                    .field("stratum", stratum.to_string());
            }
            PointKind::Ambiguous => {
                obj = obj.field("class", emit::string("ambiguous"));
            }
        }
        let fit = Obj::new()
            .field(
                "regular",
                if c.fit_regular.is_finite() { emit::num(c.fit_regular) } else { "null".into() },
            )
            .field(
                "singular",
                if c.fit_singular.is_finite() { emit::num(c.fit_singular) } else { "null".into() },
            )
            .render(3);
        obj = obj.field("fit_residuals", fit);
        let weiss = weiss_samples(w, lin, p.x, radii);
        obj = obj.field(
            "weiss",
            emit::array(weiss.iter().map(|(r, v)| {
                Obj::new()
                    .field("r", emit::num(*r))
                    .field("W", emit::num(*v))
                    .render(4)
            })),
        );
        points.push(obj.render(2));
    }
    let mut counts = Obj::new();
    for (k, n) in strata.iter().enumerate() {
        counts = counts.field(&format!("S{k}"), n.to_string());
    }
    Obj::new()
        .field("points", emit::array(points))
        .field("strata_counts", counts.render(1))
        .render(0)
}

fn solution_csv(sol: &Solution, psi: &ScalarField) -> String {
    let grid = sol.u.grid;
    let dim = grid.dim();
    let mut out = String::new();
    if dim == 1 {
        out.push_str("i,x,u,psi,w,zeta,active,pde_residual\n");
    } else {
        out.push_str("i,j,x,y,u,psi,w,zeta,active,pde_residual\n");
    }
    for (i, j) in grid.nodes() {
        let p = grid.node(i, j);
        let u = sol.u.at(i, j);
        let ps = psi.at(i, j);
        let row_tail = format!(
            "{},{},{},{},{},{}",
            emit::num(u),
            emit::num(ps),
            emit::num(u - ps),
            emit::num(sol.zeta.at(i, j)),
            u8::from(sol.active[grid.idx(i, j)]),
            emit::num(sol.pde_residual.at(i, j)),
        );
        if dim == 1 {
            out.push_str(&format!("{i},{},{row_tail}\n", emit::num(p[0])));
        } else {
            out.push_str(&format!(
                "{i},{j},{},{},{row_tail}\n",
                emit::num(p[0]),
                emit::num(p[1])
            ));
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), i32> {
    fs::write(path, contents).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))
}

fn solve(built: &Built) -> Result<Solution, Error> {
    match built.method {
        Method::Psor => {
            let (a, f) = built.quad.as_ref().expect("psor implies quadratic coefficients");
            solve_quadratic_vi(a, f, &built.psi, &built.g, &built.params)
        }
        Method::Ssnewton => solve_nonlinear_vi(&built.spec, &built.psi, &built.g, &built.params),
    }
}

pub fn run(path: &Path, strict: bool) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return config_fail(e),
    };
    let built = match config::build(&cfg) {
        Ok(b) => b,
        Err(e) => return config_fail(e),
    };
    let outdir = PathBuf::from(&cfg.output.directory);
    if let Err(e) = fs::create_dir_all(&outdir) {
        return fail(1, format!("cannot create {}: {e}", outdir.display()));
    }
    let csv = cfg.output.formats.iter().any(|f| f == "csv");
    let json = cfg.output.formats.iter().any(|f| f == "json");

    let grid = built.grid;
    let [nx, ny] = grid.shape();
    println!(
        "grid: {} nodes, h = {:.4e}",
        if grid.dim() == 1 { nx.to_string() } else { format!("{nx} x {ny}") },
        grid.min_spacing()
    );

    let hyp = match check_hypotheses(&built.spec, &built.sample_box, cfg.hypotheses.samples) {
        Ok(h) => h,
        Err(e) => return core_fail(e),
    };

    let t0 = Instant::now();
    let sol = match solve(&built) {
        Ok(s) => s,
        Err(Error::NoConvergence { iters, last_update, comp }) => {
            eprintln!(
                "solver did not converge after {iters} iterations \
                 (last update {last_update:.3e}, complementarity residual {comp:.3e})"
            );
            if json {
                let report = report_json(
                    &hyp,
                    None,
                    None,
                    cfg.hypotheses.c0,
                    false,
                    None,
                    iters,
                    false,
                    grid,
                    &["solver did not converge".to_string()],
                );
                if let Err(code) = write(&outdir.join("report.json"), &report) {
                    return code;
                }
            }
            return EXIT_SOLVE;
        }
        Err(e) => return core_fail(e),
    };
    let method = match built.method {
        Method::Psor => "psor",
        Method::Ssnewton => "ssnewton",
    };
    println!(
        "solve: {method} converged in {} iterations ({:.2} s)",
        sol.iters,
        t0.elapsed().as_secs_f64()
    );

    let lin = match linearize(&sol.u, &built.psi, &built.spec, cfg.linearize.quad_nodes) {
        Ok(l) => l,
        Err(e) => return core_fail(e),
    };
    let pde2 = verify_pde2(&lin, &sol, &built.psi);
    let h45 = verify_h4_h5(&lin, &sol);
    let audit = complementarity_audit(&sol, &built.psi, 2);
    let gate = HypothesisGate::new(&hyp, Some(&h45), &cfg);
    let h4_pass = match h45.c0_est {
        Some(m) => m > 0.0 && m >= cfg.hypotheses.c0 - 1e-12,
        None => true,
    };

    println!("ellipticity: lambda_K = {:.6}", lin.lambda_k);
    match h45.c0_est {
        Some(m) => println!(
            "h4: min h = {m:.6} near the contact set (required c0 = {}) -> {}",
            cfg.hypotheses.c0,
            if h4_pass { "pass" } else { "FAIL" }
        ),
        None => println!("h4: contact set empty, nothing to check"),
    }
    println!(
        "h5: holder alpha = {:.3}, quotient = {:.4e}",
        h45.holder_alpha, h45.holder_const
    );
    println!(
        "complementarity: deep-active |zeta - h+| = {:.3e}, inactive |residual| = {:.3e}",
        audit.deep_active_mismatch, audit.max_abs_residual_inactive
    );
    println!(
        "linearized defect away from collars: {:.3e} (sup {:.3e})",
        pde2.sup_defect_clear, pde2.sup_defect
    );

    let fb = match stratify(&sol, &lin, &built.psi) {
        Ok(f) => f,
        Err(e) => return core_fail(e),
    };
    println!(
        "free boundary: {} points ({} regular, {} singular, {} ambiguous)",
        fb.points.len(),
        fb.regular,
        fb.singular,
        fb.ambiguous
    );

    let mut warnings: Vec<String> = Vec::new();
    warnings.extend(fb.warnings.iter().cloned());
    warnings.extend(gate.failures.iter().cloned());
    for w in &warnings {
        println!("warning: {w}");
    }

    if csv {
        if let Err(code) = write(&outdir.join("solution.csv"), &solution_csv(&sol, &built.psi)) {
            return code;
        }
    }
    if json {
        let w = ScalarField::from_index_fn(grid, |i, j| sol.u.at(i, j) - built.psi.at(i, j));
        let fb_text = freeboundary_json(
            &fb,
            &w,
            &lin,
            grid.dim(),
            &cfg.freeboundary.radii,
            cfg.freeboundary.confidence,
        );
        if let Err(code) = write(&outdir.join("freeboundary.json"), &fb_text) {
            return code;
        }
        let report = report_json(
            &hyp,
            Some(lin.lambda_k),
            Some(&h45),
            cfg.hypotheses.c0,
            h4_pass,
            Some(&audit),
            sol.iters,
            sol.converged,
            grid,
            &warnings,
        );
        if let Err(code) = write(&outdir.join("report.json"), &report) {
            return code;
        }
    }
    let mut written = Vec::new();
    if csv {
        written.push(format!("{}", outdir.join("solution.csv").display()));
    }
    if json {
        written.push(format!("{}", outdir.join("freeboundary.json").display()));
        written.push(format!("{}", outdir.join("report.json").display()));
    }
    println!("wrote {}", written.join(", "));

    if strict && !gate.ok() {
        eprintln!("hypothesis violations present and --strict is set");
        return EXIT_HYPOTHESIS;
    }
    0
}

pub fn check(path: &Path, strict: bool) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return config_fail(e),
    };
    let built = match config::build(&cfg) {
        Ok(b) => b,
        Err(e) => return config_fail(e),
    };
    let hyp = match check_hypotheses(&built.spec, &built.sample_box, cfg.hypotheses.samples) {
        Ok(h) => h,
        Err(e) => return core_fail(e),
    };
    println!("structural hypotheses over {} samples ({}):", hyp.samples, hyp.region);
    for c in &hyp.checks {
        println!(
            "  {:<18} {}  margin {:+.3e}",
            c.hypothesis.name(),
            if c.pass { "pass" } else { "FAIL" },
            c.margin
        );
    }
    let gate = HypothesisGate::new(&hyp, None, &cfg);
    if !gate.ok() {
        for f in &gate.failures {
            println!("warning: {f}");
        }
        if strict {
            return EXIT_HYPOTHESIS;
        }
    }
    0
}

pub fn study(path: &Path, levels: usize) -> i32 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return config_fail(e),
    };
    if levels < 3 {
        return fail(
            EXIT_CONFIG,
            format!("config error (levels): {levels} given; a study needs at least 3"),
        );
    }
    let dim = cfg.domain.dim;
    let mut solutions: Vec<(Vec<usize>, f64, ScalarField)> = Vec::new();
    for l in 0..levels {
        let res: Vec<usize> = cfg
            .domain
            .resolution
            .iter()
            .map(|&n| (n - 1) * (1usize << l) + 1)
            .collect();
        let built = match config::build_with_resolution(&cfg, &res) {
            Ok(b) => b,
            Err(e) => return config_fail(e),
        };
        let t0 = Instant::now();
        let sol = match solve(&built) {
            Ok(s) => s,
            Err(e) => return core_fail(e),
        };
        println!(
            "level {l}: n = {:?}, {} iterations, {:.2} s",
            res,
            sol.iters,
            t0.elapsed().as_secs_f64()
        );
        solutions.push((res, built.grid.min_spacing(), sol.u));
    }

    // Error of each coarse level against the finest, sampled at the coarse
    // nodes (dyadic refinement keeps them as exact fine nodes).
    let finest = &solutions[levels - 1].2;
    let mut errors = Vec::new();
    for (l, (_, _, u)) in solutions.iter().enumerate().take(levels - 1) {
        let stride = 1usize << (levels - 1 - l);
        let grid = u.grid;
        let mut sup = 0.0f64;
        for (i, j) in grid.nodes() {
            let fi = i * stride;
            let fj = if dim == 2 { j * stride } else { 0 };
            sup = sup.max((u.at(i, j) - finest.at(fi, fj)).abs());
        }
        errors.push(sup);
    }
    let orders: Vec<f64> = errors
        .windows(2)
        .map(|pair| (pair[0] / pair[1]).log2())
        .collect();

    let mut csv = String::new();
    if dim == 1 {
        csv.push_str("level,n,h,sup_error_vs_finest,order\n");
    } else {
        csv.push_str("level,nx,ny,h,sup_error_vs_finest,order\n");
    }
    for (l, (res, h, _)) in solutions.iter().enumerate() {
        let err = errors.get(l).map(|e| emit::num(*e)).unwrap_or_default();
        let ord = orders.get(l).map(|o| emit::num(*o)).unwrap_or_default();
        if dim == 1 {
            csv.push_str(&format!("{l},{},{},{err},{ord}\n", res[0], emit::num(*h)));
        } else {
            csv.push_str(&format!(
                "{l},{},{},{},{err},{ord}\n",
                res[0],
                res[1],
                emit::num(*h)
            ));
        }
    }
    let outdir = PathBuf::from(&cfg.output.directory);
    if let Err(e) = fs::create_dir_all(&outdir) {
        return fail(1, format!("cannot create {}: {e}", outdir.display()));
    }
    let path = outdir.join("study.csv");
    if let Err(code) = write(&path, &csv) {
        return code;
    }

    for (l, e) in errors.iter().enumerate() {
        match orders.get(l) {
            Some(o) => println!("level {l}: sup error {e:.4e}, order {o:.2}"),
            None => println!("level {l}: sup error {e:.4e}"),
        }
    }
    println!("wrote {}", path.display());
    0
}
