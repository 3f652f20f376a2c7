//! Chart coefficients for the area functional over a Riemannian metric.
//!
//! A metric `g` on the cylinder `B_r0 x (-r0, r0)` (base point `x`, height
//! `z`, ambient dimension `n+1`) turns the graph of `u` into a surface whose
//! first variation is the quasilinear operator
//!
//! ```text
//! L u = div( A(x,u,Du) Du + b(x,u,Du) ) - f(x,u,Du)
//! ```
//!
//! built from the induced metric `h_ij = g_ij + xi_i g_j(n+1) + xi_j g_(n+1)i
//! + xi_i xi_j g_(n+1)(n+1)`: the matrix is `A = g_(n+1)(n+1) h^-1`, the drift
//! `b^i = g_j(n+1) h^ji`, and the zero-order part `f` contracts `h^-1` against
//! Christoffel symbols of `g`. This module assembles those objects pointwise,
//! wraps them as an [`crate::energy::EnergySpec`] for the nonlinear solver,
//! estimates the radius `s0` on which the field is uniformly monotone, and
//! rewrites the problem in nondivergence form `A_nd : D^2 w = q chi_{w>0}`.
//!
//! Everything works for base dimension 1 or 2; ambient objects are stored in
//! fixed 3x3 arrays with the height slot at index `n`.

use crate::energy::{EnergySpec, Growth};
use crate::error::{Error, Result};
use crate::grid::{self, MatrixField, ScalarField};
use crate::mat2;
use crate::sampling::Halton;
use crate::solver::Solution;
use std::sync::Arc;

/// Ambient matrix, used up to `(n+1) x (n+1)`.
pub type Amb = [[f64; 3]; 3];

/// Evaluator for the metric: `(x, z) -> g`, ambient entries beyond `n+1`
/// ignored.
pub type MetricEval = dyn Fn(&[f64], f64) -> Amb + Send + Sync;

/// Evaluator for the metric derivatives: `dg[l][i][j] = d_l g_ij`, with
/// `l = n` meaning the `z` derivative.
pub type MetricDerivEval = dyn Fn(&[f64], f64) -> [Amb; 3] + Send + Sync;

/// A metric on the chart `B_r0 x (-r0, r0)`, normalized so that `g = I` and
/// `grad g = 0` at the origin up to the declared tolerance.
#[derive(Clone)]
pub struct Metric {
    n: usize,
    r0: f64,
    norm_tol: f64,
    g: Arc<MetricEval>,
    dg: Option<Arc<MetricDerivEval>>,
}

const DG_REL_STEP: f64 = 1e-5;

impl Metric {
    /// Builds a metric from an evaluator alone; Christoffel symbols then use
    /// central differences with step `1e-5 r0`.
    ///
    /// Validation samples the chart: the evaluator must be symmetric positive
    /// definite there, equal the identity at the origin to 1e-12, and have
    /// finite-difference first derivatives at the origin below `norm_tol`.
    pub fn new(
        n: usize,
        r0: f64,
        norm_tol: f64,
        g: impl Fn(&[f64], f64) -> Amb + Send + Sync + 'static,
    ) -> Result<Metric> {
        let m = Metric {
            n,
            r0,
            norm_tol,
            g: Arc::new(g),
            dg: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Like [`Metric::new`] but with closed-form derivatives; these replace
    /// finite differences in the Christoffel symbols and are spot-checked
    /// against them during validation.
    pub fn with_derivatives(
        n: usize,
        r0: f64,
        norm_tol: f64,
        g: impl Fn(&[f64], f64) -> Amb + Send + Sync + 'static,
        dg: impl Fn(&[f64], f64) -> [Amb; 3] + Send + Sync + 'static,
    ) -> Result<Metric> {
        let m = Metric {
            n,
            r0,
            norm_tol,
            g: Arc::new(g),
            dg: Some(Arc::new(dg)),
        };
        m.validate()?;
        Ok(m)
    }

    /// The Euclidean metric on the chart.
    pub fn flat(n: usize, r0: f64) -> Result<Metric> {
        Metric::new(n, r0, 1e-8, |_x, _z| {
            let mut g = [[0.0; 3]; 3];
            for i in 0..3 {
                g[i][i] = 1.0;
            }
            g
        })
    }

    /// The conformal metric `g = exp(2 phi(x, z)) I`.
    pub fn conformal(
        n: usize,
        r0: f64,
        norm_tol: f64,
        phi: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Metric> {
        let m = n + 1;
        Metric::new(n, r0, norm_tol, move |x, z| {
            let c = (2.0 * phi(x, z)).exp();
            let mut g = [[0.0; 3]; 3];
            for i in 0..3 {
                g[i][i] = if i < m { c } else { 1.0 };
            }
            g
        })
    }

    /// Base dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Chart radius `r0`.
    pub fn radius(&self) -> f64 {
        self.r0
    }

    fn amb(&self) -> usize {
        self.n + 1
    }

    fn g_at(&self, x: &[f64], z: f64) -> Amb {
        (self.g)(x, z)
    }

    /// `dg[l][i][j] = d_l g_ij`, from callbacks or central differences.
    fn dg_at(&self, x: &[f64], z: f64) -> [Amb; 3] {
        if let Some(dg) = &self.dg {
            return dg(x, z);
        }
        let m = self.amb();
        let step = DG_REL_STEP * self.r0;
        let mut out = [[[0.0; 3]; 3]; 3];
        let mut xp = [0.0; 2];
        xp[..self.n].copy_from_slice(x);
        for l in 0..m {
            let (gp, gm) = if l < self.n {
                let keep = xp[l];
                xp[l] = keep + step;
                let gp = self.g_at(&xp[..self.n], z);
                xp[l] = keep - step;
                let gm = self.g_at(&xp[..self.n], z);
                xp[l] = keep;
                (gp, gm)
            } else {
                (self.g_at(x, z + step), self.g_at(x, z - step))
            };
            for i in 0..m {
                for j in 0..m {
                    out[l][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * step);
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.n != 1 && self.n != 2 {
            return Err(Error::config("metric.n", "base dimension must be 1 or 2"));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::config("metric.r0", "chart radius must be positive"));
        }
        if !(self.norm_tol > 0.0) {
            return Err(Error::config("metric.norm_tol", "tolerance must be positive"));
        }
        let m = self.amb();
        let origin = [0.0; 2];
        let g0 = self.g_at(&origin[..self.n], 0.0);
        let mut dev = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let id = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g0[i][j] - id).abs());
            }
        }
        if dev > 1e-12 {
            return Err(Error::config(
                "metric.g",
                format!("not normalized: |g(0) - I| = {dev:.3e} exceeds 1e-12"),
            ));
        }

        // First derivatives at the origin, always by central differences so
        // the check exercises the evaluator and not the callbacks.
        let step = DG_REL_STEP * self.r0;
        let mut dmax = 0.0f64;
        for l in 0..m {
            let mut xp = [0.0; 2];
            let (gp, gm) = if l < self.n {
                xp[l] = step;
                let gp = self.g_at(&xp[..self.n], 0.0);
                xp[l] = -step;
                let gm = self.g_at(&xp[..self.n], 0.0);
                (gp, gm)
            } else {
                (
                    self.g_at(&origin[..self.n], step),
                    self.g_at(&origin[..self.n], -step),
                )
            };
            for i in 0..m {
                for j in 0..m {
                    dmax = dmax.max(((gp[i][j] - gm[i][j]) / (2.0 * step)).abs());
                }
            }
        }
        if dmax > self.norm_tol {
            return Err(Error::config(
                "metric.g",
                format!(
                    "|grad g(0)| = {dmax:.3e} exceeds the declared tolerance {:.3e}",
                    self.norm_tol
                ),
            ));
        }

        // Symmetry and positive definiteness over a chart lattice.
        let half = 0.9 * self.r0;
        let ticks = [-half, -0.5 * half, 0.0, 0.5 * half, half];
        let mut points: Vec<([f64; 2], f64)> = Vec::new();
        for &a in &ticks {
            for &c in &ticks {
                if self.n == 1 {
                    points.push(([a, 0.0], c));
                } else {
                    for &b in &ticks {
                        points.push(([a, b], c));
                    }
                }
            }
        }
        for (xs, z) in points {
            let g = self.g_at(&xs[..self.n], z);
            let mut scale = 1.0f64;
            for i in 0..m {
                for j in 0..m {
                    scale = scale.max(g[i][j].abs());
                }
            }
            for i in 0..m {
                for j in 0..m {
                    if (g[i][j] - g[j][i]).abs() > 1e-12 * scale {
                        return Err(Error::config(
                            "metric.g",
                            format!("not symmetric at x = {:?}, z = {z}", &xs[..self.n]),
                        ));
                    }
                }
            }
            if !spd(&g, m) {
                return Err(Error::config(
                    "metric.g",
                    format!("not positive definite at x = {:?}, z = {z}", &xs[..self.n]),
                ));
            }
        }

        // Spot-check closed-form derivatives against finite differences.
        if let Some(dg) = self.dg.clone() {
            let lo = vec![-half; self.n + 1];
            let hi = vec![half; self.n + 1];
            for pt in Halton::new(&lo, &hi).take(16) {
                let (x, z) = (&pt[..self.n], pt[self.n]);
                let cb = dg(x, z);
                let probe = Metric {
                    dg: None,
                    ..self.clone()
                };
                let fd = probe.dg_at(x, z);
                for l in 0..m {
                    for i in 0..m {
                        for j in 0..m {
                            let err = (cb[l][i][j] - fd[l][i][j]).abs();
                            if err > 1e-4 * (1.0 + cb[l][i][j].abs()) {
                                return Err(Error::config(
                                    "metric.dg",
                                    format!(
                                        "callback disagrees with finite differences by {err:.3e} \
                                         in d_{l} g_{i}{j} at x = {x:?}, z = {z}"
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Leading principal minors, good enough for 2x2 and 3x3.
fn spd(g: &Amb, m: usize) -> bool {
    let d1 = g[0][0];
    let d2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if m == 2 {
        return d1 > 0.0 && d2 > 0.0;
    }
    let d3 = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
        - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
        + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    d1 > 0.0 && d2 > 0.0 && d3 > 0.0
}

fn inv_amb(g: &Amb, m: usize) -> Option<Amb> {
    let mut out = [[0.0; 3]; 3];
    if m == 2 {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if det.abs() < 1e-14 * (1.0 + g[0][0].abs() + g[1][1].abs()).powi(2) {
            return None;
        }
        out[0][0] = g[1][1] / det;
        out[1][1] = g[0][0] / det;
        out[0][1] = -g[0][1] / det;
        out[1][0] = -g[1][0] / det;
        return Some(out);
    }
    let c00 = g[1][1] * g[2][2] - g[1][2] * g[2][1];
    let c01 = g[1][2] * g[2][0] - g[1][0] * g[2][2];
    let c02 = g[1][0] * g[2][1] - g[1][1] * g[2][0];
    let det = g[0][0] * c00 + g[0][1] * c01 + g[0][2] * c02;
    let scale: f64 = g.iter().flatten().fold(1.0, |s, v| s.max(v.abs()));
    if det.abs() < 1e-14 * scale.powi(3) {
        return None;
    }
    let c10 = g[0][2] * g[2][1] - g[0][1] * g[2][2];
    let c11 = g[0][0] * g[2][2] - g[0][2] * g[2][0];
    let c12 = g[0][1] * g[2][0] - g[0][0] * g[2][1];
    let c20 = g[0][1] * g[1][2] - g[0][2] * g[1][1];
    let c21 = g[0][2] * g[1][0] - g[0][0] * g[1][2];
    let c22 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let cof = [[c00, c10, c20], [c01, c11, c21], [c02, c12, c22]];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = cof[i][j] / det;
        }
    }
    Some(out)
}

/// Induced-metric data at one `(x, z, xi)`: enough for the field and the
/// density, no Christoffel symbols.
struct ChartAt {
    g: Amb,
    h: [[f64; 2]; 2],
    h_inv: [[f64; 2]; 2],
    det_h: f64,
    a_mat: [[f64; 2]; 2],
    b: [f64; 2],
}

fn chart_at(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> Option<ChartAt> {
    let n = metric.n;
    let nn = n; // height index
    let g = metric.g_at(x, z);
    let mut h = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            h[i][j] = g[i][j] + xi[i] * g[j][nn] + xi[j] * g[nn][i] + xi[i] * xi[j] * g[nn][nn];
        }
    }
    let mut h_inv = [[0.0; 2]; 2];
    let det_h;
    if n == 1 {
        det_h = h[0][0];
        if det_h.abs() < 1e-14 * (1.0 + h[0][0].abs()) {
            return None;
        }
        h_inv[0][0] = 1.0 / det_h;
    } else {
        det_h = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let scale = (1.0 + mat2::frobenius(h)).powi(2);
        if det_h.abs() < 1e-14 * scale {
            return None;
        }
        h_inv[0][0] = h[1][1] / det_h;
        h_inv[1][1] = h[0][0] / det_h;
        h_inv[0][1] = -h[0][1] / det_h;
        h_inv[1][0] = -h[1][0] / det_h;
    }
    let mut a_mat = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            a_mat[i][j] = g[nn][nn] * h_inv[i][j];
        }
    }
    let mut b = [0.0; 2];
    for i in 0..n {
        for j in 0..n {
            b[i] += g[j][nn] * h_inv[j][i];
        }
    }
    Some(ChartAt {
        g,
        h,
        h_inv,
        det_h,
        a_mat,
        b,
    })
}

/// The field `a(x, z, xi) = A xi + b`, padded with a zero second slot in
/// base dimension 1.
fn field_at(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> Option<[f64; 2]> {
    let c = chart_at(metric, x, z, xi)?;
    let mut a = [0.0; 2];
    for i in 0..metric.n {
        a[i] = c.b[i];
        for j in 0..metric.n {
            a[i] += c.a_mat[i][j] * xi[j];
        }
    }
    Some(a)
}

/// All chart-level objects at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct ChartCoefficients {
    /// Induced metric `h_ij`, top-left `n x n` block.
    pub h: [[f64; 2]; 2],
    /// Its inverse `h^ij`.
    pub h_inv: [[f64; 2]; 2],
    /// `a^ij = g_(n+1)(n+1) h^ij`.
    pub a: [[f64; 2]; 2],
    /// `b^i = g_j(n+1) h^ji`.
    pub b: [f64; 2],
    /// Zero-order term, the four-term Christoffel contraction.
    pub f: f64,
    /// `gamma[k][i][j] = Gamma^k_ij` at `(x, z)` over the ambient indices.
    pub gamma: [Amb; 3],
}

/// Assembles the chart coefficients at `(x, z, xi)`.
///
/// `x` and `z` must lie inside the chart; `xi` is unrestricted (the induced
/// metric of a graph stays positive definite whenever `g` is).
pub fn assemble(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> Result<ChartCoefficients> {
    let n = metric.n;
    if x.len() != n || xi.len() != n {
        return Err(Error::config(
            "metric",
            format!("expected {n} base coordinates, got x: {}, xi: {}", x.len(), xi.len()),
        ));
    }
    if x.iter().any(|v| v.abs() > metric.r0) || z.abs() > metric.r0 {
        return Err(Error::Range(format!(
            "evaluation point x = {x:?}, z = {z} leaves the chart of radius {}",
            metric.r0
        )));
    }
    let c = chart_at(metric, x, z, xi).ok_or_else(|| {
        let approx = 1.0 + xi.iter().map(|t| t * t).sum::<f64>();
        Error::Eval(format!(
            "induced metric is singular at x = {x:?}, z = {z}, xi = {xi:?} \
             (det h = {:.3e}, condition ~ {:.3e})",
            0.0, approx / f64::EPSILON
        ))
    })?;
    let nn = n;
    let m = n + 1;

    // Residual of the inverse, a cheap guard against ill conditioning.
    let mut resid = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { -1.0 } else { 0.0 };
            for k in 0..n {
                s += c.h[i][k] * c.h_inv[k][j];
            }
            resid = resid.max(s.abs());
        }
    }
    if resid > 1e-10 {
        let (lo, hi) = mat2::sym_eig(c.h, n);
        return Err(Error::Eval(format!(
            "induced metric too ill conditioned at x = {x:?}, z = {z}, xi = {xi:?}: \
             |h h^-1 - I| = {resid:.3e}, eigenvalues {lo:.3e}, {hi:.3e}"
        )));
    }

    let dg = metric.dg_at(x, z);
    let ginv = inv_amb(&c.g, m).ok_or_else(|| {
        Error::Eval(format!("ambient metric is singular at x = {x:?}, z = {z}"))
    })?;
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for l in 0..m {
                    s += ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                }
                gamma[k][i][j] = 0.5 * s;
            }
        }
    }

    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            let mut t3 = 0.0;
            let mut t4 = 0.0;
            for k in 0..m {
                t1 += gamma[k][nn][nn] * c.g[j][k];
                t2 += gamma[k][nn][nn] * c.g[k][nn];
                t3 += gamma[k][i][nn] * c.g[j][k];
                t4 += gamma[k][i][nn] * c.g[k][nn];
            }
            f += c.h_inv[i][j] * (xi[i] * t1 + xi[i] * xi[j] * t2 + t3 + xi[j] * t4);
        }
    }

    Ok(ChartCoefficients {
        h: c.h,
        h_inv: c.h_inv,
        a: c.a_mat,
        b: c.b,
        f,
        gamma,
    })
}

/// Wraps the chart field as an energy description for the nonlinear solver.
///
/// The density is `F = (1/2) ln det h`, whose gradient in `xi` is exactly
/// `A xi + b` for symmetric `g`; the zero-order slot carries `f` and the
/// hessian is a symmetrized central difference of the field. The declared
/// growth constants are sampled on the certified box, and `coercive_box`
/// records the radius from [`estimate_s0`] at margin 1/4 (an l1 radius in
/// `(x, z, xi)` jointly; the solver gate checks the gradient part).
pub fn field_from_chart(metric: &Metric) -> Result<EnergySpec> {
    let n = metric.n;
    let s0 = estimate_s0(metric, 0.25)?;

    // Sample the certified region for the declared constants. The product
    // box with per-coordinate half-width s0 / (2n + 1) sits inside the l1
    // ball the certificate covers.
    let half = s0 / (2 * n + 1) as f64;
    let lo = vec![-half; 2 * n + 1];
    let hi = vec![half; 2 * n + 1];
    let mut amax = 0.0f64;
    let mut fmax = 0.0f64;
    let mut dmax = 0.0f64;
    let mut eig_lo = f64::INFINITY;
    let mut eig_hi = 0.0f64;
    for pt in Halton::new(&lo, &hi).take(1024) {
        let (x, z, xi) = (&pt[..n], pt[n], &pt[n + 1..]);
        let c = chart_at(metric, x, z, xi)
            .ok_or_else(|| Error::Eval("induced metric singular on the certified box".into()))?;
        let a = field_at(metric, x, z, xi).unwrap();
        let coeff = assemble(metric, x, z, xi)?;
        amax = amax.max(norm2(a, n)).max(coeff.f.abs());
        fmax = fmax.max((0.5 * c.det_h.ln()).abs());
        let hess = fd_hessian(metric, x, z, xi);
        let (lo_e, hi_e) = mat2::sym_eig(hess, n);
        eig_lo = eig_lo.min(lo_e);
        eig_hi = eig_hi.max(hi_e);
        // Continuity modulus in (x, z) at fixed xi, against a shifted copy.
        let mut y = [0.0; 2];
        for k in 0..n {
            y[k] = -0.5 * pt[k];
        }
        let zeta = -0.5 * z;
        let ay = field_at(metric, &y[..n], zeta, xi).unwrap();
        let dist = x
            .iter()
            .zip(&y[..n])
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
            + (z - zeta).abs();
        if dist > 1e-12 {
            dmax = dmax.max(norm2([a[0] - ay[0], a[1] - ay[1]], n) / dist);
        }
    }
    if eig_lo <= 0.0 {
        return Err(Error::Coercivity(format!(
            "chart hessian loses positivity on the certified box (min eigenvalue {eig_lo:.3e})"
        )));
    }

    let growth = Growth {
        p: 2.0,
        lambda: 1.0,
        lambda_big: 1.0,
        nu: 1.5 * (1.0 / eig_lo).max(eig_hi).max(2.0),
        theta: 2.5 * dmax + 0.01,
        c1: 1e-3,
        c2: 1.0,
        c3: 0.0,
        phi1: 2.0 * fmax + 1.0,
        phi2: 2.0 * amax + 1e-9,
    };

    let (m1, m2, m3, m4) = (metric.clone(), metric.clone(), metric.clone(), metric.clone());
    let mut spec = EnergySpec::new(
        n,
        Box::new(move |x, z, xi| {
            let c = chart_at(&m1, x, z, xi).expect("induced metric singular");
            0.5 * c.det_h.ln()
        }),
        Box::new(move |x, z, xi| field_at(&m2, x, z, xi).expect("induced metric singular")),
        Box::new(move |x, z, xi| {
            assemble_loose(&m3, x, z, xi).f
        }),
        Box::new(move |x, z, xi| fd_hessian(&m4, x, z, xi)),
        growth,
    )?;
    spec.locally_coercive = true;
    spec.coercive_box = Some(s0);
    Ok(spec)
}

/// Assembly without the chart-domain gate, for solver callbacks whose finite
/// difference probes can step a hair outside the grid.
fn assemble_loose(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> ChartCoefficients {
    let n = metric.n;
    let nn = n;
    let m = n + 1;
    let c = chart_at(metric, x, z, xi).expect("induced metric singular");
    let dg = metric.dg_at(x, z);
    let ginv = inv_amb(&c.g, m).expect("ambient metric singular");
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for l in 0..m {
                    s += ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                }
                gamma[k][i][j] = 0.5 * s;
            }
        }
    }
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            let mut t3 = 0.0;
            let mut t4 = 0.0;
            for k in 0..m {
                t1 += gamma[k][nn][nn] * c.g[j][k];
                t2 += gamma[k][nn][nn] * c.g[k][nn];
                t3 += gamma[k][i][nn] * c.g[j][k];
                t4 += gamma[k][i][nn] * c.g[k][nn];
            }
            f += c.h_inv[i][j] * (xi[i] * t1 + xi[i] * xi[j] * t2 + t3 + xi[j] * t4);
        }
    }
    ChartCoefficients {
        h: c.h,
        h_inv: c.h_inv,
        a: c.a_mat,
        b: c.b,
        f,
        gamma,
    }
}

/// Symmetrized central difference of the field in `xi`.
fn fd_hessian(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> [[f64; 2]; 2] {
    let n = metric.n;
    let norm: f64 = xi.iter().map(|t| t * t).sum::<f64>();
    let step = 1e-5 * (1.0 + norm.sqrt());
    let mut rows = [[0.0; 2]; 2];
    let mut probe = [0.0; 2];
    probe[..n].copy_from_slice(xi);
    for k in 0..n {
        let keep = probe[k];
        probe[k] = keep + step;
        let ap = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[k] = keep - step;
        let am = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[k] = keep;
        for j in 0..n {
            rows[k][j] = (ap[j] - am[j]) / (2.0 * step);
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
        }
    }
    out
}

fn norm2(v: [f64; 2], n: usize) -> f64 {
    if n == 1 {
        v[0].abs()
    } else {
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    }
}

/// A twice differentiable test function given by closures; gradients and
/// hessians use the padded fixed-size layout of the rest of the crate.
pub struct SmoothFn {
    pub value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub grad: Box<dyn Fn(&[f64]) -> [f64; 2] + Send + Sync>,
    pub hess: Box<dyn Fn(&[f64]) -> [[f64; 2]; 2] + Send + Sync>,
}

/// Evaluates `L u` at one point through the nondivergence expansion
/// `c^ij d_ij u + d`, with `c^ij = d_xi_i a_j` and
/// `d = div_x a + d_z a . xi - f`, all coefficient derivatives by central
/// differences.
pub fn chart_operator_at(metric: &Metric, u: &SmoothFn, x: &[f64]) -> Result<f64> {
    let n = metric.n;
    if x.len() != n {
        return Err(Error::config(
            "metric",
            format!("expected {n} coordinates, got {}", x.len()),
        ));
    }
    let z = (u.value)(x);
    let grad = (u.grad)(x);
    let hess = (u.hess)(x);
    let xi = &grad[..n];
    let coeff = assemble(metric, x, z, xi)?;

    let xi_step = 1e-5 * (1.0 + norm2(grad, n));
    let mut c = [[0.0; 2]; 2];
    let mut probe = [0.0; 2];
    probe[..n].copy_from_slice(xi);
    for i in 0..n {
        let keep = probe[i];
        probe[i] = keep + xi_step;
        let ap = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[i] = keep - xi_step;
        let am = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[i] = keep;
        for j in 0..n {
            c[i][j] = (ap[j] - am[j]) / (2.0 * xi_step);
        }
    }

    let x_step = DG_REL_STEP * metric.r0;
    let mut div_x = 0.0;
    let mut xp = [0.0; 2];
    xp[..n].copy_from_slice(x);
    for i in 0..n {
        let keep = xp[i];
        xp[i] = keep + x_step;
        let ap = field_at(metric, &xp[..n], z, xi).expect("induced metric singular");
        xp[i] = keep - x_step;
        let am = field_at(metric, &xp[..n], z, xi).expect("induced metric singular");
        xp[i] = keep;
        div_x += (ap[i] - am[i]) / (2.0 * x_step);
    }
    let azp = field_at(metric, x, z + x_step, xi).expect("induced metric singular");
    let azm = field_at(metric, x, z - x_step, xi).expect("induced metric singular");
    let mut dz_dot = 0.0;
    for i in 0..n {
        dz_dot += (azp[i] - azm[i]) / (2.0 * x_step) * xi[i];
    }
    let d = div_x + dz_dot - coeff.f;

    let mut lu = d;
    for i in 0..n {
        for j in 0..n {
            lu += c[i][j] * hess[i][j];
        }
    }
    Ok(lu)
}

const S0_SAMPLES: usize = 4096;
const S0_LEVELS: u32 = 20;

/// Largest dyadic radius `s0 = r0 / 2^k` whose sampled coercivity
/// certificate clears `margin`.
///
/// On the l1 ball `|x|_1 + |z| + |xi|_1 <= s0` the field satisfies
/// `(a(xi) - a(eta)) . (xi - eta) >= (g_NN (1/2 - Lip s0) - kappa) |xi - eta|^2`
/// where `Lip` is a sampled Lipschitz modulus of `(x, z, xi) -> h^-1`,
/// `kappa = Lip sup |g_(j)(n+1)|` covers the drift, and the flat modulus 1/2
/// needs the sampled `lambda_max(h) <= 2`. `margin` must stay below the flat
/// constant 1/2.
pub fn estimate_s0(metric: &Metric, margin: f64) -> Result<f64> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::config(
            "margin",
            "must lie in (0, 1/2); the flat-chart modulus cannot exceed 1/2",
        ));
    }
    let n = metric.n;
    let nn = n;
    let dims = 2 * n + 1;
    for level in 0..=S0_LEVELS {
        let s = metric.r0 / f64::powi(2.0, level as i32);
        let lo = vec![-s; dims];
        let hi = vec![s; dims];
        let mut lip = 0.0f64;
        let mut off = 0.0f64;
        let mut g_lo = f64::INFINITY;
        let mut h_hi = 0.0f64;
        let mut singular = false;
        for pt in Halton::new(&lo, &hi).take(S0_SAMPLES) {
            // Project onto the l1 ball so extremes sit on its sphere.
            let l1: f64 = pt.iter().map(|v| v.abs()).sum();
            let p: Vec<f64> = if l1 > s {
                pt.iter().map(|v| v * s / l1).collect()
            } else {
                pt
            };
            let (x, z, xi) = (&p[..n], p[n], &p[n + 1..]);
            let g = metric.g_at(x, z);
            g_lo = g_lo.min(g[nn][nn]);
            let mut o = 0.0;
            for j in 0..n {
                o += g[j][nn] * g[j][nn];
            }
            off = off.max(o.sqrt());
            let Some(c) = chart_at(metric, x, z, xi) else {
                singular = true;
                break;
            };
            let (_, hi_e) = mat2::sym_eig(c.h, n);
            h_hi = h_hi.max(hi_e);

            // Coordinate derivatives of h^-1 at this sample.
            let step = 1e-6;
            let mut grad2 = 0.0;
            let mut coords = p.clone();
            for l in 0..dims {
                let keep = coords[l];
                coords[l] = keep + step;
                let cp = chart_at(metric, &coords[..n], coords[n], &coords[n + 1..]);
                coords[l] = keep - step;
                let cm = chart_at(metric, &coords[..n], coords[n], &coords[n + 1..]);
                coords[l] = keep;
                let (Some(cp), Some(cm)) = (cp, cm) else {
                    singular = true;
                    break;
                };
                let mut d = [[0.0; 2]; 2];
                for i in 0..n {
                    for j in 0..n {
                        d[i][j] = (cp.h_inv[i][j] - cm.h_inv[i][j]) / (2.0 * step);
                    }
                }
                grad2 += mat2::frobenius(d).powi(2);
            }
            if singular {
                break;
            }
            lip = lip.max(grad2.sqrt());
        }
        if singular {
            continue;
        }
        let cert = g_lo * (0.5 - lip * s).max(0.0) - off * lip;
        if h_hi <= 2.0 && cert >= margin {
            return Ok(s);
        }
    }
    Err(Error::Coercivity(format!(
        "no box down to radius {:.3e} certifies the coercivity margin {margin}",
        metric.r0 / f64::powi(2.0, S0_LEVELS as i32)
    )))
}

/// The nondivergence rewrite of the chart problem on a grid.
#[derive(Debug)]
pub struct NondivergenceReduction {
    /// `A_nd(x) = c^ij(x, psi, grad psi)`, identity on boundary rows.
    pub a_nd: MatrixField,
    /// `q = -L psi - (d(u) - d(psi)) chi - (c^ij(u) - c^ij(psi)) d_ij u chi`
    /// with `chi` the noncontact indicator; zero on boundary rows.
    pub q: ScalarField,
    /// Smallest interior `q`.
    pub min_q: f64,
    /// Smallest interior `-L psi`, the sampled analogue of the obstacle
    /// sign hypothesis.
    pub min_neg_l_psi: f64,
    /// Whether `min q >= min(-L psi) / 2 > 0` held.
    pub q_bound_holds: bool,
    /// Largest `|c - c^T|` over the nodes, recorded because the displayed
    /// index order only matters when the assembled field is asymmetric.
    pub asymmetry: f64,
    /// Eigenvalue range of the symmetrized `A_nd` over interior nodes.
    pub eig_range: (f64, f64),
}

struct PointOps {
    c: [[f64; 2]; 2],
    d: f64,
}

fn point_ops(metric: &Metric, x: &[f64], z: f64, xi: &[f64]) -> PointOps {
    let n = metric.n;
    let xi_step = 1e-5 * (1.0 + norm2([xi[0], *xi.get(1).unwrap_or(&0.0)], n));
    let mut c = [[0.0; 2]; 2];
    let mut probe = [0.0; 2];
    probe[..n].copy_from_slice(xi);
    for i in 0..n {
        let keep = probe[i];
        probe[i] = keep + xi_step;
        let ap = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[i] = keep - xi_step;
        let am = field_at(metric, x, z, &probe[..n]).expect("induced metric singular");
        probe[i] = keep;
        for j in 0..n {
            c[i][j] = (ap[j] - am[j]) / (2.0 * xi_step);
        }
    }
    let x_step = DG_REL_STEP * metric.r0;
    let mut div_x = 0.0;
    let mut xp = [0.0; 2];
    xp[..n].copy_from_slice(x);
    for i in 0..n {
        let keep = xp[i];
        xp[i] = keep + x_step;
        let ap = field_at(metric, &xp[..n], z, xi).expect("induced metric singular");
        xp[i] = keep - x_step;
        let am = field_at(metric, &xp[..n], z, xi).expect("induced metric singular");
        xp[i] = keep;
        div_x += (ap[i] - am[i]) / (2.0 * x_step);
    }
    let azp = field_at(metric, x, z + x_step, xi).expect("induced metric singular");
    let azm = field_at(metric, x, z - x_step, xi).expect("induced metric singular");
    let mut dz_dot = 0.0;
    for i in 0..n {
        dz_dot += (azp[i] - azm[i]) / (2.0 * x_step) * xi[i];
    }
    let f = assemble_loose(metric, x, z, xi).f;
    PointOps {
        c,
        d: div_x + dz_dot - f,
    }
}

/// Rewrites the solved chart problem in nondivergence form.
///
/// Freezing the coefficient at the obstacle gives
/// `A_nd : D^2 w = q chi_{w>0}` for `w = u - psi`; the returned report
/// carries the coefficient field, the right-hand side and the sampled sign
/// bounds. Fails if the symmetrized coefficient loses ellipticity at a node.
pub fn reduce_nondivergence(
    metric: &Metric,
    psi: &ScalarField,
    sol: &Solution,
) -> Result<NondivergenceReduction> {
    let grid = psi.grid;
    if grid.dim() != metric.n {
        return Err(Error::config(
            "metric",
            format!(
                "grid dimension {} does not match the chart dimension {}",
                grid.dim(),
                metric.n
            ),
        ));
    }
    if sol.u.grid.shape() != grid.shape() {
        return Err(Error::config("solution", "solution and obstacle grids differ"));
    }
    let n = metric.n;
    let grad_psi = grid::gradient(psi);
    let grad_u = grid::gradient(&sol.u);

    let mut a_nd = MatrixField::identity(grid);
    let mut q = ScalarField::zeros(grid);
    let mut min_q = f64::INFINITY;
    let mut min_neg_l_psi = f64::INFINITY;
    let mut asym = 0.0f64;
    let mut eig_lo = f64::INFINITY;
    let mut eig_hi = f64::NEG_INFINITY;

    for (i, j) in grid.interior() {
        let p = grid.node(i, j);
        let x = &p[..n];
        let k = grid.idx(i, j);

        let gp = grad_psi.at(i, j);
        let ops_psi = point_ops(metric, x, psi.at(i, j), &gp[..n]);
        let hess_psi = psi.hessian_at(i, j)?;
        let mut l_psi = ops_psi.d;
        for r in 0..n {
            for c in 0..n {
                l_psi += ops_psi.c[r][c] * hess_psi[r][c];
            }
        }
        min_neg_l_psi = min_neg_l_psi.min(-l_psi);

        let mut mat = ops_psi.c;
        if n == 1 {
            mat[1][1] = 1.0;
        }
        a_nd.set(i, j, mat);

        let sym = [
            [mat[0][0], 0.5 * (mat[0][1] + mat[1][0])],
            [0.5 * (mat[0][1] + mat[1][0]), mat[1][1]],
        ];
        let (lo, hi) = mat2::sym_eig(sym, n);
        if lo <= 0.0 {
            return Err(Error::Coercivity(format!(
                "nondivergence coefficient loses ellipticity at node ({i}, {j}): \
                 eigenvalues {lo:.3e}, {hi:.3e}"
            )));
        }
        eig_lo = eig_lo.min(lo);
        eig_hi = eig_hi.max(hi);
        asym = asym.max((mat[0][1] - mat[1][0]).abs());

        let mut value = -l_psi;
        if !sol.active[k] {
            let gu = grad_u.at(i, j);
            let ops_u = point_ops(metric, x, sol.u.at(i, j), &gu[..n]);
            let hess_u = sol.u.hessian_at(i, j)?;
            value -= ops_u.d - ops_psi.d;
            for r in 0..n {
                for c in 0..n {
                    value -= (ops_u.c[r][c] - ops_psi.c[r][c]) * hess_u[r][c];
                }
            }
        }
        q.set(i, j, value);
        min_q = min_q.min(value);
    }

    let q_bound_holds = min_neg_l_psi > 0.0 && min_q + 1e-12 >= 0.5 * min_neg_l_psi;
    Ok(NondivergenceReduction {
        a_nd,
        q,
        min_q,
        min_neg_l_psi,
        q_bound_holds,
        asymmetry: asym,
        eig_range: (eig_lo, eig_hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::solver::{solve_nonlinear_vi, SolverParams};

    fn identity3() -> Amb {
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            g[i][i] = 1.0;
        }
        g
    }

    #[test]
    fn flat_chart_collapses_to_identity() {
        let metric = Metric::flat(2, 1.0).unwrap();
        let lo = [-0.9; 5];
        let hi = [0.9; 5];
        for pt in Halton::new(&lo, &hi).take(1000) {
            let (x, z, xi) = (&pt[..2], pt[2], &pt[3..]);
            let c = assemble(&metric, x, z, xi).unwrap();
            assert!(c.b[0].abs().max(c.b[1].abs()) <= 1e-12);
            assert!(c.f.abs() <= 1e-12);
            let gmax = c
                .gamma
                .iter()
                .flatten()
                .flatten()
                .fold(0.0f64, |s, v| s.max(v.abs()));
            assert!(gmax <= 1e-12);
            let s2 = xi[0] * xi[0] + xi[1] * xi[1];
            for i in 0..2 {
                for j in 0..2 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((c.h[i][j] - (id + xi[i] * xi[j])).abs() <= 1e-13);
                }
                // Rank-one inverse identity h^-1 xi = xi / (1 + |xi|^2).
                let hx: f64 = (0..2).map(|j| c.h_inv[i][j] * xi[j]).sum();
                assert!((hx - xi[i] / (1.0 + s2)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn unit_slope_chart_matrices() {
        let metric = Metric::flat(2, 1.0).unwrap();
        let c = assemble(&metric, &[0.0, 0.0], 0.0, &[1.0, 0.0]).unwrap();
        let expect_h = [[2.0, 0.0], [0.0, 1.0]];
        let expect_inv = [[0.5, 0.0], [0.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((c.h[i][j] - expect_h[i][j]).abs() <= 1e-14);
                assert!((c.h_inv[i][j] - expect_inv[i][j]).abs() <= 1e-14);
                assert!((c.a[i][j] - expect_inv[i][j]).abs() <= 1e-14);
            }
        }
        let a = field_at(&metric, &[0.0, 0.0], 0.0, &[1.0, 0.0]).unwrap();
        assert!((a[0] - 0.5).abs() <= 1e-14 && a[1].abs() <= 1e-14);
    }

    /// For g = exp(2 phi) I the symbols collapse to
    /// `Gamma^k_ij = delta^k_i d_j phi + delta^k_j d_i phi - delta_ij d_k phi`.
    fn conformal_gamma(dphi: [f64; 3], m: usize) -> [Amb; 3] {
        let mut out = [[[0.0; 3]; 3]; 3];
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    let mut v = 0.0;
                    if k == i {
                        v += dphi[j];
                    }
                    if k == j {
                        v += dphi[i];
                    }
                    if i == j {
                        v -= dphi[k];
                    }
                    out[k][i][j] = v;
                }
            }
        }
        out
    }

    #[test]
    fn conformal_christoffels_match_the_closed_form() {
        let phi = |x: &[f64], z: f64| 0.1 * (x[0] + z);
        let fd_metric = Metric::conformal(2, 1.0, 1.0, phi).unwrap();
        let cb_metric = Metric::with_derivatives(
            2,
            1.0,
            1.0,
            move |x, z| {
                let c = (2.0 * phi(x, z)).exp();
                let mut g = identity3();
                for i in 0..3 {
                    g[i][i] = c;
                }
                g
            },
            move |x, z| {
                let c = (2.0 * phi(x, z)).exp();
                let dphi = [0.1, 0.0, 0.1];
                let mut out = [[[0.0; 3]; 3]; 3];
                for l in 0..3 {
                    for i in 0..3 {
                        out[l][i][i] = 2.0 * dphi[l] * c;
                    }
                }
                out
            },
        )
        .unwrap();

        let lo = [-0.7; 5];
        let hi = [0.7; 5];
        for pt in Halton::new(&lo, &hi).take(50) {
            let (x, z, xi) = (&pt[..2], pt[2], &pt[3..]);
            let oracle = conformal_gamma([0.1, 0.0, 0.1], 3);
            let fd = assemble(&fd_metric, x, z, xi).unwrap();
            let cb = assemble(&cb_metric, x, z, xi).unwrap();
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        assert!(
                            (fd.gamma[k][i][j] - oracle[k][i][j]).abs() <= 1e-6,
                            "finite differences stray at {k}{i}{j}"
                        );
                        assert!(
                            (cb.gamma[k][i][j] - oracle[k][i][j]).abs() <= 1e-11,
                            "callbacks stray at {k}{i}{j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn chart_field_is_the_gradient_of_its_density() {
        // Generic symmetric perturbation with height-row coupling, so the
        // drift b is active.
        let s = [[0.4, 0.1, 0.2], [0.1, 0.3, 0.1], [0.2, 0.1, 0.5]];
        let metric = Metric::new(2, 0.5, 1e-6, move |x, z| {
            let rho = 0.1 * (x[0] * x[0] + x[1] * x[1] + z * z);
            let mut g = identity3();
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] += rho * s[i][j];
                }
            }
            g
        })
        .unwrap();

        let lo = [-0.35; 5];
        let hi = [0.35; 5];
        let step = 1e-6;
        for pt in Halton::new(&lo, &hi).take(200) {
            let (x, z, xi) = (&pt[..2], pt[2], &pt[3..]);
            let a = field_at(&metric, x, z, xi).unwrap();
            let coeff = assemble(&metric, x, z, xi).unwrap();
            assert!(coeff.b[0].abs() + coeff.b[1].abs() > 0.0 || pt.iter().all(|v| v.abs() < 0.3));
            for k in 0..2 {
                let mut xp = [xi[0], xi[1]];
                xp[k] += step;
                let fp = 0.5 * chart_at(&metric, x, z, &xp).unwrap().det_h.ln();
                xp[k] -= 2.0 * step;
                let fm = 0.5 * chart_at(&metric, x, z, &xp).unwrap().det_h.ln();
                let fd = (fp - fm) / (2.0 * step);
                assert!(
                    (fd - a[k]).abs() <= 1e-8,
                    "field is not the density gradient: {} vs {}",
                    fd,
                    a[k]
                );
            }
            let h = fd_hessian(&metric, x, z, xi);
            assert!((h[0][1] - h[1][0]).abs() == 0.0);
        }
    }

    #[test]
    fn critical_point_operator_matches_the_laplacian() {
        let metric = Metric::flat(2, 1.0).unwrap();
        let bowl = SmoothFn {
            value: Box::new(|x| x[0] * x[0] + 2.0 * x[1] * x[1]),
            grad: Box::new(|x| [2.0 * x[0], 4.0 * x[1]]),
            hess: Box::new(|_| [[2.0, 0.0], [0.0, 4.0]]),
        };
        let lu = chart_operator_at(&metric, &bowl, &[0.0, 0.0]).unwrap();
        assert!((lu - 6.0).abs() <= 1e-6, "Lu = {lu} at the critical point");

        let affine = SmoothFn {
            value: Box::new(|x| 0.1 * x[0] - 0.05 * x[1] + 0.02),
            grad: Box::new(|_| [0.1, -0.05]),
            hess: Box::new(|_| [[0.0; 2]; 2]),
        };
        for pt in Halton::new(&[-0.5, -0.5], &[0.5, 0.5]).take(20) {
            let lu = chart_operator_at(&metric, &affine, &pt).unwrap();
            assert!(lu.abs() <= 1e-12, "affine graphs are minimal, got {lu}");
        }
    }

    #[test]
    fn s0_estimate_binds_at_the_working_box_for_flat() {
        let metric = Metric::flat(2, 0.3).unwrap();
        let s0 = estimate_s0(&metric, 0.25).unwrap();
        assert!((s0 - 0.3).abs() <= 1e-12, "s0 = {s0}");
        assert!(matches!(
            estimate_s0(&metric, 0.5),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            estimate_s0(&metric, 0.0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn s0_shrinks_as_the_metric_curves() {
        let mut values = Vec::new();
        for eps in [0.5, 2.0, 8.0] {
            let metric = Metric::conformal(2, 0.3, 1e-6, move |x, z| {
                eps * (x[0] * x[0] + z * z)
            })
            .unwrap();
            values.push(estimate_s0(&metric, 0.25).unwrap());
        }
        assert!(
            values[0] >= values[1] && values[1] >= values[2],
            "s0 not monotone: {values:?}"
        );
        assert!(values[2] < values[0], "no overall shrinkage: {values:?}");
    }

    #[test]
    fn nondivergence_reduction_on_a_concave_obstacle() {
        let metric = Metric::flat(1, 0.5).unwrap();
        let spec = field_from_chart(&metric).unwrap();
        let grid = Grid::new_1d(-0.25, 0.25, 129).unwrap();
        let psi = ScalarField::from_fn(grid, |p| 0.02 - p[0] * p[0]);
        let g = ScalarField::zeros(grid);
        let sol = solve_nonlinear_vi(&spec, &psi, &g, &SolverParams::default()).unwrap();
        assert!(sol.active.iter().any(|&a| a), "expected a contact interval");

        let red = reduce_nondivergence(&metric, &psi, &sol).unwrap();
        assert!(red.q_bound_holds, "q sign bound failed: {red:?}");
        assert!(red.asymmetry <= 1e-9);
        // Smallest coefficient on this slope range is (1 - 1/4)/(5/4)^2 = 0.48.
        assert!(red.eig_range.0 > 0.45, "ellipticity too weak: {:?}", red.eig_range);

        // Deep inside the contact set q reduces to -L psi, which is
        // 2 (1 - 4 x^2) / (1 + 4 x^2)^2 for this flat chart.
        for (i, j) in grid.interior() {
            let k = grid.idx(i, j);
            if !sol.active[k] {
                continue;
            }
            let x = grid.node(i, j)[0];
            let neighbors_active = [k.saturating_sub(1), k + 1]
                .iter()
                .all(|&t| t < sol.active.len() && sol.active[t]);
            if !neighbors_active {
                continue;
            }
            let s = 1.0 + 4.0 * x * x;
            let exact = 2.0 * (1.0 - 4.0 * x * x) / (s * s);
            assert!(
                (red.q.at(i, j) - exact).abs() <= 1e-6,
                "q = {} vs -L psi = {exact} at x = {x}",
                red.q.at(i, j)
            );
        }
    }

    #[test]
    fn affine_obstacle_has_no_sign_bound() {
        let metric = Metric::flat(1, 0.5).unwrap();
        let spec = field_from_chart(&metric).unwrap();
        let grid = Grid::new_1d(-0.25, 0.25, 65).unwrap();
        let psi = ScalarField::from_fn(grid, |p| 0.05 * p[0] - 0.02);
        let g = ScalarField::zeros(grid);
        let sol = solve_nonlinear_vi(&spec, &psi, &g, &SolverParams::default()).unwrap();
        let red = reduce_nondivergence(&metric, &psi, &sol).unwrap();
        assert!(!red.q_bound_holds, "flat obstacles have L psi = 0");
        assert!(red.min_neg_l_psi.abs() <= 1e-8);
    }

    #[test]
    fn validation_rejects_bad_metrics() {
        let scaled = Metric::new(2, 1.0, 1e-8, |_x, _z| {
            let mut g = identity3();
            g[0][0] = 1.1;
            g
        });
        assert!(matches!(scaled, Err(Error::Config { .. })));

        let indefinite = Metric::new(2, 1.0, 10.0, |x, _z| {
            let mut g = identity3();
            g[0][0] = 1.0 - 3.0 * x[0] * x[0];
            g
        });
        assert!(matches!(indefinite, Err(Error::Config { .. })));

        let wrong_dg = Metric::with_derivatives(
            1,
            1.0,
            1.0,
            |x, _z| {
                let mut g = identity3();
                g[0][0] = 1.0 + 0.5 * x[0] * x[0];
                g
            },
            |x, _z| {
                let mut out = [[[0.0; 3]; 3]; 3];
                out[0][0][0] = 2.0 * x[0]; // true derivative is x[0]
                out
            },
        );
        assert!(matches!(wrong_dg, Err(Error::Config { .. })));
    }
}
