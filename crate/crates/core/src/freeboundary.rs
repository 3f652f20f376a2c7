//! Free boundary extraction and classification.
//!
//! The contact set boundary is located from the computed solution by finding
//! where `(u - psi) - eps` changes sign along grid edges that join active to
//! inactive nodes. Around each located point the excess is renormalized,
//!
//! ```text
//! v(y) = w(x0 + A(x0)^{1/2} y) / h(x0),
//! ```
//!
//! which turns the frozen-coefficient equation into `lap v = 1` on `{v > 0}`:
//! every point then looks like one of two model configurations,
//!
//! ```text
//! regular:   v = ((y - tau e) . e)_+^2 / 2        (half-space profile)
//! singular:  v = (y - tau)' Q (y - tau) / 2,      Q >= 0, tr Q = 1,
//! ```
//!
//! and the balanced energy
//!
//! ```text
//! W(r) = r^(-n-2) int_{B_r} (|grad v|^2 + 2v) - 2 r^(-n-3) int_{bdry B_r} v^2
//! ```
//!
//! separates them: W is scale-invariant on the models and takes the value
//! [`regular_weiss_value`] on half-space profiles and exactly twice that on
//! every quadratic profile. Classification fits both models (offset `tau`
//! absorbs the O(h) extraction slack) and keeps the one that wins by a clear
//! margin; singular points are further graded by the kernel dimension of Q,
//! which is the dimension of the stratum the point lies on.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{gradient, MatrixField, ScalarField};
use crate::linearize::LinearizedProblem;
use crate::mat2;
use crate::quadrature;
use crate::solver::Solution;

/// Points where the numerical contact region meets the positivity region,
/// located by linear interpolation of `(u - psi) - eps` along mixed edges
/// and deduplicated at half a cell. Edges with a Dirichlet endpoint are
/// skipped: boundary nodes carry no contact flag, so a flip against one
/// marks where the contact region leaves the domain, not an interface
/// inside it.
pub fn extract_free_boundary(sol: &Solution, psi: &ScalarField) -> Vec<[f64; 2]> {
    let grid = sol.u.grid;
    let [nx, ny] = grid.shape();
    let phi = |i: usize, j: usize| -> f64 {
        let k = grid.idx(i, j);
        (sol.u.at(i, j) - psi.at(i, j)) - sol.eps_act[k]
    };
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut edge = |ia: usize, ja: usize, ib: usize, jb: usize| {
        if grid.is_boundary(ia, ja) || grid.is_boundary(ib, jb) {
            return;
        }
        if sol.active[grid.idx(ia, ja)] == sol.active[grid.idx(ib, jb)] {
            return;
        }
        let (fa, fb) = (phi(ia, ja), phi(ib, jb));
        let t = if (fa - fb).abs() > 1e-300 {
            (fa / (fa - fb)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let (pa, pb) = (grid.node(ia, ja), grid.node(ib, jb));
        pts.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
    };
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                edge(i, j, i + 1, j);
            }
            if grid.dim() == 2 && j + 1 < ny {
                edge(i, j, i, j + 1);
            }
        }
    }
    dedupe(pts, 0.5 * grid.min_spacing())
}

fn dedupe(pts: Vec<[f64; 2]>, tol: f64) -> Vec<[f64; 2]> {
    let mut kept: Vec<[f64; 2]> = Vec::new();
    'outer: for p in pts {
        for q in &kept {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d < tol {
                continue 'outer;
            }
        }
        kept.push(p);
    }
    kept
}

/// A blown-up view of the excess near one free boundary point, in the frame
/// where the governing operator is the plain Laplacian with unit right side.
pub trait LocalProfile {
    fn dim(&self) -> usize;
    /// Largest radius at which evaluation is meaningful.
    fn max_radius(&self) -> f64;
    fn value(&self, y: [f64; 2]) -> f64;
    fn grad(&self, y: [f64; 2]) -> [f64; 2];
}

/// Profile given in closed form; used to validate the classification
/// machinery against known configurations without any grid in the loop.
pub struct ExactProfile<F, G>
where
    F: Fn([f64; 2]) -> f64,
    G: Fn([f64; 2]) -> [f64; 2],
{
    pub dim: usize,
    pub value: F,
    pub grad: G,
}

impl<F, G> LocalProfile for ExactProfile<F, G>
where
    F: Fn([f64; 2]) -> f64,
    G: Fn([f64; 2]) -> [f64; 2],
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_radius(&self) -> f64 {
        f64::INFINITY
    }
    fn value(&self, y: [f64; 2]) -> f64 {
        (self.value)(y)
    }
    fn grad(&self, y: [f64; 2]) -> [f64; 2] {
        (self.grad)(y)
    }
}

/// Grid-backed profile: v(y) = w(x0 + S y) / f0 with S the symmetric square
/// root of the local coefficient matrix and f0 the local source value, so
/// that lap v = 1 holds on the positivity set up to variable-coefficient and
/// discretization error.
pub struct NormalizedProfile {
    w: ScalarField,
    wx: ScalarField,
    wy: ScalarField,
    x0: [f64; 2],
    s: [[f64; 2]; 2],
    f0: f64,
    dim: usize,
    r_max: f64,
    cell: f64,
}

impl NormalizedProfile {
    pub fn new(
        w: &ScalarField,
        a0: [[f64; 2]; 2],
        f0: f64,
        x0: [f64; 2],
    ) -> Result<NormalizedProfile> {
        if !(f0 > 0.0) {
            return Err(Error::config(
                "freeboundary",
                format!("source value {f0} at the blow-up center is not positive"),
            ));
        }
        let dim = w.grid.dim();
        let (emin, emax) = mat2::sym_eig(a0, dim);
        if emin <= 0.0 {
            return Err(Error::Coercivity(format!(
                "coefficient matrix at the blow-up center has eigenvalue {emin}"
            )));
        }
        let s = mat2::sym_sqrt(a0, dim);
        let g = gradient(w);
        let (lo, hi) = w.grid.bounds();
        let mut dist = f64::INFINITY;
        for ax in 0..dim {
            dist = dist.min(x0[ax] - lo[ax]).min(hi[ax] - x0[ax]);
        }
        let margin = 2.0 * w.grid.min_spacing();
        Ok(NormalizedProfile {
            w: w.clone(),
            wx: g.component(0),
            wy: g.component(1),
            x0,
            s,
            f0,
            dim,
            r_max: ((dist - margin) / emax.sqrt()).max(0.0),
            // One grid cell along the least-stretched direction: features
            // below this scale in y are not resolved.
            cell: w.grid.min_spacing() / emin.sqrt(),
        })
    }

    /// Grid resolution transported to the normalized frame.
    pub fn cell(&self) -> f64 {
        self.cell
    }

    fn physical(&self, y: [f64; 2]) -> [f64; 2] {
        let sy = mat2::mul_vec(self.s, y);
        let (lo, hi) = self.w.grid.bounds();
        let mut x = [self.x0[0] + sy[0], self.x0[1] + sy[1]];
        for ax in 0..self.dim {
            x[ax] = x[ax].clamp(lo[ax], hi[ax]);
        }
        x
    }
}

impl LocalProfile for NormalizedProfile {
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_radius(&self) -> f64 {
        self.r_max
    }
    fn value(&self, y: [f64; 2]) -> f64 {
        let x = self.physical(y);
        self.w.interp(x).unwrap_or(0.0) / self.f0
    }
    fn grad(&self, y: [f64; 2]) -> [f64; 2] {
        let x = self.physical(y);
        let gx = self.wx.interp(x).unwrap_or(0.0);
        let gy = if self.dim == 2 {
            self.wy.interp(x).unwrap_or(0.0)
        } else {
            0.0
        };
        let g = mat2::mul_vec(self.s, [gx, gy]);
        [g[0] / self.f0, g[1] / self.f0]
    }
}

/// Value of the balanced energy on half-space profiles: 1/6 on the line,
/// pi/16 in the plane. Quadratic profiles score exactly twice this.
pub fn regular_weiss_value(dim: usize) -> f64 {
    match dim {
        1 => 1.0 / 6.0,
        _ => PI / 16.0,
    }
}

/// Balanced energy W(r) of a profile, by Gauss-Legendre quadrature in the
/// radius and a uniform (trapezoid) rule in the angle.
pub fn weiss_energy(p: &dyn LocalProfile, r: f64) -> Result<f64> {
    weiss_energy_with(p, r, 64, 2048)
}

fn weiss_energy_with(p: &dyn LocalProfile, r: f64, nrad: usize, nang: usize) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Range(format!("balanced energy radius {r} not positive")));
    }
    if r > p.max_radius() {
        return Err(Error::Range(format!(
            "balanced energy radius {r} exceeds the profile's usable radius {}",
            p.max_radius()
        )));
    }
    let rule = quadrature::gauss_legendre(nrad)?;
    if p.dim() == 1 {
        let mut bulk = 0.0;
        for &(t, wq) in &rule {
            for sign in [-1.0, 1.0] {
                let y = [sign * r * t, 0.0];
                let g = p.grad(y);
                bulk += wq * r * (g[0] * g[0] + 2.0 * p.value(y));
            }
        }
        let (vp, vm) = (p.value([r, 0.0]), p.value([-r, 0.0]));
        return Ok(bulk / r.powi(3) - 2.0 * (vp * vp + vm * vm) / r.powi(4));
    }
    let dth = 2.0 * PI / nang as f64;
    let mut bulk = 0.0;
    for &(t, wq) in &rule {
        let rho = r * t;
        let mut ring = 0.0;
        for k in 0..nang {
            let th = dth * k as f64;
            let y = [rho * th.cos(), rho * th.sin()];
            let g = p.grad(y);
            ring += g[0] * g[0] + g[1] * g[1] + 2.0 * p.value(y);
        }
        bulk += wq * r * ring * dth * rho;
    }
    let mut bdry = 0.0;
    for k in 0..nang {
        let th = dth * k as f64;
        let v = p.value([r * th.cos(), r * th.sin()]);
        bdry += v * v;
    }
    bdry *= dth * r;
    Ok(bulk / r.powi(4) - 2.0 * bdry / r.powi(5))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointKind {
    /// Half-space profile; `normal` is the growth direction of the excess in
    /// the normalized frame (points from the contact set into the positivity
    /// set).
    Regular { normal: [f64; 2] },
    /// Quadratic profile with coefficient matrix `q` (unit trace, positive
    /// semidefinite). `stratum` is the kernel dimension of q: the dimension
    /// of the manifold of singular points this one lies on.
    Singular { stratum: usize, q: [[f64; 2]; 2] },
    /// Neither model wins by a clear margin, or the data is too degenerate
    /// to normalize.
    Ambiguous,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub kind: PointKind,
    /// Balanced energy at `radius`.
    pub weiss: f64,
    /// `weiss` over the half-space value; near 1 at regular points, near 2
    /// at singular ones.
    pub weiss_ratio: f64,
    /// Relative RMS misfit of the best half-space model.
    pub fit_regular: f64,
    /// Relative RMS misfit of the best quadratic model.
    pub fit_singular: f64,
    pub radius: f64,
}

struct Samples {
    y: Vec<[f64; 2]>,
    v: Vec<f64>,
    rms: f64,
}

fn collect_samples(p: &dyn LocalProfile, r: f64) -> Samples {
    let mut y = Vec::new();
    if p.dim() == 1 {
        let n = 64;
        for k in 0..=n {
            y.push([r * (2.0 * k as f64 / n as f64 - 1.0), 0.0]);
        }
    } else {
        let (nr, nth) = (12, 64);
        for m in 0..nr {
            // Area-uniform rings.
            let rho = r * ((m as f64 + 0.5) / nr as f64).sqrt();
            for k in 0..nth {
                let th = 2.0 * PI * k as f64 / nth as f64;
                y.push([rho * th.cos(), rho * th.sin()]);
            }
        }
    }
    let v: Vec<f64> = y.iter().map(|&p_| p.value(p_)).collect();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    Samples { y, v, rms }
}

fn rms_misfit(s: &Samples, model: impl Fn([f64; 2]) -> f64) -> f64 {
    let mut acc = 0.0;
    for (k, &y) in s.y.iter().enumerate() {
        let d = s.v[k] - model(y);
        acc += d * d;
    }
    (acc / s.v.len() as f64).sqrt() / s.rms
}

/// Best half-space model over direction and offset: returns (relative
/// misfit, direction, offset).
fn fit_regular(s: &Samples, dim: usize, slack: f64) -> (f64, [f64; 2], f64) {
    let eval = |e: [f64; 2], tau: f64| -> f64 {
        rms_misfit(s, |y| {
            let d = y[0] * e[0] + y[1] * e[1] - tau;
            if d > 0.0 {
                0.5 * d * d
            } else {
                0.0
            }
        })
    };
    let taus = |c: f64, half: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| c - half + 2.0 * half * k as f64 / (n - 1) as f64)
            .collect()
    };
    if dim == 1 {
        let mut best = (f64::INFINITY, [1.0, 0.0], 0.0);
        for sgn in [1.0f64, -1.0] {
            let e = [sgn, 0.0];
            let mut tb = (f64::INFINITY, 0.0);
            for &t in &taus(0.0, slack, 33) {
                let m = eval(e, t);
                if m < tb.0 {
                    tb = (m, t);
                }
            }
            for &t in &taus(tb.1, slack / 8.0, 17) {
                let m = eval(e, t);
                if m < tb.0 {
                    tb = (m, t);
                }
            }
            if tb.0 < best.0 {
                best = (tb.0, e, tb.1);
            }
        }
        return best;
    }
    let mut best = (f64::INFINITY, 0.0f64, 0.0f64); // (misfit, theta, tau)
    let coarse = 128;
    for k in 0..coarse {
        let th = 2.0 * PI * k as f64 / coarse as f64;
        let e = [th.cos(), th.sin()];
        for &t in &taus(0.0, slack, 9) {
            let m = eval(e, t);
            if m < best.0 {
                best = (m, th, t);
            }
        }
    }
    let mut dth = 2.0 * PI / coarse as f64;
    let mut dtau = slack / 4.0;
    for _ in 0..2 {
        let (th0, t0) = (best.1, best.2);
        for kk in 0..17 {
            let th = th0 - dth + 2.0 * dth * kk as f64 / 16.0;
            let e = [th.cos(), th.sin()];
            for &t in &taus(t0, dtau, 9) {
                let t = t.clamp(-slack, slack);
                let m = eval(e, t);
                if m < best.0 {
                    best = (m, th, t);
                }
            }
        }
        dth /= 8.0;
        dtau /= 4.0;
    }
    (best.0, [best.1.cos(), best.1.sin()], best.2)
}

/// Best unit-trace positive semidefinite quadratic model: linear least
/// squares in the matrix and center, then an eigenvalue clamp. Returns
/// (relative misfit, matrix, center).
fn fit_singular(s: &Samples, dim: usize, slack: f64) -> (f64, [[f64; 2]; 2], [f64; 2]) {
    if dim == 1 {
        // v ~ (y - tau)^2 / 2: regress v - y^2/2 on [y, 1].
        let n = s.y.len() as f64;
        let (mut sy, mut syy, mut sz, mut szy) = (0.0, 0.0, 0.0, 0.0);
        for (k, &y) in s.y.iter().enumerate() {
            let z = s.v[k] - 0.5 * y[0] * y[0];
            sy += y[0];
            syy += y[0] * y[0];
            sz += z;
            szy += z * y[0];
        }
        let det = n * syy - sy * sy;
        let b = if det.abs() > 1e-300 {
            (n * szy - sy * sz) / det
        } else {
            0.0
        };
        let tau = (-b).clamp(-slack, slack);
        let q = [[1.0, 0.0], [0.0, 0.0]];
        let mis = rms_misfit(s, |y| 0.5 * (y[0] - tau) * (y[0] - tau));
        return (mis, q, [tau, 0.0]);
    }
    // Model 1/2 (y-tau)'Q(y-tau) with q11 + q22 = 1 expands to
    //   v - y2^2/2 = q11 (y1^2 - y2^2)/2 + q12 y1 y2 + b1 y1 + b2 y2 + c.
    use nalgebra::{SMatrix, SVector};
    let mut ata = SMatrix::<f64, 5, 5>::zeros();
    let mut atb = SVector::<f64, 5>::zeros();
    for (k, &y) in s.y.iter().enumerate() {
        let feat = [
            0.5 * (y[0] * y[0] - y[1] * y[1]),
            y[0] * y[1],
            y[0],
            y[1],
            1.0,
        ];
        let z = s.v[k] - 0.5 * y[1] * y[1];
        for r in 0..5 {
            for c in 0..5 {
                ata[(r, c)] += feat[r] * feat[c];
            }
            atb[r] += feat[r] * z;
        }
    }
    let beta = match ata.lu().solve(&atb) {
        Some(b) => b,
        None => return (f64::INFINITY, [[0.5, 0.0], [0.0, 0.5]], [0.0, 0.0]),
    };
    let q_raw = [[beta[0], beta[1]], [beta[1], 1.0 - beta[0]]];
    let (vals, vecs) = mat2::sym_eig_vectors(q_raw);
    let clamped = [vals[0].max(0.0), vals[1].max(0.0)];
    let tr = clamped[0] + clamped[1];
    if tr < 1e-8 {
        return (f64::INFINITY, [[0.5, 0.0], [0.0, 0.5]], [0.0, 0.0]);
    }
    let lam = [clamped[0] / tr, clamped[1] / tr];
    let mut q = [[0.0f64; 2]; 2];
    for k in 0..2 {
        for r in 0..2 {
            for c in 0..2 {
                q[r][c] += lam[k] * vecs[k][r] * vecs[k][c];
            }
        }
    }
    // Center from Q tau = -b, inverted on the well-conditioned eigenspace.
    let bvec = [beta[2], beta[3]];
    let mut tau = [0.0f64; 2];
    for k in 0..2 {
        if lam[k] > 0.05 {
            let proj = bvec[0] * vecs[k][0] + bvec[1] * vecs[k][1];
            let c = -proj / lam[k];
            tau[0] += c * vecs[k][0];
            tau[1] += c * vecs[k][1];
        }
    }
    let tn = (tau[0] * tau[0] + tau[1] * tau[1]).sqrt();
    if tn > slack {
        tau = [tau[0] * slack / tn, tau[1] * slack / tn];
    }
    let mis = rms_misfit(s, |y| {
        let d = [y[0] - tau[0], y[1] - tau[1]];
        0.5 * (q[0][0] * d[0] * d[0] + 2.0 * q[0][1] * d[0] * d[1] + q[1][1] * d[1] * d[1])
    });
    (mis, q, tau)
}

/// Required multiplicative separation between the two model misfits; below
/// it the point is reported ambiguous rather than guessed.
const FIT_MARGIN: f64 = 1.2;
/// Worst acceptable relative misfit for the winning model.
const FIT_CEILING: f64 = 0.6;
/// Eigenvalues below this fraction of the largest count as a degenerate
/// direction of the quadratic model.
const STRATUM_CUT: f64 = 0.1;

/// Classify one profile at radius `r`. `slack` bounds how far the true free
/// boundary point may sit from the origin of the profile (use the grid
/// resolution for extracted points).
pub fn classify(p: &dyn LocalProfile, r: f64, slack: f64) -> Result<Classification> {
    let weiss = weiss_energy_with(p, r, 48, 1024)?;
    let ratio = weiss / regular_weiss_value(p.dim());
    let s = collect_samples(p, r);
    if !(s.rms > 1e-300) {
        return Ok(Classification {
            kind: PointKind::Ambiguous,
            weiss,
            weiss_ratio: ratio,
            fit_regular: f64::INFINITY,
            fit_singular: f64::INFINITY,
            radius: r,
        });
    }
    let (fr, e, _tau_r) = fit_regular(&s, p.dim(), slack);
    let (fs, q, _tau_s) = fit_singular(&s, p.dim(), slack);
    let kind = if fr.min(fs) > FIT_CEILING {
        PointKind::Ambiguous
    } else if fs >= FIT_MARGIN * fr {
        PointKind::Regular { normal: e }
    } else if fr >= FIT_MARGIN * fs {
        let (vals, _) = mat2::sym_eig_vectors(q);
        let cut = STRATUM_CUT * vals[1].max(1e-300);
        let stratum = if p.dim() == 1 {
            0
        } else {
            vals.iter().filter(|&&l| l < cut).count()
        };
        PointKind::Singular { stratum, q }
    } else {
        PointKind::Ambiguous
    };
    Ok(Classification {
        kind,
        weiss,
        weiss_ratio: ratio,
        fit_regular: fr,
        fit_singular: fs,
        radius: r,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifiedPoint {
    pub x: [f64; 2],
    pub class: Classification,
}

#[derive(Debug, Clone)]
pub struct FreeBoundaryReport {
    pub points: Vec<ClassifiedPoint>,
    pub regular: usize,
    pub singular: usize,
    pub ambiguous: usize,
    /// Singular point counts by stratum dimension.
    pub strata: Vec<usize>,
    pub warnings: Vec<String>,
}

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
            out[r][c] = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10)
                + ty * ((1.0 - tx) * v01 + tx * v11);
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Extract, normalize and classify every free boundary point of a computed
/// solution, checking the balanced energy for quasi-monotonicity along the
/// way.
pub fn stratify(
    sol: &Solution,
    lin: &LinearizedProblem,
    psi: &ScalarField,
) -> Result<FreeBoundaryReport> {
    let grid = sol.u.grid;
    let dim = grid.dim();
    let w = ScalarField::from_index_fn(grid, |i, j| sol.u.at(i, j) - psi.at(i, j));
    let h_scale = lin.h.sup_norm().max(1e-300);
    let locations = extract_free_boundary(sol, psi);

    let mut points = Vec::new();
    let mut warnings = Vec::new();
    let (mut n_reg, mut n_sing, mut n_amb) = (0, 0, 0);
    let mut strata = vec![0usize; dim];

    let ambiguous_at = |weiss: f64, ratio: f64, r: f64| Classification {
        kind: PointKind::Ambiguous,
        weiss,
        weiss_ratio: ratio,
        fit_regular: f64::INFINITY,
        fit_singular: f64::INFINITY,
        radius: r,
    };

    for x in locations {
        let a0 = interp_matrix(&lin.a, x);
        let f0 = lin.h.interp(x).unwrap_or(0.0);
        if f0 <= 1e-8 * h_scale {
            warnings.push(format!(
                "source value {f0:.3e} at free boundary point ({:.4}, {:.4}) is not \
                 bounded away from zero; nondegeneracy fails there and the point \
                 cannot be classified",
                x[0], x[1]
            ));
            points.push(ClassifiedPoint {
                x,
                class: ambiguous_at(0.0, 0.0, 0.0),
            });
            n_amb += 1;
            continue;
        }
        let profile = NormalizedProfile::new(&w, a0, f0, x)?;
        let cell = profile.cell();
        let r = (6.0 * cell).min(0.8 * profile.max_radius());
        if r < 3.0 * cell {
            warnings.push(format!(
                "free boundary point ({:.4}, {:.4}) sits too close to the domain \
                 boundary to classify at this resolution",
                x[0], x[1]
            ));
            points.push(ClassifiedPoint {
                x,
                class: ambiguous_at(0.0, 0.0, r),
            });
            n_amb += 1;
            continue;
        }

        // Quasi-monotonicity of the balanced energy across dyadic radii:
        // genuine solutions may only gain energy with radius, up to noise.
        let mut radii = Vec::new();
        let mut rr = r;
        while rr >= 2.0 * cell * 0.999 && radii.len() < 5 {
            radii.push(rr);
            rr /= std::f64::consts::SQRT_2;
        }
        radii.reverse();
        let mut ws = Vec::with_capacity(radii.len());
        for &rad in &radii {
            ws.push(weiss_energy_with(&profile, rad, 32, 512)?);
        }
        let mut gains = Vec::new();
        let mut drops = Vec::new();
        for k in 0..ws.len().saturating_sub(1) {
            let d = ws[k + 1] - ws[k];
            if d >= 0.0 {
                gains.push(d);
            } else {
                drops.push((-d, radii[k + 1]));
            }
        }
        let floor = (2.0 * median(gains)).max(1e-6);
        for (d, rad) in drops {
            if d > floor {
                warnings.push(format!(
                    "balanced energy drops by {d:.3e} towards radius {rad:.3e} at \
                     ({:.4}, {:.4}); quasi-monotonicity violated beyond noise",
                    x[0], x[1]
                ));
            }
        }

        let class = classify(&profile, r, 1.5 * cell)?;
        match class.kind {
            PointKind::Regular { .. } => n_reg += 1,
            PointKind::Singular { stratum, .. } => {
                n_sing += 1;
                if stratum < strata.len() {
                    strata[stratum] += 1;
                }
            }
            PointKind::Ambiguous => n_amb += 1,
        }
        points.push(ClassifiedPoint { x, class });
    }

    Ok(FreeBoundaryReport {
        points,
        regular: n_reg,
        singular: n_sing,
        ambiguous: n_amb,
        strata,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::linearize::linearize_quadratic;
    use crate::solver::{solve_quadratic_vi, SolverParams};

    fn halfspace(dim: usize, e: [f64; 2], tau: f64) -> impl LocalProfile {
        ExactProfile {
            dim,
            value: move |y: [f64; 2]| {
                let d = y[0] * e[0] + y[1] * e[1] - tau;
                if d > 0.0 {
                    0.5 * d * d
                } else {
                    0.0
                }
            },
            grad: move |y: [f64; 2]| {
                let d = y[0] * e[0] + y[1] * e[1] - tau;
                if d > 0.0 {
                    [d * e[0], d * e[1]]
                } else {
                    [0.0, 0.0]
                }
            },
        }
    }

    fn quadratic_profile(dim: usize, q: [[f64; 2]; 2]) -> impl LocalProfile {
        ExactProfile {
            dim,
            value: move |y: [f64; 2]| {
                0.5 * (q[0][0] * y[0] * y[0] + 2.0 * q[0][1] * y[0] * y[1] + q[1][1] * y[1] * y[1])
            },
            grad: move |y: [f64; 2]| mat2::mul_vec(q, y),
        }
    }

    #[test]
    fn balanced_energy_halfspace_plane() {
        let p = halfspace(2, [1.0, 0.0], 0.0);
        let w = weiss_energy(&p, 0.7).unwrap();
        assert!((w - PI / 16.0).abs() < 1e-6, "W = {w}");
        // Scale invariance of the model profile.
        let w2 = weiss_energy(&p, 0.25).unwrap();
        assert!((w - w2).abs() < 1e-6, "{w} vs {w2}");
    }

    #[test]
    fn balanced_energy_quadratics_plane() {
        // Every unit-trace quadratic scores pi/8, isotropic or not.
        let iso = quadratic_profile(2, [[0.5, 0.0], [0.0, 0.5]]);
        let ani = quadratic_profile(2, [[0.8, 0.0], [0.0, 0.2]]);
        let w_iso = weiss_energy(&iso, 0.6).unwrap();
        let w_ani = weiss_energy(&ani, 0.6).unwrap();
        assert!((w_iso - PI / 8.0).abs() < 1e-9, "W = {w_iso}");
        assert!((w_ani - PI / 8.0).abs() < 1e-9, "W = {w_ani}");
    }

    #[test]
    fn balanced_energy_line_models() {
        let reg = halfspace(1, [1.0, 0.0], 0.0);
        let sing = quadratic_profile(1, [[1.0, 0.0], [0.0, 0.0]]);
        let wr = weiss_energy(&reg, 0.8).unwrap();
        let ws = weiss_energy(&sing, 0.8).unwrap();
        assert!((wr - 1.0 / 6.0).abs() < 1e-12, "W = {wr}");
        assert!((ws - 1.0 / 3.0).abs() < 1e-12, "W = {ws}");
    }

    #[test]
    fn classify_recovers_halfspace_direction() {
        let th = 40.0f64.to_radians();
        let e = [th.cos(), th.sin()];
        let p = halfspace(2, e, 0.03);
        let class = classify(&p, 0.7, 0.05).unwrap();
        match class.kind {
            PointKind::Regular { normal } => {
                let err = ((normal[0] - e[0]).powi(2) + (normal[1] - e[1]).powi(2)).sqrt();
                assert!(err < 5e-3, "direction off by {err}");
            }
            ref k => panic!("expected regular, got {k:?}"),
        }
        assert!(class.fit_regular < 1e-2, "misfit {}", class.fit_regular);
        assert!((class.weiss_ratio - 1.0).abs() < 0.15);
    }

    #[test]
    fn classify_recovers_quadratic_matrix_and_strata() {
        let q = [[0.7, 0.1], [0.1, 0.3]];
        let p = quadratic_profile(2, q);
        let class = classify(&p, 0.6, 0.05).unwrap();
        match class.kind {
            PointKind::Singular { stratum, q: qf } => {
                assert_eq!(stratum, 0);
                for r in 0..2 {
                    for c in 0..2 {
                        assert!((qf[r][c] - q[r][c]).abs() < 1e-6, "{qf:?}");
                    }
                }
            }
            ref k => panic!("expected singular, got {k:?}"),
        }
        assert!((class.weiss_ratio - 2.0).abs() < 1e-3);

        // A rank-one matrix marks a point on a one-dimensional stratum.
        let line = quadratic_profile(2, [[1.0, 0.0], [0.0, 0.0]]);
        let class = classify(&line, 0.6, 0.05).unwrap();
        match class.kind {
            PointKind::Singular { stratum, .. } => assert_eq!(stratum, 1),
            ref k => panic!("expected singular, got {k:?}"),
        }
    }

    #[test]
    fn classification_is_rotation_equivariant() {
        // nang and the angular search grid are both divisible by 4, so a
        // quarter turn maps every sampling artifact onto itself and the
        // recovered directions must differ by exactly the rotation.
        let th = 40.0f64.to_radians();
        let e = [th.cos(), th.sin()];
        let p1 = halfspace(2, e, 0.02);
        let p2 = halfspace(2, [-e[1], e[0]], 0.02);
        let c1 = classify(&p1, 0.7, 0.05).unwrap();
        let c2 = classify(&p2, 0.7, 0.05).unwrap();
        let (n1, n2) = match (&c1.kind, &c2.kind) {
            (PointKind::Regular { normal: a }, PointKind::Regular { normal: b }) => (*a, *b),
            other => panic!("expected two regular points, got {other:?}"),
        };
        assert!((n2[0] + n1[1]).abs() < 1e-9 && (n2[1] - n1[0]).abs() < 1e-9);
        assert!((c1.weiss - c2.weiss).abs() < 1e-12);
        assert!((c1.fit_regular - c2.fit_regular).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_normalization_recovers_halfspace() {
        // w = (x_+)^2 / 8 solves -div(diag(4,1) grad w) + 1 = 0 on {w > 0};
        // after normalization it must look exactly like the half-space model.
        let grid = Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [129, 129]).unwrap();
        let w = ScalarField::from_fn(grid, |p| {
            let t = p[0].max(0.0);
            t * t / 8.0
        });
        let profile = NormalizedProfile::new(&w, [[4.0, 0.0], [0.0, 1.0]], 1.0, [0.0, 0.0]).unwrap();
        let r = 6.0 * profile.cell();
        let wv = weiss_energy(&profile, r).unwrap();
        assert!(
            (wv - PI / 16.0).abs() < 0.01 * PI / 16.0,
            "W = {wv} vs {}",
            PI / 16.0
        );
        let class = classify(&profile, r, 1.5 * profile.cell()).unwrap();
        match class.kind {
            PointKind::Regular { normal } => {
                assert!(normal[0] > 0.95, "normal {normal:?}");
            }
            ref k => panic!("expected regular, got {k:?}"),
        }
    }

    #[test]
    fn extraction_brackets_taut_contact_interval() {
        let grid = Grid::new_1d(-1.0, 1.0, 129).unwrap();
        let psi = ScalarField::zeros(grid);
        let f = ScalarField::from_fn(grid, |_| 1.0);
        let g = ScalarField::from_fn(grid, |_| 0.125);
        let a = MatrixField::identity(grid);
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        let pts = extract_free_boundary(&sol, &psi);
        assert_eq!(pts.len(), 2, "{pts:?}");
        let h = grid.spacing()[0];
        let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 0.5).abs() <= h, "{xs:?}");
        assert!((xs[1] - 0.5).abs() <= h, "{xs:?}");

        // End to end: both ends classify regular with outward growth.
        let lin = linearize_quadratic(&a, &f, &psi).unwrap();
        let report = stratify(&sol, &lin, &psi).unwrap();
        assert_eq!(report.regular, 2, "{report:?}");
        assert_eq!(report.singular, 0);
        assert_eq!(report.ambiguous, 0);
        assert!(report.warnings.is_empty(), "{:?}", report.warnings);
        for p in &report.points {
            if let PointKind::Regular { normal } = p.class.kind {
                assert!(
                    normal[0] * p.x[0] > 0.0,
                    "growth should point away from the contact set"
                );
                assert!((p.class.weiss_ratio - 1.0).abs() < 0.1, "{:?}", p.class);
            } else {
                panic!("expected regular: {:?}", p.class);
            }
        }
    }

    #[test]
    fn degenerate_contact_point_classifies_singular() {
        // psi = -x^2 under f = 1 pins the membrane at the origin only:
        // u = x^2 / 2 touches psi at a single point where the excess is the
        // two-sided parabola 3x^2/2, a model singular configuration.
        let grid = Grid::new_1d(-1.0, 1.0, 129).unwrap();
        let psi = ScalarField::from_fn(grid, |p| -p[0] * p[0]);
        let f = ScalarField::from_fn(grid, |_| 1.0);
        let g = ScalarField::from_fn(grid, |_| 0.5);
        let a = MatrixField::identity(grid);
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        assert!(sol.active[grid.idx(64, 0)], "origin should be pinned");
        let lin = linearize_quadratic(&a, &f, &psi).unwrap();
        let report = stratify(&sol, &lin, &psi).unwrap();
        assert!(report.singular >= 1, "{report:?}");
        assert_eq!(report.regular, 0, "{report:?}");
        assert_eq!(report.strata[0], report.singular);
        // The extracted center sits about half a cell off the true singular
        // point, which costs the balanced energy roughly 2 (h/2r)^2.
        for p in &report.points {
            if let PointKind::Singular { .. } = p.class.kind {
                assert!((p.class.weiss_ratio - 2.0).abs() < 0.15, "{:?}", p.class);
            }
        }
    }

    #[test]
    fn stratify_circular_contact_patch() {
        // Paraboloid obstacle under a flat membrane: the contact set is a
        // disc and every free boundary point is regular with radial growth.
        let grid = Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [129, 129]).unwrap();
        let psi = ScalarField::from_fn(grid, |p| 0.35 - p[0] * p[0] - p[1] * p[1]);
        let f = ScalarField::zeros(grid);
        let g = ScalarField::zeros(grid);
        let a = MatrixField::identity(grid);
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        let lin = linearize_quadratic(&a, &f, &psi).unwrap();
        let report = stratify(&sol, &lin, &psi).unwrap();
        assert!(report.points.len() >= 20, "only {} points", report.points.len());
        assert_eq!(report.singular, 0, "{report:?}");
        assert!(
            report.regular as f64 >= 0.75 * report.points.len() as f64,
            "regular {} of {}",
            report.regular,
            report.points.len()
        );
        let mut radii = Vec::new();
        for p in &report.points {
            radii.push((p.x[0] * p.x[0] + p.x[1] * p.x[1]).sqrt());
            if let PointKind::Regular { normal } = p.class.kind {
                let rn = (p.x[0] * p.x[0] + p.x[1] * p.x[1]).sqrt();
                let dot = (normal[0] * p.x[0] + normal[1] * p.x[1]) / rn;
                assert!(dot > 0.9, "normal {normal:?} not radial at {:?}", p.x);
                assert!(
                    p.class.weiss_ratio > 0.7 && p.class.weiss_ratio < 1.4,
                    "{:?}",
                    p.class
                );
            }
        }
        // The free boundary is a circle: radii are tight around their mean.
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let spread = radii
            .iter()
            .map(|r| (r - mean).abs())
            .fold(0.0, f64::max);
        assert!(mean > 0.2 && mean < 0.5, "contact radius {mean}");
        assert!(spread < 3.0 * grid.spacing()[0], "spread {spread}");
    }
}
