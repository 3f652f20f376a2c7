//! Obstacle problem solvers.
//!
//! Both entry points compute the discrete solution of the variational
//! inequality `u >= psi`, `R(u) >= 0`, `(u - psi) R(u) = 0` with Dirichlet
//! data `g`, where `R` is the flux-form discretization of
//! `-div a(x, u, grad u) + a0(x, u, grad u)`:
//!
//! - [`solve_quadratic_vi`]: `R(u) = -div(A(x) grad u) + f(x)` with sampled
//!   symmetric positive definite `A`. Projected SOR sweeps identify the
//!   contact set, then an active-set polish (policy iteration with a banded
//!   direct solve) drives the complementarity residual to rounding level.
//!   The polish matters: the sweep stopping rule controls the error in `u`
//!   but leaves `R(u)` on non-contact nodes at roughly `tol / h^2`, which
//!   grows under refinement and would swamp the complementarity audits.
//! - [`solve_nonlinear_vi`]: `R` built from an [`EnergySpec`]. Semismooth
//!   Newton on `min(u - psi, R(u)) = 0` with a banded Jacobian solve and an
//!   Armijo line search; projected nonlinear Gauss-Seidel sweeps serve as a
//!   fallback when a step stalls.
//!
//! Fluxes are sampled at cell faces (coefficients averaged to the face, the
//! transverse gradient from the four surrounding nodes), which keeps the
//! scheme in divergence form and second order, and makes piecewise-quadratic
//! solutions with grid-aligned kinks exact, a property the oracle tests lean
//! on.

use crate::band::BandMatrix;
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::grid::{Grid, MatrixField, ScalarField};
use crate::mat2;
use crate::quadrature;

#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Absolute tolerance on the complementarity residual
    /// `max_k |min(s_k (u - psi), R(u))|`, in the units of `R` (scaled
    /// internally by `max(1, sup |f|)` on the quadratic path); `s_k` is the
    /// local stencil diagonal, which puts the gap on the residual scale.
    pub tol: f64,
    /// Sweep cap for projected SOR, Newton step cap for the nonlinear path.
    pub max_iter: usize,
    /// SOR relaxation factor, in (0, 2).
    pub omega: f64,
    /// Run the active-set polish after the sweeps (quadratic path only).
    pub polish: bool,
    /// Record the discrete energy after every sweep / Newton step.
    pub track_energy: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol: 1e-8,
            max_iter: 100_000,
            omega: 1.9,
            polish: true,
            track_energy: false,
        }
    }
}

impl SolverParams {
    /// Defaults tuned for the nonlinear path: Newton converges in a handful
    /// of steps or not at all, and the merit floor sits near 1e-7 for O(1)
    /// data.
    pub fn nonlinear() -> Self {
        SolverParams {
            tol: 1e-7,
            max_iter: 60,
            omega: 1.9,
            polish: true,
            track_energy: false,
        }
    }
}

/// Solver output. `zeta` is the discrete multiplier `R(u)` masked to the
/// active set; `pde_residual` is the unmasked `R(u)` (zero on the boundary
/// rows), so `pde_residual - zeta` is the complementarity defect field.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ScalarField,
    pub active: Vec<bool>,
    pub zeta: ScalarField,
    pub pde_residual: ScalarField,
    /// Per-node activity threshold: `0.25 h^2 |R(psi)| + floor`.
    pub eps_act: Vec<f64>,
    /// The obstacle residual h = R(psi), the forcing the multiplier tracks.
    pub h_field: ScalarField,
    pub iters: usize,
    pub converged: bool,
    pub comp_residual: f64,
    pub polish_rounds: usize,
    /// Per-sweep (max update, complementarity residual at last audit).
    pub history: Vec<(f64, f64)>,
    pub energy_trace: Option<Vec<f64>>,
}

/// Node offsets of the 9-point stencil: center, E, W, N, S, NE, NW, SE, SW.
const OFF: [(isize, isize); 9] = [
    (0, 0),
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
];

/// Assembled linear operator `M ~ -div(A grad .)` plus source, acting on
/// full-grid vectors; boundary rows are identity rows handled by the callers.
struct Stencil {
    grid: Grid,
    coef: Vec<[f64; 9]>,
    f: Vec<f64>,
}

impl Stencil {
    fn assemble(a: &MatrixField, f: &ScalarField) -> Stencil {
        let grid = a.grid;
        let [nx, ny] = grid.shape();
        let [hx, hy] = grid.spacing();
        let mut coef = vec![[0.0; 9]; nx * ny];
        let face = |i: usize, j: usize, di: usize, dj: usize| -> [[f64; 2]; 2] {
            let m = a.at(i, j);
            let n = a.at(i + di, j + dj);
            let mut out = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    out[r][c] = 0.5 * (m[r][c] + n[r][c]);
                }
            }
            out
        };
        for (i, j) in grid.interior() {
            let k = grid.idx(i, j);
            let e = face(i, j, 1, 0);
            let w = face(i - 1, j, 1, 0);
            let c = &mut coef[k];
            c[0] = (e[0][0] + w[0][0]) / (hx * hx);
            c[1] = -e[0][0] / (hx * hx);
            c[2] = -w[0][0] / (hx * hx);
            if grid.dim() == 2 {
                let n = face(i, j, 0, 1);
                let s = face(i, j - 1, 0, 1);
                let cross = 1.0 / (4.0 * hx * hy);
                c[0] += (n[1][1] + s[1][1]) / (hy * hy);
                c[1] += (-n[1][0] + s[1][0]) * cross;
                c[2] += (n[1][0] - s[1][0]) * cross;
                c[3] = -n[1][1] / (hy * hy) + (-e[0][1] + w[0][1]) * cross;
                c[4] = -s[1][1] / (hy * hy) + (e[0][1] - w[0][1]) * cross;
                c[5] = -(e[0][1] + n[1][0]) * cross;
                c[6] = (w[0][1] + n[1][0]) * cross;
                c[7] = (e[0][1] + s[1][0]) * cross;
                c[8] = -(w[0][1] + s[1][0]) * cross;
            }
        }
        Stencil {
            grid,
            coef,
            f: f.values().to_vec(),
        }
    }

    /// (M u)_k for an interior node.
    fn apply_at(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let [nx, _] = self.grid.shape();
        let k = self.grid.idx(i, j);
        let c = &self.coef[k];
        let reach = if self.grid.dim() == 2 { 9 } else { 3 };
        let mut s = 0.0;
        for (t, &(di, dj)) in OFF.iter().enumerate().take(reach) {
            let m = (k as isize + di + dj * nx as isize) as usize;
            s += c[t] * u[m];
        }
        s
    }

    /// R(u) = (M u)_k + f_k on interior nodes, 0 on boundary rows.
    fn residual(&self, u: &ScalarField) -> ScalarField {
        let mut r = ScalarField::zeros(self.grid);
        for (i, j) in self.grid.interior() {
            let v = self.apply_at(u.values(), i, j) + self.f[self.grid.idx(i, j)];
            r.set(i, j, v);
        }
        r
    }

    /// Banded system for the current active set: boundary rows pin `g`,
    /// active rows pin `psi`, the rest carry the stencil with rhs `-f`.
    /// Pinned values are substituted into the right-hand side rather than
    /// coupled through the matrix: identity rows at scale 1 next to stencil
    /// rows at scale 1/h^2 would otherwise hand back pinned values with an
    /// O(eps/h^2) error that the residual amplifies by another 1/h^2.
    fn band_system(
        &self,
        active: &[bool],
        psi: &ScalarField,
        g: &ScalarField,
    ) -> (BandMatrix, Vec<f64>) {
        let [nx, ny] = self.grid.shape();
        let n = nx * ny;
        let bw = if self.grid.dim() == 2 { nx + 1 } else { 1 };
        let mut m = BandMatrix::zeros(n, bw, bw);
        let mut rhs = vec![0.0; n];
        for (i, j) in self.grid.nodes() {
            let k = self.grid.idx(i, j);
            if self.grid.is_boundary(i, j) {
                m.set(k, k, 1.0);
                rhs[k] = g.at(i, j);
            } else if active[k] {
                m.set(k, k, 1.0);
                rhs[k] = psi.at(i, j);
            } else {
                let reach = if self.grid.dim() == 2 { 9 } else { 3 };
                rhs[k] = -self.f[k];
                for (t, &(di, dj)) in OFF.iter().enumerate().take(reach) {
                    let (ci, cj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                    let col = (k as isize + di + dj * nx as isize) as usize;
                    if self.grid.is_boundary(ci, cj) {
                        rhs[k] -= self.coef[k][t] * g.at(ci, cj);
                    } else if active[col] {
                        rhs[k] -= self.coef[k][t] * psi.at(ci, cj);
                    } else {
                        m.set(k, col, self.coef[k][t]);
                    }
                }
            }
        }
        (m, rhs)
    }
}

/// Apply the flux-form operator -div(A grad .) to a field. Interior nodes
/// only; boundary rows are zero. This is the exact operator the quadratic
/// solver iterates with, so identities checked against it close at rounding
/// level rather than at discretization level.
pub fn apply_operator(a: &MatrixField, v: &ScalarField) -> ScalarField {
    let zero = ScalarField::zeros(a.grid);
    let st = Stencil::assemble(a, &zero);
    st.residual(v)
}

fn check_inputs(grid: &Grid, psi: &ScalarField, g: &ScalarField) -> Result<()> {
    if psi.grid != *grid || g.grid != *grid {
        return Err(Error::config("grid", "fields live on different grids"));
    }
    for (i, j) in grid.nodes() {
        if grid.is_boundary(i, j) && g.at(i, j) < psi.at(i, j) - 1e-12 {
            let p = grid.node(i, j);
            return Err(Error::config(
                "boundary",
                format!(
                    "boundary datum {} below obstacle {} at ({}, {}); the constraint class is empty",
                    g.at(i, j),
                    psi.at(i, j),
                    p[0],
                    p[1]
                ),
            ));
        }
    }
    Ok(())
}

fn initial_guess(grid: &Grid, psi: &ScalarField, g: &ScalarField) -> ScalarField {
    ScalarField::from_index_fn(*grid, |i, j| {
        if grid.is_boundary(i, j) {
            g.at(i, j)
        } else {
            g.at(i, j).max(psi.at(i, j))
        }
    })
}

fn eps_active(grid: &Grid, h_field: &ScalarField, u: &ScalarField) -> Vec<f64> {
    let h2 = grid.min_spacing() * grid.min_spacing();
    let floor = 1e-12 * u.sup_norm().max(1.0);
    h_field
        .values()
        .iter()
        .map(|&h| 0.25 * h2 * h.abs() + floor)
        .collect()
}

fn comp_residual(grid: &Grid, u: &ScalarField, psi: &ScalarField, r: &ScalarField) -> f64 {
    let mut worst = 0.0f64;
    for (i, j) in grid.interior() {
        let gap = u.at(i, j) - psi.at(i, j);
        worst = worst.max(gap.min(r.at(i, j)).abs());
    }
    worst
}

/// Quadratic energy form J(u) = 1/2 u^T M u - b^T u over interior nodes with
/// the boundary block held fixed; the sweeps decrease it monotonically.
fn quadratic_energy(st: &Stencil, u: &ScalarField) -> f64 {
    let grid = st.grid;
    let mut u0 = u.clone();
    for (i, j) in grid.nodes() {
        if grid.is_boundary(i, j) {
            u0.set(i, j, 0.0);
        }
    }
    let mut j_val = 0.0;
    for (i, j) in grid.interior() {
        let k = grid.idx(i, j);
        let mu_full = st.apply_at(u.values(), i, j);
        let mu_int = st.apply_at(u0.values(), i, j);
        let uk = u.at(i, j);
        j_val += 0.5 * uk * mu_int + uk * (mu_full - mu_int) + st.f[k] * uk;
    }
    j_val
}

/// Solve the linear-coefficient obstacle problem
/// `-div(A grad u) + f >= 0`, `u >= psi`, complementarity, `u = g` on the
/// boundary. `A` must be symmetric positive definite at every node.
pub fn solve_quadratic_vi(
    a: &MatrixField,
    f: &ScalarField,
    psi: &ScalarField,
    g: &ScalarField,
    params: &SolverParams,
) -> Result<Solution> {
    let grid = a.grid;
    check_inputs(&grid, psi, g)?;
    if f.grid != grid {
        return Err(Error::config("grid", "fields live on different grids"));
    }
    if !(params.omega > 0.0 && params.omega < 2.0) {
        return Err(Error::config("solver.omega", "need 0 < omega < 2"));
    }
    for (i, j) in grid.nodes() {
        let m = a.at(i, j);
        let (lo, hi) = mat2::sym_eig(m, grid.dim());
        let asym = if grid.dim() == 2 { (m[0][1] - m[1][0]).abs() } else { 0.0 };
        if lo <= 0.0 || asym > 1e-10 * (1.0 + hi) {
            let p = grid.node(i, j);
            return Err(Error::Coercivity(format!(
                "coefficient matrix not symmetric positive definite at ({}, {}): eigenvalues {lo}, {hi}",
                p[0], p[1]
            )));
        }
    }

    let st = Stencil::assemble(a, f);
    let mut u = initial_guess(&grid, psi, g);
    let scale = f.sup_norm().max(1.0);
    let h2 = grid.min_spacing() * grid.min_spacing();
    let stop_update = params.tol * h2 * scale;
    let stop_comp = params.tol * scale;

    let mut history = Vec::new();
    let mut energy_trace = params.track_energy.then(Vec::new);
    if let Some(tr) = energy_trace.as_mut() {
        tr.push(quadratic_energy(&st, &u));
    }

    let mut iters = 0;
    let mut converged = false;
    let mut last_comp = f64::INFINITY;
    let mut last_update = f64::INFINITY;
    while iters < params.max_iter {
        iters += 1;
        let mut max_change = 0.0f64;
        for color in 0..2usize {
            for (i, j) in grid.interior() {
                if (i + j) % 2 != color {
                    continue;
                }
                let k = grid.idx(i, j);
                let diag = st.coef[k][0];
                let r = -st.f[k] - st.apply_at(u.values(), i, j);
                let trial = u.values()[k] + params.omega * r / diag;
                let new = trial.max(psi.values()[k]);
                max_change = max_change.max((new - u.values()[k]).abs());
                u.values_mut()[k] = new;
            }
        }
        last_update = max_change;
        if max_change < stop_update || iters % 32 == 0 {
            let r = st.residual(&u);
            last_comp = comp_residual(&grid, &u, psi, &r);
        }
        history.push((max_change, last_comp));
        if let Some(tr) = energy_trace.as_mut() {
            tr.push(quadratic_energy(&st, &u));
        }
        if max_change < stop_update && last_comp < stop_comp {
            converged = true;
            break;
        }
    }

    let mut h_field = st.residual(psi);
    for (i, j) in grid.nodes() {
        if grid.is_boundary(i, j) {
            h_field.set(i, j, 0.0);
        }
    }
    let eps = eps_active(&grid, &h_field, &u);
    let mut active: Vec<bool> = grid
        .nodes()
        .map(|(i, j)| {
            !grid.is_boundary(i, j) && u.at(i, j) - psi.at(i, j) <= eps[grid.idx(i, j)]
        })
        .collect();

    let mut polish_rounds = 0;
    if params.polish {
        let flip_r = 1e-12 * scale.max(h_field.sup_norm());
        let flip_u = 1e-13 * u.sup_norm().max(1.0);
        // Nodes the free boundary passes through almost exactly satisfy both
        // u = psi and R = 0 and can chatter between the sets on
        // rounding-level violations. After three full cycles such a node is
        // pinned inactive, the state with zero residual; the constraint then
        // dips below psi by at most the direct-solve rounding floor.
        let mut flip_count = vec![0u8; grid.len()];
        for _ in 0..40 {
            polish_rounds += 1;
            let (m, rhs) = st.band_system(&active, psi, g);
            let lu = m.factorize()?;
            let sol = lu.solve(&rhs);
            u = ScalarField::from_index_fn(grid, |i, j| sol[grid.idx(i, j)]);
            let r = st.residual(&u);
            let mut flips = 0;
            for (i, j) in grid.interior() {
                let k = grid.idx(i, j);
                if active[k] && r.at(i, j) < -flip_r {
                    active[k] = false;
                    flip_count[k] = flip_count[k].saturating_add(1);
                    flips += 1;
                } else if !active[k]
                    && u.at(i, j) < psi.at(i, j) - flip_u
                    && flip_count[k] < 6
                {
                    active[k] = true;
                    flip_count[k] = flip_count[k].saturating_add(1);
                    flips += 1;
                }
            }
            if flips == 0 {
                break;
            }
        }
        // Pinned values may sit a rounding error below psi after the direct
        // solve; clamp so the constraint holds exactly.
        for (i, j) in grid.interior() {
            let k = grid.idx(i, j);
            if active[k] {
                u.set(i, j, psi.at(i, j));
            }
        }
    }

    let pde_residual = st.residual(&u);
    let comp = comp_residual(&grid, &u, psi, &pde_residual);
    if params.polish {
        converged = comp < stop_comp;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters,
            last_update,
            comp,
        });
    }
    let eps = eps_active(&grid, &h_field, &u);
    let zeta = ScalarField::from_index_fn(grid, |i, j| {
        if active[grid.idx(i, j)] {
            pde_residual.at(i, j)
        } else {
            0.0
        }
    });
    Ok(Solution {
        u,
        active,
        zeta,
        pde_residual,
        eps_act: eps,
        h_field,
        iters,
        converged,
        comp_residual: comp,
        polish_rounds,
        history,
        energy_trace,
    })
}

/// Matrix-free flux-form operator for an energy integrand, plus its Jacobian
/// stencil rows built from the declared hessian and one-sided differences
/// for the z-derivatives.
struct NonlinOp<'a> {
    spec: &'a EnergySpec,
    grid: Grid,
}

struct FaceState {
    x: [f64; 2],
    z: f64,
    xi: [f64; 2],
}

impl<'a> NonlinOp<'a> {
    /// State at the face between (i, j) and its +axis neighbor.
    fn face(&self, u: &ScalarField, i: usize, j: usize, axis: usize) -> FaceState {
        let [hx, hy] = self.grid.spacing();
        let p = self.grid.node(i, j);
        if axis == 0 {
            let z = 0.5 * (u.at(i, j) + u.at(i + 1, j));
            let d = (u.at(i + 1, j) - u.at(i, j)) / hx;
            let t = if self.grid.dim() == 2 {
                (u.at(i, j + 1) + u.at(i + 1, j + 1) - u.at(i, j - 1) - u.at(i + 1, j - 1))
                    / (4.0 * hy)
            } else {
                0.0
            };
            FaceState {
                x: [p[0] + 0.5 * hx, p[1]],
                z,
                xi: [d, t],
            }
        } else {
            let z = 0.5 * (u.at(i, j) + u.at(i, j + 1));
            let d = (u.at(i, j + 1) - u.at(i, j)) / hy;
            let t = (u.at(i + 1, j) + u.at(i + 1, j + 1) - u.at(i - 1, j) - u.at(i - 1, j + 1))
                / (4.0 * hx);
            FaceState {
                x: [p[0], p[1] + 0.5 * hy],
                z,
                xi: [t, d],
            }
        }
    }

    fn center_state(&self, u: &ScalarField, i: usize, j: usize) -> ([f64; 2], f64, [f64; 2]) {
        let [hx, hy] = self.grid.spacing();
        let p = self.grid.node(i, j);
        let gx = (u.at(i + 1, j) - u.at(i - 1, j)) / (2.0 * hx);
        let gy = if self.grid.dim() == 2 {
            (u.at(i, j + 1) - u.at(i, j - 1)) / (2.0 * hy)
        } else {
            0.0
        };
        ([p[0], p[1]], u.at(i, j), [gx, gy])
    }

    fn residual_at(&self, u: &ScalarField, i: usize, j: usize) -> f64 {
        let [hx, hy] = self.grid.spacing();
        let dim = self.grid.dim();
        let fe = self.face(u, i, j, 0);
        let fw = self.face(u, i - 1, j, 0);
        let ax_e = self.spec.field(&fe.x[..dim], fe.z, &fe.xi[..dim])[0];
        let ax_w = self.spec.field(&fw.x[..dim], fw.z, &fw.xi[..dim])[0];
        let mut r = (ax_w - ax_e) / hx;
        if dim == 2 {
            let fn_ = self.face(u, i, j, 1);
            let fs = self.face(u, i, j - 1, 1);
            let ay_n = self.spec.field(&fn_.x, fn_.z, &fn_.xi)[1];
            let ay_s = self.spec.field(&fs.x, fs.z, &fs.xi)[1];
            r += (ay_s - ay_n) / hy;
        }
        let (x, z, xi) = self.center_state(u, i, j);
        r + self.spec.zero_order(&x[..dim], z, &xi[..dim])
    }

    fn residual_field(&self, u: &ScalarField) -> ScalarField {
        let mut r = ScalarField::zeros(self.grid);
        for (i, j) in self.grid.interior() {
            r.set(i, j, self.residual_at(u, i, j));
        }
        r
    }

    /// dR/du at the 9 stencil offsets of an interior node.
    fn jac_row(&self, u: &ScalarField, i: usize, j: usize) -> [f64; 9] {
        let [hx, hy] = self.grid.spacing();
        let dim = self.grid.dim();
        let mut row = [0.0; 9];
        // Index into OFF by (di, dj).
        let slot = |di: isize, dj: isize| OFF.iter().position(|&o| o == (di, dj)).unwrap();

        let mut face_term = |fi: usize, fj: usize, axis: usize, sign: f64, base: (isize, isize)| {
            // `base` is the offset of the lower face endpoint from (i, j);
            // `sign` is the +-1/h weight of this flux in the divergence.
            let fs = self.face(u, fi, fj, axis);
            let h = self.spec.hessian(&fs.x[..dim], fs.z, &fs.xi[..dim]);
            let dz = 1e-6 * (1.0 + fs.z.abs());
            let a1 = self.spec.field(&fs.x[..dim], fs.z, &fs.xi[..dim])[axis];
            let a1_z =
                (self.spec.field(&fs.x[..dim], fs.z + dz, &fs.xi[..dim])[axis] - a1) / dz;
            let (hd, ht) = if axis == 0 {
                (h[0][0], h[0][1])
            } else {
                (h[1][1], h[1][0])
            };
            let haxis = if axis == 0 { hx } else { hy };
            let htrans = if axis == 0 { hy } else { hx };
            let (dlo, dhi) = if axis == 0 {
                ((base.0, base.1), (base.0 + 1, base.1))
            } else {
                ((base.0, base.1), (base.0, base.1 + 1))
            };
            row[slot(dlo.0, dlo.1)] += sign * (0.5 * a1_z - hd / haxis);
            row[slot(dhi.0, dhi.1)] += sign * (0.5 * a1_z + hd / haxis);
            if dim == 2 {
                let c = ht / (4.0 * htrans);
                if axis == 0 {
                    row[slot(dlo.0, dlo.1 + 1)] += sign * c;
                    row[slot(dhi.0, dhi.1 + 1)] += sign * c;
                    row[slot(dlo.0, dlo.1 - 1)] -= sign * c;
                    row[slot(dhi.0, dhi.1 - 1)] -= sign * c;
                } else {
                    row[slot(dlo.0 + 1, dlo.1)] += sign * c;
                    row[slot(dhi.0 + 1, dhi.1)] += sign * c;
                    row[slot(dlo.0 - 1, dlo.1)] -= sign * c;
                    row[slot(dhi.0 - 1, dhi.1)] -= sign * c;
                }
            }
        };

        face_term(i, j, 0, -1.0 / hx, (0, 0));
        face_term(i - 1, j, 0, 1.0 / hx, (-1, 0));
        if dim == 2 {
            face_term(i, j, 1, -1.0 / hy, (0, 0));
            face_term(i, j - 1, 1, 1.0 / hy, (0, -1));
        }

        let (x, z, xi) = self.center_state(u, i, j);
        let a0 = self.spec.zero_order(&x[..dim], z, &xi[..dim]);
        let dz = 1e-6 * (1.0 + z.abs());
        row[0] += (self.spec.zero_order(&x[..dim], z + dz, &xi[..dim]) - a0) / dz;
        for ax in 0..dim {
            let dxi = 1e-6 * (1.0 + xi[ax].abs());
            let mut xp = xi;
            xp[ax] += dxi;
            let d = (self.spec.zero_order(&x[..dim], z, &xp[..dim]) - a0) / dxi;
            let hq = if ax == 0 { hx } else { hy };
            let (pos, neg) = if ax == 0 { (1, 2) } else { (3, 4) };
            row[pos] += d / (2.0 * hq);
            row[neg] -= d / (2.0 * hq);
        }
        row
    }

    /// Cell-midpoint quadrature of the energy integrand.
    fn energy(&self, u: &ScalarField) -> f64 {
        let [nx, ny] = self.grid.shape();
        let [hx, hy] = self.grid.spacing();
        let dim = self.grid.dim();
        let mut total = 0.0;
        if dim == 1 {
            for i in 0..nx - 1 {
                let p = self.grid.node(i, 0);
                let x = [p[0] + 0.5 * hx];
                let z = 0.5 * (u.at(i, 0) + u.at(i + 1, 0));
                let xi = [(u.at(i + 1, 0) - u.at(i, 0)) / hx];
                total += hx * self.spec.density(&x, z, &xi);
            }
        } else {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let p = self.grid.node(i, j);
                    let x = [p[0] + 0.5 * hx, p[1] + 0.5 * hy];
                    let z = 0.25
                        * (u.at(i, j) + u.at(i + 1, j) + u.at(i, j + 1) + u.at(i + 1, j + 1));
                    let xi = [
                        (u.at(i + 1, j) + u.at(i + 1, j + 1) - u.at(i, j) - u.at(i, j + 1))
                            / (2.0 * hx),
                        (u.at(i, j + 1) + u.at(i + 1, j + 1) - u.at(i, j) - u.at(i + 1, j))
                            / (2.0 * hy),
                    ];
                    total += hx * hy * self.spec.density(&x, z, &xi);
                }
            }
        }
        total
    }

    /// Largest face gradient magnitude, for the local-coercivity check.
    fn max_face_gradient(&self, u: &ScalarField) -> f64 {
        let mut worst = 0.0f64;
        let mut faces: Vec<(usize, usize, usize)> = Vec::with_capacity(4);
        for (i, j) in self.grid.interior() {
            faces.clear();
            faces.push((i, j, 0));
            faces.push((i - 1, j, 0));
            if self.grid.dim() == 2 {
                faces.push((i, j, 1));
                faces.push((i, j - 1, 1));
            }
            for &(fi, fj, ax) in &faces {
                let fs = self.face(u, fi, fj, ax);
                worst = worst.max((fs.xi[0] * fs.xi[0] + fs.xi[1] * fs.xi[1]).sqrt());
            }
        }
        worst
    }
}

/// Stencil diagonal at the node's current state: the natural conversion
/// factor between obstacle-gap units and residual units. The complementarity
/// branch must compare the two on a common scale, otherwise any problem whose
/// solution height is comparable to its residual (small charts, shallow
/// obstacles) gets lifted nodes pinned en masse and Newton steps punch kinks
/// into the iterate.
fn diag_scale(op: &NonlinOp, u: &ScalarField, i: usize, j: usize) -> f64 {
    let [hx, hy] = op.grid.spacing();
    let dim = op.grid.dim();
    let (x, z, xi) = op.center_state(u, i, j);
    let h = op.spec.hessian(&x[..dim], z, &xi[..dim]);
    let mut s = 2.0 * h[0][0] / (hx * hx);
    if dim == 2 {
        s += 2.0 * h[1][1] / (hy * hy);
    }
    s.max(1e-300)
}

/// Interior semismooth residual G(u) = min(s (u - psi), R(u)) with s the
/// local stencil diagonal, flattened.
fn semismooth_g(op: &NonlinOp, u: &ScalarField, psi: &ScalarField) -> (Vec<f64>, f64) {
    let grid = op.grid;
    let [nx, ny] = grid.shape();
    let mut g = vec![0.0; nx * ny];
    let mut sup = 0.0f64;
    for (i, j) in grid.interior() {
        let k = grid.idx(i, j);
        let gap = u.at(i, j) - psi.at(i, j);
        let r = op.residual_at(u, i, j);
        let s = diag_scale(op, u, i, j);
        g[k] = (s * gap).min(r);
        sup = sup.max(g[k].abs());
    }
    (g, sup)
}

fn merit(g: &[f64]) -> f64 {
    0.5 * g.iter().map(|v| v * v).sum::<f64>()
}

/// Solve the obstacle problem for a nonlinear energy via semismooth Newton.
///
/// The final iterate must keep its face gradients inside `coercive_box` when
/// the energy is only locally coercive, otherwise the computed minimizer left
/// the regime where the declared convexity constants mean anything and the
/// solve reports a coercivity error.
pub fn solve_nonlinear_vi(
    spec: &EnergySpec,
    psi: &ScalarField,
    g: &ScalarField,
    params: &SolverParams,
) -> Result<Solution> {
    let grid = psi.grid;
    if spec.dim() != grid.dim() {
        return Err(Error::config(
            "problem",
            format!(
                "energy dimension {} does not match grid dimension {}",
                spec.dim(),
                grid.dim()
            ),
        ));
    }
    check_inputs(&grid, psi, g)?;
    let op = NonlinOp { spec, grid };
    let [nx, ny] = grid.shape();
    let n = nx * ny;
    let bw = if grid.dim() == 2 { nx + 1 } else { 1 };
    let dim = grid.dim();

    let mut h_field = op.residual_field(psi);
    for (i, j) in grid.nodes() {
        if grid.is_boundary(i, j) {
            h_field.set(i, j, 0.0);
        }
    }

    // Warm start: the quadratic model in the excess w = u - psi (obstacle
    // 0, source R(psi), coefficients the averaged xi-hessian between grad
    // psi and the current guess). Its contact set must predict the
    // nonlinear one to within a node or two, because each Newton update can
    // only release nodes at the rim of a wrongly pinned region: a frozen
    // coefficient misplaces the contact edge by a fixed physical width and
    // the active set then crawls inward one node per step, costing O(n)
    // iterations. A few Picard passes, re-averaging the hessian along the
    // previous pass's gradient, pin the prediction down.
    let mut u = initial_guess(&grid, psi, g);
    {
        let rule = quadrature::gauss_legendre(4)?;
        let zero = ScalarField::zeros(grid);
        let g_warm = ScalarField::from_index_fn(grid, |i, j| g.at(i, j) - psi.at(i, j));
        let warm = SolverParams {
            tol: params.tol.max(1e-8),
            track_energy: false,
            polish: true,
            ..SolverParams::default()
        };
        let grad_psi = crate::grid::gradient(psi);
        let mut grad_u = grad_psi.clone();
        let mut prev_active: Option<Vec<bool>> = None;
        let mut final_pass = false;
        for pass in 0..12 {
            let mut a_warm = MatrixField::identity(grid);
            for (i, j) in grid.nodes() {
                let p = grid.node(i, j);
                let gp = grad_psi.at(i, j);
                let gu = grad_u.at(i, j);
                let mut acc = [[0.0f64; 2]; 2];
                for &(t, wq) in &rule {
                    let xi = [gp[0] + t * (gu[0] - gp[0]), gp[1] + t * (gu[1] - gp[1])];
                    let h = spec.hessian(&p[..dim], u.at(i, j), &xi[..dim]);
                    for r in 0..2 {
                        for c in 0..2 {
                            acc[r][c] += wq * h[r][c];
                        }
                    }
                }
                let off = 0.5 * (acc[0][1] + acc[1][0]);
                if dim == 1 {
                    a_warm.set(i, j, [[acc[0][0], 0.0], [0.0, 1.0]]);
                } else {
                    a_warm.set(i, j, [[acc[0][0], off], [off, acc[1][1]]]);
                }
            }
            match solve_quadratic_vi(&a_warm, &h_field, &zero, &g_warm, &warm) {
                Ok(wsol) => {
                    // The plain iteration overshoots the contact edge with
                    // alternating sign. Damping the iterate itself would cure
                    // that but leave the final u an average of two model
                    // solutions, which carries a smooth residual deficit; the
                    // Newton branch rule then pins every barely lifted node
                    // near the edge and the line search collapses. Instead
                    // damp only the hessian evaluation path and keep u an
                    // exact solution of its model. Once the contact set
                    // repeats, one closing pass evaluates the hessian along
                    // the iterate's own gradient, so the handed-off u solves
                    // a model consistent with its own path and its residual
                    // at free nodes sits at the stencil mismatch level.
                    u = ScalarField::from_index_fn(grid, |i, j| psi.at(i, j) + wsol.u.at(i, j));
                    if final_pass {
                        break;
                    }
                    let gu = crate::grid::gradient(&u);
                    let stable = prev_active.as_deref() == Some(&wsol.active[..]);
                    prev_active = Some(wsol.active);
                    if pass == 0 {
                        grad_u = gu;
                    } else if stable {
                        grad_u = gu;
                        final_pass = true;
                    } else {
                        for (i, j) in grid.nodes() {
                            let a = grad_u.at(i, j);
                            let b = gu.at(i, j);
                            grad_u.set(i, j, [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                        }
                    }
                }
                Err(_) => break,
            }
        }
    }
    let mut energy_trace = params.track_energy.then(Vec::new);
    if let Some(tr) = energy_trace.as_mut() {
        tr.push(op.energy(&u));
    }
    let mut history = Vec::new();

    // Alternating sweep directions matter: a release signal travels along
    // the sweep order, so a forward/backward pair unwinds an over-pinned
    // band from both rims in one call instead of one node per call.
    let interior: Vec<(usize, usize)> = grid.interior().collect();
    let npgs_sweeps = |u: &mut ScalarField, count: usize| {
        let mut relax = |i: usize, j: usize| {
            let r = op.residual_at(u, i, j);
            let diag = op.jac_row(u, i, j)[0];
            if diag.abs() < 1e-300 {
                return;
            }
            let k = grid.idx(i, j);
            let trial = u.values()[k] - r / diag;
            u.values_mut()[k] = trial.max(psi.values()[k]);
        };
        for sweep in 0..count {
            if sweep % 2 == 0 {
                for &(i, j) in &interior {
                    relax(i, j);
                }
            } else {
                for &(i, j) in interior.iter().rev() {
                    relax(i, j);
                }
            }
        }
    };

    let mut iters = 0;
    let mut converged = false;
    let mut sup = semismooth_g(&op, &u, psi).1;
    while iters < params.max_iter {
        if sup < params.tol {
            converged = true;
            break;
        }
        iters += 1;
        // A cheap forward/backward relaxation pair first: the semismooth
        // step can only release wrongly pinned nodes at the rim of the
        // pinned region, one layer per solve, while Gauss-Seidel releases
        // runs of them along the sweep direction.
        npgs_sweeps(&mut u, 2);
        let (gvec, s) = semismooth_g(&op, &u, psi);
        sup = s;
        if sup < params.tol {
            converged = true;
            break;
        }
        // Assemble the Newton matrix for the current branch choice.
        let mut m = BandMatrix::zeros(n, bw, bw);
        for (i, j) in grid.nodes() {
            let k = grid.idx(i, j);
            if grid.is_boundary(i, j) {
                m.set(k, k, 1.0);
                continue;
            }
            let gap = u.at(i, j) - psi.at(i, j);
            let r = op.residual_at(&u, i, j);
            let s = diag_scale(&op, &u, i, j);
            if s * gap <= r {
                // Pin row: G_k = s (u_k - psi_k), so the Newton step is
                // exactly -gap and the row sits on the same scale as the
                // divergence rows around it.
                m.set(k, k, s);
            } else {
                let row = op.jac_row(&u, i, j);
                let reach = if grid.dim() == 2 { 9 } else { 3 };
                for (t, &(di, dj)) in OFF.iter().enumerate().take(reach) {
                    let col = (k as isize + di + dj * nx as isize) as usize;
                    m.set(k, col, row[t]);
                }
            }
        }
        let rhs: Vec<f64> = gvec.iter().map(|v| -v).collect();
        let step = match m.factorize() {
            Ok(lu) => lu.solve(&rhs),
            Err(_) => {
                npgs_sweeps(&mut u, 20);
                sup = semismooth_g(&op, &u, psi).1;
                history.push((f64::NAN, sup));
                continue;
            }
        };
        let m0 = merit(&gvec);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial =
                ScalarField::from_index_fn(grid, |i, j| u.at(i, j) + t * step[grid.idx(i, j)]);
            let (gv, s) = semismooth_g(&op, &trial, psi);
            if merit(&gv) <= (1.0 - 1e-4 * t) * m0 {
                u = trial;
                sup = s;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // The Newton direction stopped paying off; relax with projected
            // nonlinear Gauss-Seidel and try again from the smoothed iterate.
            npgs_sweeps(&mut u, 30);
            sup = semismooth_g(&op, &u, psi).1;
        }
        history.push((sup, sup));
        if let Some(tr) = energy_trace.as_mut() {
            tr.push(op.energy(&u));
        }
    }
    if sup < params.tol {
        converged = true;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters,
            last_update: sup,
            comp: sup,
        });
    }

    if spec.locally_coercive {
        if let Some(r) = spec.coercive_box {
            let worst = op.max_face_gradient(&u);
            if worst > r {
                return Err(Error::Coercivity(format!(
                    "solution gradient {worst:.6} leaves the certified convexity ball of radius {r:.6}"
                )));
            }
        }
    }

    let pde_residual = op.residual_field(&u);
    let eps = eps_active(&grid, &h_field, &u);
    let active: Vec<bool> = grid
        .nodes()
        .map(|(i, j)| {
            !grid.is_boundary(i, j) && u.at(i, j) - psi.at(i, j) <= eps[grid.idx(i, j)]
        })
        .collect();
    let zeta = ScalarField::from_index_fn(grid, |i, j| {
        if active[grid.idx(i, j)] {
            pde_residual.at(i, j)
        } else {
            0.0
        }
    });
    let comp = comp_residual(&grid, &u, psi, &pde_residual);
    Ok(Solution {
        u,
        active,
        zeta,
        pde_residual,
        eps_act: eps,
        h_field,
        iters,
        converged,
        comp_residual: comp,
        polish_rounds: 0,
        history,
        energy_trace,
    })
}

/// Complementarity statistics of a computed solution. "Deep" active nodes
/// have every node within the collar radius (Chebyshev distance, default 2)
/// active as well, so the multiplier there must equal the obstacle residual
/// h = R(psi) exactly at the discrete level.
#[derive(Debug, Clone)]
pub struct ComplementarityAudit {
    pub min_gap: f64,
    pub min_zeta_active: f64,
    pub max_abs_residual_inactive: f64,
    pub max_product: f64,
    pub deep_active_mismatch: f64,
    pub active_nodes: usize,
    pub deep_active_nodes: usize,
}

pub fn complementarity_audit(
    sol: &Solution,
    psi: &ScalarField,
    collar: usize,
) -> ComplementarityAudit {
    let grid = sol.u.grid;
    let [nx, ny] = grid.shape();
    let is_active = |i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            return false;
        }
        sol.active[grid.idx(i as usize, j as usize)]
    };
    let mut audit = ComplementarityAudit {
        min_gap: f64::INFINITY,
        min_zeta_active: f64::INFINITY,
        max_abs_residual_inactive: 0.0,
        max_product: 0.0,
        deep_active_mismatch: 0.0,
        active_nodes: 0,
        deep_active_nodes: 0,
    };
    let c = collar as isize;
    // In 1D the collar scan runs along the single axis only.
    let cj = if grid.dim() == 2 { c } else { 0 };
    for (i, j) in grid.interior() {
        let k = grid.idx(i, j);
        let gap = sol.u.at(i, j) - psi.at(i, j);
        audit.min_gap = audit.min_gap.min(gap);
        let r = sol.pde_residual.at(i, j);
        if sol.active[k] {
            audit.active_nodes += 1;
            audit.min_zeta_active = audit.min_zeta_active.min(sol.zeta.at(i, j));
            audit.max_product = audit.max_product.max((sol.zeta.at(i, j) * gap).abs());
            let mut deep = true;
            'scan: for dj in -cj..=cj {
                for di in -c..=c {
                    if !is_active(i as isize + di, j as isize + dj) {
                        deep = false;
                        break 'scan;
                    }
                }
            }
            if deep && grid.cells_to_boundary(i, j) > collar {
                audit.deep_active_nodes += 1;
                let h = sol.h_field.at(i, j).max(0.0);
                audit.deep_active_mismatch =
                    audit.deep_active_mismatch.max((sol.zeta.at(i, j) - h).abs());
            }
        } else {
            audit.max_abs_residual_inactive = audit.max_abs_residual_inactive.max(r.abs());
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy;

    /// 1D: -u'' + 1 >= 0 over psi = 0 with g = 1/8 on {-1, 1}.
    /// The minimizer ((|x| - 1/2)_+)^2 / 2 is piecewise quadratic with kinks
    /// at +-1/2; on grids containing those points it is the exact discrete
    /// solution. The datum field is constant, so its interior values (the
    /// initial guess) are far from the answer.
    fn taut_parabola_1d(n: usize) -> (Grid, ScalarField, ScalarField, ScalarField) {
        let grid = Grid::new_1d(-1.0, 1.0, n).unwrap();
        let psi = ScalarField::zeros(grid);
        let f = ScalarField::from_fn(grid, |_| 1.0);
        let g = ScalarField::from_fn(grid, |_| 0.125);
        (grid, psi, f, g)
    }

    fn exact_1d(x: f64) -> f64 {
        let t = (x.abs() - 0.5).max(0.0);
        0.5 * t * t
    }

    #[test]
    fn quadratic_1d_exact_on_aligned_grid() {
        let (grid, psi, f, g) = taut_parabola_1d(129);
        let a = MatrixField::identity(grid);
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        assert!(sol.converged);
        let mut worst = 0.0f64;
        for (i, j) in grid.nodes() {
            worst = worst.max((sol.u.at(i, j) - exact_1d(grid.node(i, j)[0])).abs());
        }
        assert!(worst < 1e-10, "sup error {worst}");
        // Free boundary nodes +-1/2 are active, first nodes beyond are not.
        let at = |x: f64| {
            let i = ((x + 1.0) / grid.spacing()[0]).round() as usize;
            sol.active[grid.idx(i, 0)]
        };
        assert!(at(0.0) && at(0.5) && at(-0.5));
        assert!(!at(0.5 + grid.spacing()[0]) && !at(-0.5 - grid.spacing()[0]));
    }

    #[test]
    fn polish_pins_complementarity_to_rounding_level() {
        let (_, psi, f, g) = taut_parabola_1d(257);
        let a = MatrixField::identity(psi.grid);
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        let audit = complementarity_audit(&sol, &psi, 2);
        assert!(audit.min_gap >= 0.0);
        assert!(audit.min_zeta_active > 0.4, "min zeta {}", audit.min_zeta_active);
        assert!(
            audit.max_abs_residual_inactive < 1e-11,
            "inactive residual {}",
            audit.max_abs_residual_inactive
        );
        // Deep in the contact set -u'' + 1 applied to psi = 0 is exactly 1.
        assert!(audit.deep_active_nodes > 50);
        assert!(
            audit.deep_active_mismatch < 1e-12,
            "zeta vs h mismatch {}",
            audit.deep_active_mismatch
        );
        assert!(audit.max_product < 1e-14);
    }

    #[test]
    fn without_polish_inactive_residual_is_much_larger() {
        let (_, psi, f, g) = taut_parabola_1d(257);
        let a = MatrixField::identity(psi.grid);
        let mut params = SolverParams::default();
        params.polish = false;
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &params).unwrap();
        let audit = complementarity_audit(&sol, &psi, 2);
        let polished = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        let paudit = complementarity_audit(&polished, &psi, 2);
        assert!(
            audit.max_abs_residual_inactive > 10.0 * paudit.max_abs_residual_inactive,
            "{} vs {}",
            audit.max_abs_residual_inactive,
            paudit.max_abs_residual_inactive
        );
    }

    #[test]
    fn sweeps_decrease_the_energy_monotonically() {
        let (grid, psi, f, g) = taut_parabola_1d(65);
        let a = MatrixField::identity(grid);
        for omega in [0.8, 1.5, 1.9] {
            let params = SolverParams {
                omega,
                track_energy: true,
                polish: false,
                tol: 1e-6,
                ..SolverParams::default()
            };
            let sol = solve_quadratic_vi(&a, &f, &psi, &g, &params).unwrap();
            let tr = sol.energy_trace.unwrap();
            for w in tr.windows(2) {
                assert!(w[1] <= w[0] + 1e-13, "energy rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn half_space_solution_is_exact_in_2d() {
        // -lap u + 1 over psi = 0 with boundary (x1_+)^2 / 2: the half-space
        // profile is the exact discrete solution on grids aligned with x1=0.
        let grid = Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [65, 65]).unwrap();
        let a = MatrixField::identity(grid);
        let psi = ScalarField::zeros(grid);
        let f = ScalarField::from_fn(grid, |_| 1.0);
        // Boundary values of the half-space profile; the interior bump only
        // perturbs the initial guess, it vanishes on the boundary.
        let g = ScalarField::from_fn(grid, |p| {
            0.5 * p[0].max(0.0) * p[0].max(0.0)
                + 0.3 * (1.0 - p[0] * p[0]) * (1.0 - p[1] * p[1])
        });
        let sol = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default()).unwrap();
        let mut worst = 0.0f64;
        for (i, j) in grid.nodes() {
            let x = grid.node(i, j)[0];
            worst = worst.max((sol.u.at(i, j) - 0.5 * x.max(0.0) * x.max(0.0)).abs());
        }
        assert!(worst < 1e-9, "sup error {worst}");
        let audit = complementarity_audit(&sol, &psi, 2);
        assert!(audit.deep_active_mismatch < 1e-12);
        // Residuals carry the 1/h^2 row scale, so their rounding floor is
        // eps * ||M|| * ||u|| ~ 1e-10 here, not 1e-15.
        assert!(audit.max_abs_residual_inactive < 1e-8);
    }

    #[test]
    fn newton_matches_sweeps_for_the_p_two_energy() {
        // F = (1 + |xi|^2) has field 2 xi, so the nonlinear path solves the
        // same obstacle problem as A = I, f = 0 up to a factor 2 in the
        // multiplier; the primal solutions agree to solver accuracy.
        let grid = Grid::new_1d(-1.0, 1.0, 201).unwrap();
        let psi = ScalarField::from_fn(grid, |p| 0.25 - p[0] * p[0]);
        let g = ScalarField::zeros(grid);
        let spec = energy::p_energy(1, 2.0).unwrap();
        let newton = solve_nonlinear_vi(&spec, &psi, &g, &SolverParams::nonlinear()).unwrap();
        let a = MatrixField::identity(grid);
        let zero = ScalarField::zeros(grid);
        let psor = solve_quadratic_vi(&a, &zero, &psi, &g, &SolverParams::default()).unwrap();
        let mut worst = 0.0f64;
        for (i, j) in grid.nodes() {
            worst = worst.max((newton.u.at(i, j) - psor.u.at(i, j)).abs());
        }
        assert!(worst < 1e-8, "paths disagree by {worst}");
        assert!(newton.iters < 30, "newton took {} steps", newton.iters);
    }

    #[test]
    fn minimal_surface_over_parabolic_obstacle() {
        // Graph of least length over psi = 1/2 - x^2, zero boundary data on
        // (-1, 1). Off the contact set the minimizer is affine; tangency at
        // +-c with c^2 - 2c + 1/2 = 0 gives c = 1 - sqrt(2)/2 and the exact
        // profile is the tangent line from (1, 0).
        let c = 1.0 - 0.5f64.sqrt();
        let grid = Grid::new_1d(-1.0, 1.0, 257).unwrap();
        let psi = ScalarField::from_fn(grid, |p| 0.5 - p[0] * p[0]);
        let g = ScalarField::zeros(grid);
        let spec = energy::area(1).unwrap();
        let sol = solve_nonlinear_vi(&spec, &psi, &g, &SolverParams::nonlinear()).unwrap();
        let exact = |x: f64| {
            let ax = x.abs();
            if ax <= c {
                0.5 - x * x
            } else {
                (0.5 - c * c) - 2.0 * c * (ax - c)
            }
        };
        let mut worst = 0.0f64;
        for (i, j) in grid.nodes() {
            worst = worst.max((sol.u.at(i, j) - exact(grid.node(i, j)[0])).abs());
        }
        assert!(worst < 5e-4, "sup error {worst}");
        assert!(sol.comp_residual < 1e-7);
        // Contact interval endpoints land within 2h of +-c.
        let h = grid.spacing()[0];
        let mut left = f64::INFINITY;
        let mut right = f64::NEG_INFINITY;
        for (i, j) in grid.interior() {
            if sol.active[grid.idx(i, j)] {
                let x = grid.node(i, j)[0];
                left = left.min(x);
                right = right.max(x);
            }
        }
        assert!((right - c).abs() <= 2.0 * h, "right contact end {right} vs {c}");
        assert!((left + c).abs() <= 2.0 * h, "left contact end {left} vs {c}");
    }

    #[test]
    fn incompatible_boundary_data_is_a_config_error() {
        let grid = Grid::new_1d(0.0, 1.0, 17).unwrap();
        let psi = ScalarField::from_fn(grid, |_| 1.0);
        let g = ScalarField::zeros(grid);
        let f = ScalarField::zeros(grid);
        let a = MatrixField::identity(grid);
        let err = solve_quadratic_vi(&a, &f, &psi, &g, &SolverParams::default());
        assert!(matches!(err, Err(Error::Config { .. })));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let (grid, psi, f, g) = taut_parabola_1d(129);
        let a = MatrixField::identity(grid);
        let params = SolverParams {
            max_iter: 3,
            polish: false,
            ..SolverParams::default()
        };
        let err = solve_quadratic_vi(&a, &f, &psi, &g, &params);
        assert!(matches!(err, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn indefinite_coefficient_matrix_is_rejected() {
        let grid = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [9, 9]).unwrap();
        let a = MatrixField::constant(grid, [[1.0, 0.0], [0.0, -1.0]]);
        let z = ScalarField::zeros(grid);
        let err = solve_quadratic_vi(&a, &z, &z, &z, &SolverParams::default());
        assert!(matches!(err, Err(Error::Coercivity(_))));
    }
}
