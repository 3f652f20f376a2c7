//! Reduction of the nonlinear obstacle problem to a quadratic one, and
//! numerical checks of the structural facts that reduction rests on.
//!
//! Writing w = u - psi, the segment average
//!
//! ```text
//! A(x) = integral_0^1  grad^2_xi F(x, u(x), grad psi(x) + t grad w(x)) dt
//! ```
//!
//! turns the flux difference into a linear one,
//! `a(x, u, grad u) - a(x, u, grad psi) = A(x) grad w`, so the excess w
//! solves the zero-obstacle quadratic problem
//!
//! ```text
//! w >= 0,   -div(A grad w) + h >= 0,   w (-div(A grad w) + h) = 0,
//! h(x) = -div a(x, u, grad psi) + a0(x, u, grad u).
//! ```
//!
//! The source h is simultaneously the obstacle residual of that problem
//! (apply the operator to w = 0), which is why the multiplier equals h^+
//! deep inside the contact set.
//!
//! [`linearize`] builds (A, h) from an energy and a computed solution;
//! [`linearize_quadratic`] is the already-linear case, where A passes through
//! untouched and h is the flux-form residual of the obstacle, so the identity
//! checked by [`verify_pde2`] closes at rounding level rather than at
//! discretization level. [`verify_h4_h5`] estimates the nondegeneracy
//! constant (a positive lower bound for h near the contact set) and a Holder
//! modulus for h from dyadic difference quotients.

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::grid::{gradient, MatrixField, ScalarField};
use crate::mat2;
use crate::quadrature;
use crate::solver::{apply_operator, Solution};

/// The zero-obstacle quadratic problem satisfied by the excess w = u - psi.
#[derive(Debug, Clone)]
pub struct LinearizedProblem {
    /// Averaged xi-hessian; symmetric positive definite node by node.
    pub a: MatrixField,
    /// Source term of the w-problem; equals its obstacle residual.
    pub h: ScalarField,
    /// Two-sided ellipticity constant: 1/lambda_k <= eig(a) <= lambda_k.
    pub lambda_k: f64,
}

fn ellipticity(a: &MatrixField, dim: usize) -> Result<f64> {
    let grid = a.grid;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (i, j) in grid.nodes() {
        let (emin, emax) = mat2::sym_eig(a.at(i, j), dim);
        lo = lo.min(emin);
        hi = hi.max(emax);
    }
    if lo <= 0.0 {
        return Err(Error::Coercivity(format!(
            "linearized coefficients lose ellipticity: smallest eigenvalue {lo}"
        )));
    }
    Ok(hi.max(1.0 / lo))
}

/// Linearize an energy around a computed solution. `m` is the number of
/// Gauss-Legendre nodes for the segment average (6 is ample for the smooth
/// integrands met here; the result is stable in `m` to far below solver
/// accuracy).
pub fn linearize(
    u: &ScalarField,
    psi: &ScalarField,
    spec: &EnergySpec,
    m: usize,
) -> Result<LinearizedProblem> {
    let grid = u.grid;
    if psi.grid != grid {
        return Err(Error::config("grid", "fields live on different grids"));
    }
    if spec.dim() != grid.dim() {
        return Err(Error::config(
            "problem",
            "energy dimension does not match grid dimension",
        ));
    }
    let dim = grid.dim();
    let rule = quadrature::gauss_legendre(m)?;
    let gu = gradient(u);
    let gpsi = gradient(psi);

    let mut a = MatrixField::identity(grid);
    for (i, j) in grid.nodes() {
        let p = grid.node(i, j);
        let z = u.at(i, j);
        let xi0 = gpsi.at(i, j);
        let xi1 = gu.at(i, j);
        let mut acc = [[0.0; 2]; 2];
        for &(t, wq) in &rule {
            let xi = [
                xi0[0] + t * (xi1[0] - xi0[0]),
                xi0[1] + t * (xi1[1] - xi0[1]),
            ];
            let h = spec.hessian(&p[..dim], z, &xi[..dim]);
            for r in 0..2 {
                for c in 0..2 {
                    acc[r][c] += wq * h[r][c];
                }
            }
        }
        let off = 0.5 * (acc[0][1] + acc[1][0]);
        if dim == 1 {
            a.set(i, j, [[acc[0][0], 0.0], [0.0, 1.0]]);
        } else {
            a.set(i, j, [[acc[0][0], off], [off, acc[1][1]]]);
        }
    }
    let lambda_k = ellipticity(&a, dim)?;

    // h = -div a(x, u, grad psi) + a0(x, u, grad u), via the node-wise
    // second-order divergence; zero on boundary rows to match the solver's
    // residual convention.
    let a_at_psi = crate::grid::VectorField::from_fn(grid, |_| [0.0, 0.0]);
    let mut a_at_psi = a_at_psi;
    for (i, j) in grid.nodes() {
        let p = grid.node(i, j);
        let xi0 = gpsi.at(i, j);
        let v = spec.field(&p[..dim], u.at(i, j), &xi0[..dim]);
        a_at_psi.set(i, j, v);
    }
    let div = crate::grid::divergence(&a_at_psi);
    let h = ScalarField::from_index_fn(grid, |i, j| {
        if grid.is_boundary(i, j) {
            return 0.0;
        }
        let p = grid.node(i, j);
        let xi1 = gu.at(i, j);
        -div.at(i, j) + spec.zero_order(&p[..dim], u.at(i, j), &xi1[..dim])
    });

    Ok(LinearizedProblem { a, h, lambda_k })
}

/// The already-quadratic case: coefficients pass through and the source of
/// the w-problem is the flux-form obstacle residual -div(A grad psi) + f,
/// evaluated with the solver's own stencil.
pub fn linearize_quadratic(
    a: &MatrixField,
    f: &ScalarField,
    psi: &ScalarField,
) -> Result<LinearizedProblem> {
    let grid = a.grid;
    if psi.grid != grid || f.grid != grid {
        return Err(Error::config("grid", "fields live on different grids"));
    }
    let lambda_k = ellipticity(a, grid.dim())?;
    let mpsi = apply_operator(a, psi);
    let h = ScalarField::from_index_fn(grid, |i, j| {
        if grid.is_boundary(i, j) {
            0.0
        } else {
            mpsi.at(i, j) + f.at(i, j)
        }
    });
    Ok(LinearizedProblem {
        a: a.clone(),
        h,
        lambda_k,
    })
}

/// Defect of the linearized complementarity identity
/// `-div(A grad w) + h = zeta` against the solver's residual field.
#[derive(Debug, Clone)]
pub struct Pde2Report {
    pub sup_defect: f64,
    pub l2_defect: f64,
    /// Sup over nodes at least two cells from both the domain boundary and
    /// the free boundary, where no kink pollutes the stencils.
    pub sup_defect_clear: f64,
}

pub fn verify_pde2(lin: &LinearizedProblem, sol: &Solution, psi: &ScalarField) -> Pde2Report {
    let grid = sol.u.grid;
    let w = ScalarField::from_index_fn(grid, |i, j| sol.u.at(i, j) - psi.at(i, j));
    let aw = apply_operator(&lin.a, &w);
    let mut defect = ScalarField::zeros(grid);
    for (i, j) in grid.interior() {
        defect.set(
            i,
            j,
            aw.at(i, j) + lin.h.at(i, j) - sol.pde_residual.at(i, j),
        );
    }
    let [nx, ny] = grid.shape();
    let near_fb = |i: usize, j: usize| -> bool {
        let me = sol.active[grid.idx(i, j)];
        let c = 2isize;
        let cj = if grid.dim() == 2 { c } else { 0 };
        for dj in -cj..=cj {
            for di in -c..=c {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                if sol.active[grid.idx(ii as usize, jj as usize)] != me {
                    return true;
                }
            }
        }
        false
    };
    let mut sup_clear = 0.0f64;
    for (i, j) in grid.interior() {
        if grid.cells_to_boundary(i, j) >= 2 && !near_fb(i, j) {
            sup_clear = sup_clear.max(defect.at(i, j).abs());
        }
    }
    Pde2Report {
        sup_defect: defect.sup_norm(),
        l2_defect: defect.l2_norm(),
        sup_defect_clear: sup_clear,
    }
}

/// Estimates for the structural constants of the linearized problem: a lower
/// bound for h near the contact set (nondegeneracy) and a Holder modulus of
/// h from dyadic difference quotients.
#[derive(Debug, Clone)]
pub struct H45Report {
    /// Minimum of h over the 4-cell neighborhood of the contact set; None
    /// when the contact set is empty.
    pub c0_est: Option<f64>,
    /// Contact set nonempty and c0_est strictly positive.
    pub c0_positive: bool,
    pub neighborhood_nodes: usize,
    /// Exponent fitted to max |h(x) - h(y)| over |x - y| in {h, 2h, 4h, 8h},
    /// clamped to [0, 1]; 1.0 when h is constant to rounding.
    pub holder_alpha: f64,
    /// Largest quotient |h(x) - h(y)| / |x - y|^alpha over the sampled pairs.
    pub holder_const: f64,
}

pub fn verify_h4_h5(lin: &LinearizedProblem, sol: &Solution) -> H45Report {
    let grid = sol.u.grid;
    let [nx, ny] = grid.shape();

    // Nondegeneracy: min of h within Chebyshev distance 4 of an active node.
    let mut c0: Option<f64> = None;
    let mut count = 0usize;
    let reach = 4isize;
    let reach_j = if grid.dim() == 2 { reach } else { 0 };
    for (i, j) in grid.interior() {
        let mut near = false;
        'scan: for dj in -reach_j..=reach_j {
            for di in -reach..=reach {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                if sol.active[grid.idx(ii as usize, jj as usize)] {
                    near = true;
                    break 'scan;
                }
            }
        }
        if near {
            count += 1;
            let v = lin.h.at(i, j);
            c0 = Some(c0.map_or(v, |c: f64| c.min(v)));
        }
    }

    // Holder modulus from pair quotients at dyadic cell distances.
    let h_spacing = grid.spacing();
    let scale = lin.h.sup_norm().max(1.0);
    let mut pairs: Vec<(f64, f64)> = Vec::new(); // (distance, max |dh|)
    for &d in &[1usize, 2, 4, 8] {
        let mut worst = 0.0f64;
        let mut dist = 0.0f64;
        for (i, j) in grid.interior() {
            if i + d < nx - 1 && !grid.is_boundary(i + d, j) {
                let q = (lin.h.at(i + d, j) - lin.h.at(i, j)).abs();
                worst = worst.max(q);
                dist = d as f64 * h_spacing[0];
            }
            if grid.dim() == 2 && j + d < ny - 1 && !grid.is_boundary(i, j + d) {
                let q = (lin.h.at(i, j + d) - lin.h.at(i, j)).abs();
                if q > worst {
                    worst = q;
                }
                dist = dist.max(d as f64 * h_spacing[1]);
            }
        }
        if dist > 0.0 && worst > 1e-13 * scale {
            pairs.push((dist, worst));
        }
    }
    let (alpha, holder_const) = if pairs.len() >= 2 {
        // Least squares slope of ln(max dh) against ln(distance).
        let n = pairs.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(d, m) in &pairs {
            let (x, y) = (d.ln(), m.ln());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let alpha = slope.clamp(0.0, 1.0);
        let c = pairs
            .iter()
            .map(|&(d, m)| m / d.powf(alpha))
            .fold(0.0, f64::max);
        (alpha, c)
    } else {
        // h constant to rounding: maximally smooth, zero modulus.
        (1.0, 0.0)
    };

    H45Report {
        c0_est: c0,
        c0_positive: count > 0 && c0.map_or(false, |c| c > 0.0),
        neighborhood_nodes: count,
        holder_alpha: alpha,
        holder_const,
    }
}
