//! Uniform tensor grids on rectangles, discrete fields and the difference
//! calculus used by the solvers and the verification passes.
//!
//! Conventions:
//! - 1D and 2D only; a 1D grid is stored as a 2D grid with one row.
//! - Node (i, j) sits at the convex combination of the bounds, so the extreme
//!   indices reproduce the bounds exactly in floating point.
//! - `gradient`/`divergence` use central differences at interior nodes and
//!   one-sided second-order stencils on the boundary; both are exact on
//!   affine fields and `gradient` is exact on quadratics at interior nodes.
//! - The discrete C^{1,1} seminorm is the largest axis-aligned second
//!   difference quotient |f(x+h e) - 2 f(x) + f(x-h e)| / h^2 over interior
//!   nodes; it stays bounded under refinement exactly when the sampled
//!   function has bounded second differences, which is the regularity class
//!   the solver outputs are expected to live in.

use crate::error::{Error, Result};
use crate::quadrature;

pub const MIN_RESOLUTION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 2],
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Grid> {
        Grid::build(1, [lo, 0.0], [hi, 1.0], [n, 1])
    }

    pub fn new_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Grid> {
        Grid::build(2, lo, hi, n)
    }

    fn build(dim: usize, lo: [f64; 2], hi: [f64; 2], shape: [usize; 2]) -> Result<Grid> {
        for axis in 0..dim {
            if !(lo[axis].is_finite() && hi[axis].is_finite() && lo[axis] < hi[axis]) {
                return Err(Error::config(
                    "domain.bounds",
                    format!("axis {axis}: need finite lo < hi, got [{}, {}]", lo[axis], hi[axis]),
                ));
            }
            if shape[axis] < MIN_RESOLUTION {
                return Err(Error::config(
                    "domain.resolution",
                    format!("axis {axis}: need at least {MIN_RESOLUTION} nodes, got {}", shape[axis]),
                ));
            }
        }
        Ok(Grid { dim, shape, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing per axis; the unused axis of a 1D grid reports 1.0.
    pub fn spacing(&self) -> [f64; 2] {
        let mut h = [1.0; 2];
        for axis in 0..self.dim {
            h[axis] = (self.hi[axis] - self.lo[axis]) / (self.shape[axis] - 1) as f64;
        }
        h
    }

    pub fn min_spacing(&self) -> f64 {
        let h = self.spacing();
        h[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        j * self.shape[0] + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.shape[0], idx / self.shape[0])
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.axis_coord(0, i), if self.dim == 2 { self.axis_coord(1, j) } else { 0.0 }]
    }

    fn axis_coord(&self, axis: usize, k: usize) -> f64 {
        let t = k as f64 / (self.shape[axis] - 1) as f64;
        self.lo[axis] * (1.0 - t) + self.hi[axis] * t
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        if i == 0 || i == self.shape[0] - 1 {
            return true;
        }
        self.dim == 2 && (j == 0 || j == self.shape[1] - 1)
    }

    /// Chebyshev distance (in cells) to the rectangle boundary.
    pub fn cells_to_boundary(&self, i: usize, j: usize) -> usize {
        let mut d = i.min(self.shape[0] - 1 - i);
        if self.dim == 2 {
            d = d.min(j).min(self.shape[1] - 1 - j);
        }
        d
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [nx, ny] = self.shape;
        (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j)))
    }

    pub fn interior(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let g = *self;
        self.nodes().filter(move |&(i, j)| !g.is_boundary(i, j))
    }

    /// Dyadic refinement: every cell split in two per axis; nodes nest.
    pub fn refine(&self) -> Result<Grid> {
        let double = |n: usize| 2 * n - 1;
        match self.dim {
            1 => Grid::new_1d(self.lo[0], self.hi[0], double(self.shape[0])),
            _ => Grid::new_2d(self.lo, self.hi, [double(self.shape[0]), double(self.shape[1])]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    data: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub grid: Grid,
    data: Vec<[[f64; 2]; 2]>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField { grid, data: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> f64) -> ScalarField {
        let mut data = Vec::with_capacity(grid.len());
        for (i, j) in grid.nodes() {
            data.push(f(grid.node(i, j)));
        }
        ScalarField { grid, data }
    }

    /// Like `from_fn` but the closure sees node indices instead of
    /// coordinates; handy when the value depends on grid position (boundary
    /// tests, flattened lookups).
    pub fn from_index_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> ScalarField {
        let mut data = Vec::with_capacity(grid.len());
        for (i, j) in grid.nodes() {
            data.push(f(i, j));
        }
        ScalarField { grid, data }
    }

    pub fn try_from_fn(
        grid: Grid,
        mut f: impl FnMut([f64; 2]) -> Result<f64>,
    ) -> Result<ScalarField> {
        let mut data = Vec::with_capacity(grid.len());
        for (i, j) in grid.nodes() {
            data.push(f(grid.node(i, j))?);
        }
        Ok(ScalarField { grid, data })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.grid.idx(i, j);
        self.data[idx] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L2 norm with trapezoidal node weights.
    pub fn l2_norm(&self) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let cell = h[..g.dim()].iter().product::<f64>();
        let mut acc = 0.0;
        for (i, j) in g.nodes() {
            let mut w = if i == 0 || i == g.shape()[0] - 1 { 0.5 } else { 1.0 };
            if g.dim() == 2 && (j == 0 || j == g.shape()[1] - 1) {
                w *= 0.5;
            }
            let v = self.at(i, j);
            acc += w * v * v;
        }
        (acc * cell).sqrt()
    }

    /// Largest axis-aligned second difference quotient over interior nodes.
    pub fn c11_seminorm(&self) -> f64 {
        let g = &self.grid;
        let [nx, ny] = g.shape();
        let h = g.spacing();
        let mut worst: f64 = 0.0;
        for (i, j) in g.nodes() {
            if i >= 1 && i + 1 < nx {
                let q = (self.at(i + 1, j) - 2.0 * self.at(i, j) + self.at(i - 1, j))
                    / (h[0] * h[0]);
                worst = worst.max(q.abs());
            }
            if g.dim() == 2 && j >= 1 && j + 1 < ny {
                let q = (self.at(i, j + 1) - 2.0 * self.at(i, j) + self.at(i, j - 1))
                    / (h[1] * h[1]);
                worst = worst.max(q.abs());
            }
        }
        worst
    }

    /// Multilinear interpolation. Points up to 1e-9 cells outside the box are
    /// clamped (roundoff from affine maps); anything further is a range error.
    pub fn interp(&self, p: [f64; 2]) -> Result<f64> {
        let g = &self.grid;
        let (lo, hi) = g.bounds();
        let h = g.spacing();
        let mut cell = [0usize; 2];
        let mut frac = [0.0; 2];
        for axis in 0..g.dim() {
            let slack = 1e-9 * h[axis];
            if p[axis] < lo[axis] - slack || p[axis] > hi[axis] + slack {
                return Err(Error::Range(format!(
                    "point ({}, {}) outside grid box on axis {axis}",
                    p[0], p[1]
                )));
            }
            let t = ((p[axis] - lo[axis]) / h[axis])
                .clamp(0.0, (g.shape()[axis] - 1) as f64);
            let c = (t.floor() as usize).min(g.shape()[axis] - 2);
            cell[axis] = c;
            frac[axis] = t - c as f64;
        }
        let (i, fx) = (cell[0], frac[0]);
        if g.dim() == 1 {
            return Ok(self.at(i, 0) * (1.0 - fx) + self.at(i + 1, 0) * fx);
        }
        let (j, fy) = (cell[1], frac[1]);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Ok(v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy)
    }

    /// Central second differences (mixed term by the four-corner stencil).
    /// Interior nodes only.
    pub fn hessian_at(&self, i: usize, j: usize) -> Result<[[f64; 2]; 2]> {
        let g = &self.grid;
        if g.cells_to_boundary(i, j) < 1 {
            return Err(Error::Range(format!(
                "hessian stencil needs an interior node, got ({i}, {j})"
            )));
        }
        let h = g.spacing();
        let mut out = [[0.0; 2]; 2];
        out[0][0] =
            (self.at(i + 1, j) - 2.0 * self.at(i, j) + self.at(i - 1, j)) / (h[0] * h[0]);
        if g.dim() == 2 {
            out[1][1] =
                (self.at(i, j + 1) - 2.0 * self.at(i, j) + self.at(i, j - 1)) / (h[1] * h[1]);
            let mixed = (self.at(i + 1, j + 1) - self.at(i + 1, j - 1) - self.at(i - 1, j + 1)
                + self.at(i - 1, j - 1))
                / (4.0 * h[0] * h[1]);
            out[0][1] = mixed;
            out[1][0] = mixed;
        }
        Ok(out)
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> VectorField {
        VectorField { grid, data: vec![[0.0; 2]; grid.len()] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> VectorField {
        let mut data = Vec::with_capacity(grid.len());
        for (i, j) in grid.nodes() {
            data.push(f(grid.node(i, j)));
        }
        VectorField { grid, data }
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        self.data[self.grid.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: [f64; 2]) {
        let idx = self.grid.idx(i, j);
        self.data[idx] = v;
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.data.iter().map(|v| v[axis]).collect(),
        }
    }
}

impl MatrixField {
    pub fn constant(grid: Grid, m: [[f64; 2]; 2]) -> MatrixField {
        MatrixField { grid, data: vec![m; grid.len()] }
    }

    pub fn identity(grid: Grid) -> MatrixField {
        MatrixField::constant(grid, [[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> [[f64; 2]; 2]) -> MatrixField {
        let mut data = Vec::with_capacity(grid.len());
        for (i, j) in grid.nodes() {
            data.push(f(grid.node(i, j)));
        }
        MatrixField { grid, data }
    }

    pub fn at(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        self.data[self.grid.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, m: [[f64; 2]; 2]) {
        let idx = self.grid.idx(i, j);
        self.data[idx] = m;
    }
}

/// One-dimensional difference along an axis: central at interior nodes,
/// one-sided second order (-3, 4, -1)/(2h) at the two ends.
fn axis_derivative(f: &ScalarField, axis: usize, i: usize, j: usize) -> f64 {
    let g = &f.grid;
    let n = g.shape()[axis];
    let h = g.spacing()[axis];
    let get = |k: usize| -> f64 {
        if axis == 0 {
            f.at(k, j)
        } else {
            f.at(i, k)
        }
    };
    let k = if axis == 0 { i } else { j };
    if k == 0 {
        (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
    } else {
        (get(k + 1) - get(k - 1)) / (2.0 * h)
    }
}

/// Node-wise gradient; second-order everywhere, exact on affine fields.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut out = VectorField::zeros(g);
    for (i, j) in g.nodes() {
        let mut v = [0.0; 2];
        for axis in 0..g.dim() {
            v[axis] = axis_derivative(f, axis, i, j);
        }
        out.set(i, j, v);
    }
    out
}

/// Node-wise divergence of a vector field, componentwise with the same
/// stencils as `gradient`, hence linear and second-order.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = ScalarField::zeros(g);
    let comps: Vec<ScalarField> = (0..g.dim()).map(|a| v.component(a)).collect();
    for (i, j) in g.nodes() {
        let mut acc = 0.0;
        for (axis, comp) in comps.iter().enumerate() {
            acc += axis_derivative(comp, axis, i, j);
        }
        out.set(i, j, acc);
    }
    out
}

/// Integrate a scalar function along the segment from `a` to `b` with an
/// m-point Gauss-Legendre rule (m = 5 integrates degree-9 polynomials
/// exactly, ample for the C^{1,1} profiles met here).
pub fn line_quadrature(
    f: impl Fn([f64; 2]) -> f64,
    a: [f64; 2],
    b: [f64; 2],
    m: usize,
) -> Result<f64> {
    let rule = quadrature::gauss_legendre(m)?;
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let mut acc = 0.0;
    for &(t, w) in &rule {
        let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        acc += w * f(p);
    }
    Ok(acc * len)
}

/// Trapezoidal inner product of two scalar fields.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> f64 {
    assert_eq!(f.grid, g.grid);
    let gr = &f.grid;
    let h = gr.spacing();
    let cell = h[..gr.dim()].iter().product::<f64>();
    let mut acc = 0.0;
    for (i, j) in gr.nodes() {
        let mut w = if i == 0 || i == gr.shape()[0] - 1 { 0.5 } else { 1.0 };
        if gr.dim() == 2 && (j == 0 || j == gr.shape()[1] - 1) {
            w *= 0.5;
        }
        acc += w * f.at(i, j) * g.at(i, j);
    }
    acc * cell
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_reproduced_exactly() {
        let g = Grid::new_1d(-1.0, 1.0, 2049).unwrap();
        assert_eq!(g.node(0, 0)[0], -1.0);
        assert_eq!(g.node(2048, 0)[0], 1.0);
        let g2 = Grid::new_2d([0.1, -0.3], [0.7, 0.9], [17, 33]).unwrap();
        assert_eq!(g2.node(16, 32), [0.7, 0.9]);
        assert_eq!(g2.node(0, 0), [0.1, -0.3]);
    }

    #[test]
    fn resolution_floor_enforced() {
        assert!(Grid::new_1d(0.0, 1.0, 2).is_err());
        assert!(Grid::new_2d([0.0; 2], [1.0; 2], [3, 2]).is_err());
        assert!(Grid::new_1d(1.0, 0.0, 9).is_err());
    }

    #[test]
    fn gradient_exact_on_affine() {
        let g = Grid::new_2d([-1.0; 2], [1.0; 2], [9, 11]).unwrap();
        let f = ScalarField::from_fn(g, |p| 3.0 * p[0] - 2.0 * p[1] + 0.5);
        let grad = gradient(&f);
        for (i, j) in g.nodes() {
            let v = grad.at(i, j);
            assert!((v[0] - 3.0).abs() < 1e-13 && (v[1] + 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_second_order_on_sine() {
        // Refinement halves h; the sup error against cos must drop at
        // order >= 1.9.
        let mut errs = Vec::new();
        for n in [101usize, 201, 401] {
            let g = Grid::new_1d(0.0, std::f64::consts::PI, n).unwrap();
            let f = ScalarField::from_fn(g, |p| p[0].sin());
            let grad = gradient(&f);
            let mut err: f64 = 0.0;
            for (i, j) in g.nodes() {
                err = err.max((grad.at(i, j)[0] - g.node(i, j)[0].cos()).abs());
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate >= 1.9, "rate {rate} from errors {errs:?}");
        }
    }

    #[test]
    fn divergence_linear_to_roundoff() {
        let g = Grid::new_2d([-1.0; 2], [1.0; 2], [15, 15]).unwrap();
        let v = VectorField::from_fn(g, |p| [p[0] * p[1], p[1] * p[1]]);
        let w = VectorField::from_fn(g, |p| [(p[0] * 2.0).sin(), p[0] + p[1]]);
        let combo = VectorField::from_fn(g, |p| {
            let a = [p[0] * p[1], p[1] * p[1]];
            let b = [(p[0] * 2.0).sin(), p[0] + p[1]];
            [2.5 * a[0] - 0.5 * b[0], 2.5 * a[1] - 0.5 * b[1]]
        });
        let dv = divergence(&v);
        let dw = divergence(&w);
        let dc = divergence(&combo);
        for (i, j) in g.nodes() {
            let lin = 2.5 * dv.at(i, j) - 0.5 * dw.at(i, j);
            assert!((lin - dc.at(i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn c11_seminorm_of_squared_positive_part() {
        // max(x,0)^2 has second derivative 2 on x>0 and 0 on x<0; the
        // straddling quotient never exceeds 2, so the seminorm is exactly 2
        // once at least two nodes sit past the kink.
        for n in [33usize, 64, 129] {
            let g = Grid::new_1d(-1.0, 1.0, n).unwrap();
            let f = ScalarField::from_fn(g, |p| p[0].max(0.0).powi(2));
            assert!(
                (f.c11_seminorm() - 2.0).abs() < 1e-10,
                "n={n}: {}",
                f.c11_seminorm()
            );
        }
    }

    #[test]
    fn integration_by_parts_second_order() {
        // |<grad f, v> + <f, div v> - boundary flux| should shrink at O(h^2).
        let mut defects = Vec::new();
        for n in [17usize, 33, 65] {
            let g = Grid::new_2d([0.0; 2], [1.0; 2], [n, n]).unwrap();
            let f = ScalarField::from_fn(g, |p| (p[0] * 1.3).sin() * (p[1] - 0.2).cos());
            let v = VectorField::from_fn(g, |p| [p[0] * p[0] * p[1], (p[0] + p[1]).cos()]);
            let grad_f = gradient(&f);
            let div_v = divergence(&v);
            let mut volume = inner_product(&grad_f.component(0), &v.component(0))
                + inner_product(&grad_f.component(1), &v.component(1))
                + inner_product(&f, &div_v);
            // Boundary flux by the trapezoid rule over the four sides.
            let [nx, ny] = g.shape();
            let h = g.spacing();
            let mut flux = 0.0;
            for j in 0..ny {
                let w = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
                flux += w * h[1] * f.at(nx - 1, j) * v.at(nx - 1, j)[0];
                flux -= w * h[1] * f.at(0, j) * v.at(0, j)[0];
            }
            for i in 0..nx {
                let w = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
                flux += w * h[0] * f.at(i, ny - 1) * v.at(i, ny - 1)[1];
                flux -= w * h[0] * f.at(i, 0) * v.at(i, 0)[1];
            }
            volume -= flux;
            defects.push(volume.abs());
        }
        for w in defects.windows(2) {
            assert!(w[1] < w[0] / 3.0, "defects {defects:?}");
        }
    }

    #[test]
    fn bilinear_interp_reproduces_bilinear_fields() {
        let g = Grid::new_2d([-1.0; 2], [1.0; 2], [9, 9]).unwrap();
        let f = ScalarField::from_fn(g, |p| 2.0 + p[0] - 3.0 * p[1] + 0.5 * p[0] * p[1]);
        for &(x, y) in &[(0.13, -0.49), (-0.999, 0.999), (1.0, -1.0), (0.0, 0.0)] {
            let v = f.interp([x, y]).unwrap();
            let exact = 2.0 + x - 3.0 * y + 0.5 * x * y;
            assert!((v - exact).abs() < 1e-12);
        }
        assert!(f.interp([1.5, 0.0]).is_err());
    }

    #[test]
    fn line_quadrature_degree() {
        // Default m=5 integrates t^9 exactly along a segment.
        let v = line_quadrature(|p| p[0].powi(9), [0.0, 0.0], [1.0, 0.0], 5).unwrap();
        assert!((v - 0.1).abs() < 1e-14);
    }

    #[test]
    fn hessian_exact_on_quadratics() {
        let g = Grid::new_2d([-1.0; 2], [1.0; 2], [11, 11]).unwrap();
        let f = ScalarField::from_fn(g, |p| {
            1.5 * p[0] * p[0] - 0.75 * p[0] * p[1] + 0.25 * p[1] * p[1]
        });
        let h = f.hessian_at(5, 5).unwrap();
        assert!((h[0][0] - 3.0).abs() < 1e-11);
        assert!((h[1][1] - 0.5).abs() < 1e-11);
        assert!((h[0][1] + 0.75).abs() < 1e-11);
        assert_eq!(h[0][1], h[1][0]);
        assert!(f.hessian_at(0, 5).is_err());
    }
}
