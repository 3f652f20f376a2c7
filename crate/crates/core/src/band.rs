//! Banded LU factorization with partial pivoting.
//!
//! The grid operators assembled by the solvers couple node `k` to at most
//! `k +- 1` (1D) or `k +- 1, k +- nx` (2D row-major numbering), so their
//! matrices are banded with bandwidth 1 or `nx`. Storage follows the usual
//! band layout: entry (i, j) lives at packed row `kl + ku + i - j` of column
//! `j`, with `kl` extra rows on top for pivoting fill, `ldab = 2 kl + ku + 1`
//! rows total.

use crate::error::{Error, Result};

/// Band matrix builder. Writes outside the declared band panic, since that
/// is always an assembly bug.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major packed storage, `ldab * n`.
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> BandMatrix {
        assert!(n > 0 && kl < n && ku < n, "degenerate band shape");
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ab: vec![0.0; ldab * n],
        }
    }

    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        assert!(
            i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i,
            "entry ({i}, {j}) outside band (n = {}, kl = {}, ku = {})",
            self.n,
            self.kl,
            self.ku
        );
        j * self.ldab() + self.kl + self.ku + i - j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i {
            self.ab[j * self.ldab() + self.kl + self.ku + i - j]
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let i_lo = j.saturating_sub(self.ku);
            let i_hi = (j + self.kl).min(self.n - 1);
            for i in i_lo..=i_hi {
                y[i] += self.ab[j * self.ldab() + self.kl + self.ku + i - j] * x[j];
            }
        }
        y
    }

    /// LU factorization with partial pivoting; the builder stays usable for
    /// residual checks. Fails on an exactly singular pivot.
    pub fn factorize(&self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = self.ldab();
        let kuf = kl + ku; // upper bandwidth of U after pivoting fill
        let mut ab = self.ab.clone();
        let mut ipiv = vec![0usize; n];
        let diag = kl + ku; // packed row of the diagonal
        for k in 0..n {
            let reach = kl.min(n - 1 - k);
            let col = k * ldab;
            let mut piv = 0usize;
            let mut pval = ab[col + diag].abs();
            for d in 1..=reach {
                let v = ab[col + diag + d].abs();
                if v > pval {
                    pval = v;
                    piv = d;
                }
            }
            ipiv[k] = k + piv;
            if pval == 0.0 {
                return Err(Error::LinearSolve(format!(
                    "singular pivot at column {k} of {n}"
                )));
            }
            if piv != 0 {
                let j_hi = (k + kuf).min(n - 1);
                for j in k..=j_hi {
                    let base = j * ldab + diag + k - j;
                    ab.swap(base, base + piv);
                }
            }
            let akk = ab[col + diag];
            for d in 1..=reach {
                ab[col + diag + d] /= akk;
            }
            let j_hi = (k + kuf).min(n - 1);
            for j in (k + 1)..=j_hi {
                let base = j * ldab + diag + k - j;
                let akj = ab[base];
                if akj != 0.0 {
                    for d in 1..=reach {
                        ab[base + d] -= ab[col + diag + d] * akj;
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            kuf,
            ldab,
            diag,
            ab,
            ipiv,
        })
    }
}

/// Factorized form; solves repeatedly against the same matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    kuf: usize,
    ldab: usize,
    diag: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
            let reach = self.kl.min(n - 1 - k);
            let col = k * self.ldab + self.diag;
            for d in 1..=reach {
                b[k + d] -= self.ab[col + d] * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            let j_hi = (k + self.kuf).min(n - 1);
            for j in (k + 1)..=j_hi {
                s -= self.ab[j * self.ldab + self.diag + k - j] * b[j];
            }
            b[k] = s / self.ab[k * self.ldab + self.diag];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut x = b.to_vec();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, piv);
            x.swap(k, piv);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in k + 1..n {
                let t = x[j];
                x[k] -= m[k][j] * t;
            }
            x[k] /= m[k][k];
        }
        x
    }

    fn pseudo(seed: &mut u64) -> f64 {
        // xorshift, mapped to [-1, 1]; deterministic test data only.
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        (*seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    #[test]
    fn matches_dense_on_random_bands() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        for &(n, kl, ku) in &[(7usize, 1usize, 1usize), (12, 2, 1), (20, 3, 3), (15, 1, 4)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i + ku >= j && j + kl >= i {
                        let v = pseudo(&mut seed) + if i == j { 4.0 } else { 0.0 };
                        band.set(i, j, v);
                        dense[i][j] = v;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| pseudo(&mut seed)).collect();
            let x = band.factorize().unwrap().solve(&b);
            let y = dense_solve(&dense, &b);
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-11, "n={n} kl={kl} ku={ku}: {u} vs {v}");
            }
            let r = band.matvec(&x);
            for (ri, bi) in r.iter().zip(&b) {
                assert!((ri - bi).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_diagonal() {
        // [[0, 1], [1, 0]] requires a row swap immediately.
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        let x = m.factorize().unwrap().solve(&[3.0, 5.0]);
        assert!((x[0] - 5.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn tridiagonal_poisson_solution() {
        // -u'' = 1 on (0,1), u(0) = u(1) = 0, exact nodal solution x(1-x)/2.
        let n = 65;
        let h = 1.0 / (n as f64 + 1.0);
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.set(i, i, 2.0 / (h * h));
            if i > 0 {
                m.set(i, i - 1, -1.0 / (h * h));
            }
            if i + 1 < n {
                m.set(i, i + 1, -1.0 / (h * h));
            }
        }
        let b = vec![1.0; n];
        let x = m.factorize().unwrap().solve(&b);
        for (i, &xi) in x.iter().enumerate() {
            let t = (i as f64 + 1.0) * h;
            assert!((xi - 0.5 * t * (1.0 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        // row 2 entirely zero
        assert!(m.factorize().is_err());
    }
}
