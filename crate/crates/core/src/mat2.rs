//! Closed-form helpers for symmetric 2x2 (and trivially 1x1) matrices stored
//! as `[[f64; 2]; 2]`. 1D problems use the top-left entry and leave the rest
//! zero; `dim` selects the active block.

/// Eigenvalue range (min, max) of the symmetric part.
pub fn sym_eig(m: [[f64; 2]; 2], dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (m[0][0], m[0][0]);
    }
    let off = 0.5 * (m[0][1] + m[1][0]);
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - off * off;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(m: [[f64; 2]; 2], dim: usize) -> [[f64; 2]; 2] {
    if dim == 1 {
        let mut out = [[0.0; 2]; 2];
        out[0][0] = m[0][0].max(0.0).sqrt();
        return out;
    }
    let off = 0.5 * (m[0][1] + m[1][0]);
    if off.abs() < 1e-300 {
        return [
            [m[0][0].max(0.0).sqrt(), 0.0],
            [0.0, m[1][1].max(0.0).sqrt()],
        ];
    }
    let (l0, l1) = sym_eig(m, 2);
    // Eigenvector for l1: (off, l1 - m[0][0]) normalized.
    let (vx, vy) = (off, l1 - m[0][0]);
    let norm = (vx * vx + vy * vy).sqrt();
    let (c, s) = (vx / norm, vy / norm);
    let (r0, r1) = (l0.max(0.0).sqrt(), l1.max(0.0).sqrt());
    // R diag(r1, r0) R^T with R = [[c, -s], [s, c]].
    [
        [r1 * c * c + r0 * s * s, (r1 - r0) * c * s],
        [(r1 - r0) * c * s, r1 * s * s + r0 * c * c],
    ]
}

/// Full eigen-decomposition of the symmetric part: eigenvalues ascending,
/// with matching unit eigenvectors as rows (so `vecs[k]` pairs with
/// `vals[k]`, and the rows form a right-handed orthonormal pair).
pub fn sym_eig_vectors(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (lo, hi) = sym_eig(m, 2);
    let off = 0.5 * (m[0][1] + m[1][0]);
    // Two candidate eigenvectors for hi; pick the better conditioned one.
    let c1 = [off, hi - m[0][0]];
    let c2 = [hi - m[1][1], off];
    let (n1, n2) = (c1[0] * c1[0] + c1[1] * c1[1], c2[0] * c2[0] + c2[1] * c2[1]);
    let v = if n1 >= n2 { c1 } else { c2 };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let v_hi = if n > 1e-300 {
        [v[0] / n, v[1] / n]
    } else if m[0][0] >= m[1][1] {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([lo, hi], [[-v_hi[1], v_hi[0]], v_hi])
}

pub fn mul_vec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn transpose(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn frobenius(m: [[f64; 2]; 2]) -> f64 {
    (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
}
