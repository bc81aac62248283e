//! Half-vectorization with doubled off-diagonals, the matching quadratic
//! monomials, and the policy Kronecker block used by the feedback regression.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// `n(n+1)/2`.
pub fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

/// `[p11, 2p12, …, 2p1n, p22, …, pnn]`.
pub fn svec(p: &Mat) -> Vector {
    let n = p.nrows();
    let mut out = Vec::with_capacity(tri(n));
    for i in 0..n {
        out.push(p[(i, i)]);
        for j in i + 1..n {
            out.push(p[(i, j)] + p[(j, i)]);
        }
    }
    Vector::from_vec(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &Vector) -> Result<Mat> {
    let n = tri_order(v.len())?;
    let mut p = Mat::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        p[(i, i)] = v[idx];
        idx += 1;
        for j in i + 1..n {
            p[(i, j)] = 0.5 * v[idx];
            p[(j, i)] = 0.5 * v[idx];
            idx += 1;
        }
    }
    Ok(p)
}

/// Recovers `n` from a triangular number `n(n+1)/2`.
pub fn tri_order(len: usize) -> Result<usize> {
    let n = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if tri(n) == len && n > 0 {
        Ok(n)
    } else {
        Err(Error::Dimension(format!("{len} is not a triangular number")))
    }
}

/// `[x1², x1x2, …, x1xn, x2², …, xn²]`, so that `quad_features(x)ᵀ·svec(P) = xᵀPx`.
pub fn quad_features(x: &[f64]) -> Vector {
    let n = x.len();
    let mut out = Vec::with_capacity(tri(n));
    for i in 0..n {
        for j in i..n {
            out.push(x[i] * x[j]);
        }
    }
    Vector::from_vec(out)
}

/// Writes `x ⊗ y` into `out`, index `i·len(y) + j` holding `x_i y_j`.
pub fn kron_into(x: &[f64], y: &[f64], out: &mut [f64]) {
    let ny = y.len();
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            out[i * ny + j] = xi * yj;
        }
    }
}

/// `n² × m(m+1)/2` matrix with columns `ρ_i ⊗ ρ_j` for `i ≤ j`, `ρ_i` the rows of `K`.
///
/// For symmetric `V`, `(x ⊗ x)ᵀ · 𝕂 · svec(V) = xᵀKᵀVKx`.
pub fn kron_policy_matrix(k: &Mat) -> Mat {
    let (m, n) = k.shape();
    let mut out = Mat::zeros(n * n, tri(m));
    let mut col = 0;
    let mut buf = vec![0.0; n * n];
    for i in 0..m {
        let ri: Vec<f64> = k.row(i).iter().copied().collect();
        for j in i..m {
            let rj: Vec<f64> = k.row(j).iter().copied().collect();
            kron_into(&ri, &rj, &mut buf);
            out.column_mut(col).copy_from_slice(&buf);
            col += 1;
        }
    }
    out
}
