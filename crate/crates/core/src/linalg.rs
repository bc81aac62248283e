//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for PSD/PD tests on symmetric matrices.
pub const EPS_PSD: f64 = 1e-10;
/// Margin for Hurwitz / spectral-abscissa tests.
pub const EPS_HURWITZ: f64 = 1e-10;
/// Relative factor of the numerical-rank threshold `σ_max · max(rows, cols) · RANK_RTOL`.
pub const RANK_RTOL: f64 = 1e-12;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigenvalues(m: &Mat) -> Vector {
    symmetrize(m).symmetric_eigenvalues()
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).min()
}

pub fn is_psd(m: &Mat) -> bool {
    m.is_square() && min_sym_eigenvalue(m) >= -EPS_PSD
}

pub fn is_pd(m: &Mat) -> bool {
    m.is_square() && min_sym_eigenvalue(m) > EPS_PSD
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// 2-norm condition number; infinite for singular input.
pub fn cond2(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-stacking vectorization, `col(M)`.
pub fn vec_col(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v.as_slice())
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &Mat) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && spectral_abscissa(m) < -EPS_HURWITZ
}

/// Numerical rank with threshold `σ_max · max(rows, cols) · 1e-12`.
pub fn numerical_rank(m: &Mat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let tol = sv.max() * (m.nrows().max(m.ncols()) as f64) * RANK_RTOL;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{what}: inverse of non-square matrix")));
    }
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Solves `a · x = b` for square `a` by LU.
pub fn solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Least-squares solution of an overdetermined system.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vector,
    pub residual_norm: f64,
    pub rank: usize,
}

/// Least squares via Householder QR, after checking full column rank with the
/// numerical-rank threshold.
pub fn lstsq(a: &Mat, b: &Vector) -> Result<LstsqSolution> {
    let (rows, cols) = a.shape();
    if rows != b.len() {
        return Err(Error::Dimension(format!(
            "least squares: {rows} rows vs rhs of length {}",
            b.len()
        )));
    }
    let rank = numerical_rank(a);
    if rows < cols || rank < cols {
        return Err(Error::RankCondition(format!(
            "regressor has rank {rank} but {cols} unknowns"
        )));
    }
    // Column equilibration keeps R well scaled when blocks differ by orders of magnitude.
    let scales: Vec<f64> = (0..cols)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let qr = scaled.qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let head = qtb.rows(0, cols).into_owned();
    let mut x = r
        .solve_upper_triangular(&head)
        .ok_or_else(|| Error::Singular("triangular factor of least-squares system".into()))?;
    for (j, s) in scales.iter().enumerate() {
        x[j] /= s;
    }
    let residual_norm = (a * &x - b).norm();
    Ok(LstsqSolution {
        x,
        residual_norm,
        rank,
    })
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Row-major nested-array (de)serialization for matrices, the layout used by
/// config files and reports.
pub mod rowmajor {
    use super::Mat;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let nrows = rows.len();
        if nrows == 0 {
            return Err("matrix has no rows".into());
        }
        let ncols = rows[0].len();
        if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged or empty matrix rows".into());
        }
        Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
            Option::<Vec<Vec<f64>>>::deserialize(d)?
                .map(|rows| from_rows(&rows).map_err(D::Error::custom))
                .transpose()
        }
    }
}
