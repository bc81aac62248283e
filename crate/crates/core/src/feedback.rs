//! Data-driven policy iteration for `(P, K, DᵀPD)`.
//!
//! Each step solves `Ψ θ = Ξ` in the least-squares sense for
//! `θ = [svec(P_k); col(K̃_k); svec(Λ_k)]` with
//! `Ψ = [Δx̂, −2Ixu − 2Ixx(I⊗Kᵀ), −Iû + Ixx𝕂]` and `Ξ = −Ixx col(Q + KᵀRK)`.
//! Only the dataset and the cost weights are read.

use crate::dataset::{check_rank_feedback, FeedbackDataset};
use crate::error::{Error, Result};
use crate::features::{kron_policy_matrix, smat, tri};
use crate::linalg::{self, Mat, Vector};
use crate::model::CostSpec;
use crate::riccati::{FeedbackSolution, IterationTrace, TraceEntry};

/// Regressor and target of one iteration at gain `k`.
pub fn feedback_regression(ds: &FeedbackDataset, k: &Mat, cost: &CostSpec) -> (Mat, Vector) {
    let (n, m) = (ds.n(), ds.m());
    let l = ds.rows();
    let p_cols = tri(n);
    let k_cols = n * m;
    let l_cols = tri(m);
    let mut psi = Mat::zeros(l, p_cols + k_cols + l_cols);
    psi.columns_mut(0, p_cols).copy_from(&ds.delta_xhat);
    let ikt = linalg::kron(&Mat::identity(n, n), &k.transpose());
    psi.columns_mut(p_cols, k_cols)
        .copy_from(&(&ds.ixu * -2.0 - &ds.ixx * &ikt * 2.0));
    psi.columns_mut(p_cols + k_cols, l_cols)
        .copy_from(&(-&ds.iuhat + &ds.ixx * kron_policy_matrix(k)));
    let qk = &cost.q + k.transpose() * &cost.r * k;
    let xi = -(&ds.ixx * linalg::vec_col(&qk));
    (psi, xi)
}

/// Symmetrizes `Λ` and clips eigenvalues below `−1e-10` to zero.
pub fn clip_lambda(lambda: &Mat) -> Mat {
    let sym = linalg::symmetrize(lambda);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= -linalg::EPS_PSD {
        return sym;
    }
    let clipped = eig
        .eigenvalues
        .map(|v| if v < -linalg::EPS_PSD { 0.0 } else { v });
    let v = &eig.eigenvectors;
    linalg::symmetrize(&(v * Mat::from_diagonal(&clipped) * v.transpose()))
}

/// Learned `(P, K, Λ, K̃)` from a behaviour gain `k0`, stopping once
/// `‖K_k − K_{k−1}‖_F ≤ xi`.
pub fn irl_feedback_iterate(
    ds: &FeedbackDataset,
    k0: &Mat,
    cost: &CostSpec,
    xi: f64,
    max_iter: usize,
) -> Result<(FeedbackSolution, IterationTrace)> {
    ds.check()?;
    let (n, m) = (ds.n(), ds.m());
    if k0.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "K0 is {:?}, dataset has n={n}, m={m}",
            k0.shape()
        )));
    }
    if cost.q.shape() != (n, n) || cost.r.shape() != (m, m) {
        return Err(Error::Dimension("cost weights do not match dataset".into()));
    }
    if !check_rank_feedback(ds) {
        return Err(Error::RankDeficient {
            iteration: 0,
            rank: crate::dataset::feedback_rank(ds),
            required: ds.required_rank(),
        });
    }
    let p_cols = tri(n);
    let k_cols = n * m;
    let mut trace = IterationTrace::default();
    let mut k_prev = k0.clone();
    for iter in 1..=max_iter {
        let (psi, rhs) = feedback_regression(ds, &k_prev, cost);
        let sol = linalg::lstsq(&psi, &rhs).map_err(|e| match e {
            Error::RankCondition(_) => Error::RankDeficient {
                iteration: iter,
                rank: linalg::numerical_rank(&psi),
                required: psi.ncols(),
            },
            other => other,
        })?;
        let theta = sol.x;
        let p = linalg::symmetrize(&smat(&theta.rows(0, p_cols).into_owned())?);
        let ktilde = linalg::unvec(&theta.rows(p_cols, k_cols).into_owned(), m, n);
        let lambda = clip_lambda(&smat(&theta.rows(p_cols + k_cols, tri(m)).into_owned())?);
        let k = linalg::solve(&(&cost.r + &lambda), &ktilde, "R + Λ")?;
        let update = linalg::frobenius(&(&k - &k_prev));
        trace.entries.push(TraceEntry {
            k: iter,
            value: p.clone(),
            gain: k.clone(),
            lambda: Some(lambda.clone()),
            update_norm: update,
            residual_norm: sol.residual_norm,
        });
        if update <= xi {
            return Ok((FeedbackSolution { p, k, lambda, ktilde }, trace));
        }
        k_prev = k;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: Box::new(trace),
    })
}
