//! Data-driven policy iteration for `(S, K_s)` on the ensemble-mean path.
//!
//! Each step solves `Φ [svec(S_k); col(K_s^k)] = Θ` with
//! `Φ = [Δx̄̂, −2Ix̄ū(I⊗Υ) − 2Ix̄x̄(I⊗(Υ(K_s + K))ᵀ)]` and
//! `Θ = −Ix̄x̄ col(−Q_Γ + K_sᵀΥK_s)`, starting from `K_s⁰ = 0`.

use crate::dataset::{check_rank_feedforward, feedforward_rank, FeedforwardDataset};
use crate::error::{Error, Result};
use crate::features::{smat, tri};
use crate::linalg::{self, Mat, Vector};
use crate::riccati::{FeedforwardSolution, IterationTrace, TraceEntry};

/// Regressor and target of one iteration at feedforward gain `ks`.
pub fn feedforward_regression(
    ds: &FeedforwardDataset,
    k: &Mat,
    ks: &Mat,
    upsilon: &Mat,
    q_gamma: &Mat,
) -> (Mat, Vector) {
    let n = ds.n();
    let m = ds.m();
    let s_cols = tri(n);
    let k_cols = n * m;
    let eye = Mat::identity(n, n);
    let mut phi = Mat::zeros(ds.rows(), s_cols + k_cols);
    phi.columns_mut(0, s_cols).copy_from(&ds.delta_xbarhat);
    let block = &ds.ixbarubar * linalg::kron(&eye, upsilon) * -2.0
        - &ds.ixbarxbar * linalg::kron(&eye, &(upsilon * (ks + k)).transpose()) * 2.0;
    phi.columns_mut(s_cols, k_cols).copy_from(&block);
    let w = -q_gamma + ks.transpose() * upsilon * ks;
    let theta = -(&ds.ixbarxbar * linalg::vec_col(&w));
    (phi, theta)
}

/// Learned `(S, K_s)` given the learned feedback gain `k` and `Υ̂ = R + Λ̂`.
/// `p` is attached as `Π = P + S` when supplied.
pub fn irl_feedforward_iterate(
    ds: &FeedforwardDataset,
    k: &Mat,
    upsilon: &Mat,
    q_gamma: &Mat,
    p: Option<&Mat>,
    xi: f64,
    max_iter: usize,
) -> Result<(FeedforwardSolution, IterationTrace)> {
    ds.check()?;
    let (n, m) = (ds.n(), ds.m());
    if k.shape() != (m, n) || upsilon.shape() != (m, m) || q_gamma.shape() != (n, n) {
        return Err(Error::Dimension("feedforward inputs do not match dataset".into()));
    }
    if !linalg::is_pd(upsilon) {
        return Err(Error::Invalid("Υ̂ must be positive definite".into()));
    }
    if !check_rank_feedforward(ds) {
        return Err(Error::RankDeficient {
            iteration: 0,
            rank: feedforward_rank(ds),
            required: ds.required_rank(),
        });
    }
    let s_cols = tri(n);
    let mut trace = IterationTrace::default();
    let mut ks_prev = Mat::zeros(m, n);
    for iter in 1..=max_iter {
        let (phi, theta) = feedforward_regression(ds, k, &ks_prev, upsilon, q_gamma);
        let sol = linalg::lstsq(&phi, &theta).map_err(|e| match e {
            Error::RankCondition(_) => Error::RankDeficient {
                iteration: iter,
                rank: linalg::numerical_rank(&phi),
                required: phi.ncols(),
            },
            other => other,
        })?;
        let s = linalg::symmetrize(&smat(&sol.x.rows(0, s_cols).into_owned())?);
        let ks = linalg::unvec(&sol.x.rows(s_cols, n * m).into_owned(), m, n);
        let update = linalg::frobenius(&(&ks - &ks_prev));
        trace.entries.push(TraceEntry {
            k: iter,
            value: s.clone(),
            gain: ks.clone(),
            lambda: None,
            update_norm: update,
            residual_norm: sol.residual_norm,
        });
        if update <= xi {
            let pi = p.map(|p| p + &s);
            return Ok((FeedforwardSolution { s, ks, pi }, trace));
        }
        ks_prev = ks;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: Box::new(trace),
    })
}
