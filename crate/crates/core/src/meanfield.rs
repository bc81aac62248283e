//! Mean-field trajectory `x̄(t)`, either averaged over sample paths under the
//! learned gains or propagated through an identified `(Â, B̂)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeedforwardDataset;
use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::features::tri;
use crate::linalg::{self, rowmajor, Mat, Vector};
use crate::model::SystemDynamics;
use crate::sim::{AffinePolicy, InitialState, Integrator, PathSampler, SamplingPlan};

/// `S` with a larger condition number blocks the identification route.
pub const MAX_COND_S: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanFieldMethod {
    MonteCarlo,
    Identified,
}

impl MeanFieldMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MeanFieldMethod::MonteCarlo => "monte-carlo",
            MeanFieldMethod::Identified => "identified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPath {
    pub times: Vec<f64>,
    /// `grid × n`.
    #[serde(with = "rowmajor")]
    pub xbar: Mat,
    pub xbar0: Vec<f64>,
    pub method: MeanFieldMethod,
}

impl MeanFieldPath {
    /// Largest componentwise gap over grid points with `t ≤ t_max`.
    pub fn sup_distance(&self, other: &MeanFieldPath, t_max: f64) -> Result<f64> {
        if self.xbar.ncols() != other.xbar.ncols() {
            return Err(Error::Dimension("mean-field paths differ in dimension".into()));
        }
        let len = self.times.len().min(other.times.len());
        let mut worst: f64 = 0.0;
        for k in 0..len {
            if (self.times[k] - other.times[k]).abs() > 1e-9 {
                return Err(Error::Invalid("mean-field grids differ".into()));
            }
            if self.times[k] > t_max + 1e-12 {
                break;
            }
            for j in 0..self.xbar.ncols() {
                worst = worst.max((self.xbar[(k, j)] - other.xbar[(k, j)]).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    #[serde(rename = "Ahat", with = "rowmajor")]
    pub a_hat: Mat,
    #[serde(rename = "Bhat", with = "rowmajor")]
    pub b_hat: Mat,
    /// Least-squares residual norm per row of `Â`.
    pub residuals: Vec<f64>,
}

/// Averages `ns` paths started at `xbar0` under `u = −(K̂ + K̂_s)x`.
pub fn mf_monte_carlo(
    dynamics: &SystemDynamics,
    k_hat: &Mat,
    ks_hat: &Mat,
    xbar0: &[f64],
    ns: usize,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<MeanFieldPath> {
    if ns == 0 {
        return Err(Error::Invalid("Monte Carlo route needs at least one path".into()));
    }
    let gain = k_hat + ks_hat;
    if !crate::riccati::is_ms_stabilizer(&gain, dynamics) {
        log::warn!("K̂ + K̂_s is not a mean-square stabilizer; Monte Carlo mean may diverge");
    }
    let init = InitialState::Fixed { x0: xbar0.to_vec() };
    let policy = AffinePolicy::feedback(gain);
    let sampler = PathSampler::new(
        dynamics,
        &policy,
        &init,
        plan,
        Integrator::EulerMaruyama,
        seed,
    )?;
    let (mut xbar, _) = sampler.mean(ns)?;
    // Every path starts at x̄₀ exactly; keep the first row free of rounding.
    for (j, v) in xbar0.iter().enumerate() {
        xbar[(0, j)] = *v;
    }
    Ok(MeanFieldPath {
        times: plan.times(),
        xbar,
        xbar0: xbar0.to_vec(),
        method: MeanFieldMethod::MonteCarlo,
    })
}

/// `B̂ = (Υ K_s S⁻¹)ᵀ`.
pub fn identify_b(s: &Mat, ks: &Mat, upsilon: &Mat) -> Result<Mat> {
    let n = s.nrows();
    if !s.is_square() || ks.ncols() != n || upsilon.shape() != (ks.nrows(), ks.nrows()) {
        return Err(Error::Dimension("identify_b operands are inconsistent".into()));
    }
    let cond = linalg::cond2(s);
    if !(cond < MAX_COND_S) {
        return Err(Error::IdentificationUnavailable(format!(
            "S has condition number {cond:.3e}; use the Monte Carlo route"
        )));
    }
    // (Υ K_s S⁻¹)ᵀ = S⁻ᵀ (Υ K_s)ᵀ
    let rhs = (upsilon * ks).transpose();
    linalg::solve(&s.transpose(), &rhs, "S")
}

/// Row `j` of `Â` from `2Ix̄x̄(e_j⊗I) a_j = Δx̄̂ svec(E_j) − 2Ix̄ū col(BᵀE_j)`.
pub fn identify_a(ds: &FeedforwardDataset, b_hat: &Mat) -> Result<IdentifiedModel> {
    ds.check()?;
    let (n, m) = (ds.n(), ds.m());
    if b_hat.shape() != (n, m) {
        return Err(Error::Dimension(format!(
            "B̂ is {:?}, expected ({n}, {m})",
            b_hat.shape()
        )));
    }
    let mut a_hat = Mat::zeros(n, n);
    let mut residuals = Vec::with_capacity(n);
    for j in 0..n {
        let z = ds.ixbarxbar.columns(j * n, n) * 2.0;
        let rank = linalg::numerical_rank(&z);
        if rank < n {
            return Err(Error::RankCondition(format!(
                "row {} of A: regressor rank {rank} < {n}",
                j + 1
            )));
        }
        // Position of the (j, j) entry in the svec ordering.
        let diag = tri(n) - tri(n - j);
        let mut h: Vector = ds.delta_xbarhat.column(diag).into_owned();
        let bj: Vector = b_hat.row(j).transpose();
        h -= ds.ixbarubar.columns(j * m, m) * bj * 2.0;
        let sol = linalg::lstsq(&z, &h).map_err(|e| match e {
            Error::RankCondition(msg) => Error::RankCondition(format!("row {} of A: {msg}", j + 1)),
            other => other,
        })?;
        a_hat.row_mut(j).copy_from(&sol.x.transpose());
        residuals.push(sol.residual_norm);
    }
    Ok(IdentifiedModel {
        a_hat,
        b_hat: b_hat.clone(),
        residuals,
    })
}

/// `x̄(t) = exp((Â − B̂(K̂ + K̂_s)) t) x̄₀` on `times`.
pub fn mf_from_identified(
    model: &IdentifiedModel,
    k_hat: &Mat,
    ks_hat: &Mat,
    xbar0: &[f64],
    times: &[f64],
) -> Result<MeanFieldPath> {
    let n = model.a_hat.nrows();
    if xbar0.len() != n || k_hat.shape() != (model.b_hat.ncols(), n) || ks_hat.shape() != k_hat.shape() {
        return Err(Error::Dimension("mean-field inputs do not match the identified model".into()));
    }
    let closed = closed_loop(model, k_hat, ks_hat);
    Ok(propagate(&closed, xbar0, times, MeanFieldMethod::Identified))
}

/// `Â − B̂(K̂ + K̂_s)`.
pub fn closed_loop(model: &IdentifiedModel, k_hat: &Mat, ks_hat: &Mat) -> Mat {
    &model.a_hat - &model.b_hat * (k_hat + ks_hat)
}

/// `x̄(t) = exp(M t) x̄₀` on `times`.
pub fn propagate(m: &Mat, xbar0: &[f64], times: &[f64], method: MeanFieldMethod) -> MeanFieldPath {
    let n = m.nrows();
    let x0 = Vector::from_column_slice(xbar0);
    let mut xbar = Mat::zeros(times.len(), n);
    for (k, t) in times.iter().enumerate() {
        let x = if *t == 0.0 {
            x0.clone()
        } else {
            matrix_exponential(&(m * *t)) * &x0
        };
        xbar.row_mut(k).copy_from(&x.transpose());
    }
    MeanFieldPath {
        times: times.to_vec(),
        xbar,
        xbar0: xbar0.to_vec(),
        method,
    }
}

/// Writes rows `t,xbar1..xbarn,method` for every path in turn.
pub fn write_meanfield_csv<W: Write>(out: W, paths: &[MeanFieldPath]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = paths.first().map(|p| p.xbar.ncols()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("xbar{i}")));
    header.push("method".into());
    w.write_record(&header)?;
    for p in paths {
        for (k, t) in p.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(p.xbar.row(k).iter().map(|v| v.to_string()));
            rec.push(p.method.as_str().into());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_meanfield_file(path: &Path, paths: &[MeanFieldPath]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_meanfield_csv(std::io::BufWriter::new(file), paths)
}
