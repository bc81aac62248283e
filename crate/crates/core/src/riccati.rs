//! Model-based ground truth: generalized Lyapunov solves, the two policy
//! iterations for the stochastic Riccati equation and the indefinite Riccati
//! equation of the feedforward gain, residuals, and stability tests.
//!
//! Everything here reads the model matrices; the learners in
//! [`crate::feedback`] and [`crate::feedforward`] never do.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rowmajor, Mat};
use crate::model::{self, CostSpec, SystemDynamics};

/// Operators with a larger 2-norm condition number are treated as singular.
pub const LYAPUNOV_MAX_COND: f64 = 1e12;
/// Residual backstop applied on top of the gain-increment criterion.
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_XI: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSolution {
    #[serde(rename = "P", with = "rowmajor")]
    pub p: Mat,
    #[serde(rename = "K", with = "rowmajor")]
    pub k: Mat,
    /// `Λ = DᵀPD`.
    #[serde(rename = "Lambda", with = "rowmajor")]
    pub lambda: Mat,
    /// `K̃ = (R + Λ) K`.
    #[serde(rename = "Ktilde", with = "rowmajor")]
    pub ktilde: Mat,
}

impl FeedbackSolution {
    /// Assembles a solution from a gain and `Λ` alone, e.g. published
    /// reference estimates. `P` is left at zero.
    pub fn from_gain(k: Mat, lambda: Mat, r: &Mat) -> Self {
        let n = k.ncols();
        let ktilde = (r + &lambda) * &k;
        Self {
            p: Mat::zeros(n, n),
            k,
            lambda,
            ktilde,
        }
    }

    /// `Υ = R + Λ` as seen by the feedforward stage.
    pub fn upsilon(&self, r: &Mat) -> Mat {
        linalg::symmetrize(&(r + &self.lambda))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardSolution {
    #[serde(rename = "S", with = "rowmajor")]
    pub s: Mat,
    #[serde(rename = "Ks", with = "rowmajor")]
    pub ks: Mat,
    /// `Π = P + S`, present when `P` is known.
    #[serde(rename = "Pi", with = "rowmajor::option", default)]
    pub pi: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    /// `P_k` for the feedback iteration, `S_k` for the feedforward one.
    #[serde(with = "rowmajor")]
    pub value: Mat,
    /// `K_k` or `K_s^k`.
    #[serde(with = "rowmajor")]
    pub gain: Mat,
    #[serde(with = "rowmajor::option", default)]
    pub lambda: Option<Mat>,
    pub update_norm: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub entries: Vec<TraceEntry>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

fn closed_loop(dynamics: &SystemDynamics, k: &Mat) -> (Mat, Mat) {
    (
        &dynamics.a - &dynamics.b * k,
        &dynamics.c - &dynamics.d * k,
    )
}

/// Solves `AclᵀX + X·Acl + CclᵀX·Ccl + W = 0` by Kronecker vectorization.
///
/// Dense n²×n² LU, so O(n⁶): intended for the small state dimensions of
/// learning problems.
pub fn solve_generalized_lyapunov(acl: &Mat, ccl: &Mat, w: &Mat) -> Result<Mat> {
    let n = acl.nrows();
    if !acl.is_square() || ccl.shape() != (n, n) || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov operands {:?}, {:?}, {:?}",
            acl.shape(),
            ccl.shape(),
            w.shape()
        )));
    }
    let eye = Mat::identity(n, n);
    let at = acl.transpose();
    let ct = ccl.transpose();
    let op = linalg::kron(&eye, &at) + linalg::kron(&at, &eye) + linalg::kron(&ct, &ct);
    let cond = linalg::cond2(&op);
    if !(cond <= LYAPUNOV_MAX_COND) {
        return Err(Error::NonStabilizingClosedLoop { cond });
    }
    let rhs = -linalg::vec_col(w);
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonStabilizingClosedLoop { cond })?;
    Ok(linalg::symmetrize(&linalg::unvec(&x, n, n)))
}

/// Generalized Lyapunov operator `X ↦ AclX + XAclᵀ + CclXCclᵀ` in vectorized form.
fn ms_operator(acl: &Mat, ccl: &Mat) -> Mat {
    let n = acl.nrows();
    let eye = Mat::identity(n, n);
    linalg::kron(&eye, acl) + linalg::kron(acl, &eye) + linalg::kron(ccl, ccl)
}

/// True iff `K` mean-square stabilizes `[A, B; C, D]`.
pub fn is_ms_stabilizer(k: &Mat, dynamics: &SystemDynamics) -> bool {
    if k.shape() != (dynamics.m(), dynamics.n()) || !linalg::all_finite(k) {
        return false;
    }
    let (acl, ccl) = closed_loop(dynamics, k);
    linalg::spectral_abscissa(&ms_operator(&acl, &ccl)) < -linalg::EPS_HURWITZ
}

pub fn is_hurwitz(m: &Mat) -> bool {
    linalg::is_hurwitz(m)
}

/// `K(P) = (R + DᵀPD)⁻¹(BᵀP + DᵀPC)`.
pub fn gain_from_value(p: &Mat, dynamics: &SystemDynamics, cost: &CostSpec) -> Result<Mat> {
    let ups = model::upsilon(p, dynamics, cost);
    let rhs = dynamics.b.transpose() * p + dynamics.d.transpose() * p * &dynamics.c;
    linalg::solve(&ups, &rhs, "R + DᵀPD")
}

/// Residual of the stochastic algebraic Riccati equation at `P`.
pub fn sare_residual(p: &Mat, dynamics: &SystemDynamics, cost: &CostSpec) -> Result<Mat> {
    let (a, b, c, d) = (&dynamics.a, &dynamics.b, &dynamics.c, &dynamics.d);
    let ups = model::upsilon(p, dynamics, cost);
    let l = b.transpose() * p + d.transpose() * p * c;
    let quad = l.transpose() * linalg::solve(&ups, &l, "R + DᵀPD")?;
    Ok(linalg::symmetrize(
        &(a.transpose() * p + p * a + c.transpose() * p * c - quad + &cost.q),
    ))
}

/// Residual of `(A−BK)ᵀS + S(A−BK) − SBΥ⁻¹BᵀS − Q_Γ` with `Υ = R + fb.Λ`.
pub fn indefinite_are_residual(
    s: &Mat,
    fb: &FeedbackSolution,
    dynamics: &SystemDynamics,
    cost: &CostSpec,
) -> Result<Mat> {
    let acl = &dynamics.a - &dynamics.b * &fb.k;
    let ups = fb.upsilon(&cost.r);
    let bts = dynamics.b.transpose() * s;
    let quad = bts.transpose() * linalg::solve(&ups, &bts, "Υ")?;
    let qg = model::gamma_weight(cost).q_gamma;
    Ok(linalg::symmetrize(
        &(acl.transpose() * s + s * &acl - quad - qg),
    ))
}

/// Model-based policy iteration for `(P, K)` from a mean-square stabilizer `k0`.
///
/// Stops once `‖K_k − K_{k−1}‖_F ≤ xi` and the Riccati residual is below
/// [`RESIDUAL_TOL`] in spectral norm.
pub fn pi_feedback(
    dynamics: &SystemDynamics,
    cost: &CostSpec,
    k0: &Mat,
    xi: f64,
    max_iter: usize,
) -> Result<(FeedbackSolution, IterationTrace)> {
    dynamics.check()?;
    cost.check_against(dynamics)?;
    if k0.shape() != (dynamics.m(), dynamics.n()) {
        return Err(Error::Dimension(format!("K0 has shape {:?}", k0.shape())));
    }
    if !is_ms_stabilizer(k0, dynamics) {
        return Err(Error::NotStabilizer);
    }
    let mut trace = IterationTrace::default();
    let mut k_prev = k0.clone();
    for iter in 1..=max_iter {
        let (acl, ccl) = closed_loop(dynamics, &k_prev);
        let q_k = &cost.q + k_prev.transpose() * &cost.r * &k_prev;
        let p = solve_generalized_lyapunov(&acl, &ccl, &q_k)?;
        let k = gain_from_value(&p, dynamics, cost)?;
        let update = linalg::frobenius(&(&k - &k_prev));
        let residual = linalg::spectral_norm(&sare_residual(&p, dynamics, cost)?);
        let lambda = linalg::symmetrize(&(dynamics.d.transpose() * &p * &dynamics.d));
        trace.entries.push(TraceEntry {
            k: iter,
            value: p.clone(),
            gain: k.clone(),
            lambda: Some(lambda.clone()),
            update_norm: update,
            residual_norm: residual,
        });
        if update <= xi && residual <= RESIDUAL_TOL {
            let ktilde = (&cost.r + &lambda) * &k;
            return Ok((FeedbackSolution { p, k, lambda, ktilde }, trace));
        }
        k_prev = k;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: Box::new(trace),
    })
}

/// Model-based policy iteration for `(S, K_s)` started from `K_s⁰ = 0`,
/// conditioned on the feedback solution `fb` (its `K` and `Υ = R + Λ`).
pub fn pi_feedforward(
    dynamics: &SystemDynamics,
    cost: &CostSpec,
    fb: &FeedbackSolution,
    xi: f64,
    max_iter: usize,
) -> Result<(FeedforwardSolution, IterationTrace)> {
    dynamics.check()?;
    cost.check_against(dynamics)?;
    let (n, m) = (dynamics.n(), dynamics.m());
    if fb.k.shape() != (m, n) || fb.lambda.shape() != (m, m) {
        return Err(Error::Dimension("feedback solution does not match dynamics".into()));
    }
    let ups = fb.upsilon(&cost.r);
    let qg = model::gamma_weight(cost).q_gamma;
    let bt = dynamics.b.transpose();
    let zero_c = Mat::zeros(n, n);
    let mut trace = IterationTrace::default();
    let mut ks_prev = Mat::zeros(m, n);
    for iter in 1..=max_iter {
        let a_tilde = &dynamics.a - &dynamics.b * (&fb.k + &ks_prev);
        if !is_hurwitz(&a_tilde) {
            return Err(Error::NotHurwitz {
                iteration: iter - 1,
            });
        }
        let w = -&qg + ks_prev.transpose() * &ups * &ks_prev;
        let s = solve_generalized_lyapunov(&a_tilde, &zero_c, &w)?;
        let ks = linalg::solve(&ups, &(&bt * &s), "Υ")?;
        let update = linalg::frobenius(&(&ks - &ks_prev));
        let residual = linalg::spectral_norm(&indefinite_are_residual(&s, fb, dynamics, cost)?);
        trace.entries.push(TraceEntry {
            k: iter,
            value: s.clone(),
            gain: ks.clone(),
            lambda: None,
            update_norm: update,
            residual_norm: residual,
        });
        if update <= xi && residual <= RESIDUAL_TOL {
            let pi = Some(&fb.p + &s);
            return Ok((FeedforwardSolution { s, ks, pi }, trace));
        }
        ks_prev = ks;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: Box::new(trace),
    })
}

/// Heuristic spectral test of exact observability of `[A, C; Qroot]`.
///
/// Sweeps the eigenspaces of `X ↦ AX + XAᵀ + CXCᵀ` and reports `false` when
/// some symmetric unit-norm eigenmatrix is annihilated by `Qroot`
/// (`‖Qroot·X‖ ≤ 1e-8`). Finite sweep only, so it can be conservative.
pub fn exact_observability_diagnostic(dynamics: &SystemDynamics, qroot: &Mat) -> bool {
    let n = dynamics.n();
    if qroot.ncols() != n {
        return false;
    }
    let op = ms_operator(&dynamics.a, &dynamics.c);
    let dim = n * n;
    let scale = 1.0 + op.amax();
    let eigen = linalg::eigenvalues(&op);
    let opc: DMatrix<Complex64> = op.map(|v| Complex64::new(v, 0.0));
    let sel = linalg::kron(&Mat::identity(n, n), qroot).map(|v| Complex64::new(v, 0.0));

    let mut seen: Vec<Complex64> = Vec::new();
    for lambda in eigen {
        if seen.iter().any(|s| (s - lambda).norm() <= 1e-8 * scale) {
            continue;
        }
        seen.push(lambda);
        let shifted = &opc - DMatrix::<Complex64>::identity(dim, dim) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = match svd.v_t {
            Some(v) => v,
            None => continue,
        };
        let sv = &svd.singular_values;
        let smallest = sv.min();
        let tol = (1e-8 * scale).max(smallest * 10.0);
        // Symmetrized null-space vectors of the shifted operator.
        let mut cols: Vec<nalgebra::DVector<Complex64>> = Vec::new();
        for i in 0..sv.len() {
            if sv[i] > tol {
                continue;
            }
            let v: nalgebra::DVector<Complex64> = v_t.row(i).transpose().map(|z| z.conj());
            let xmat = DMatrix::from_column_slice(n, n, v.as_slice());
            let sym = (&xmat + xmat.transpose()) * Complex64::new(0.5, 0.0);
            if sym.norm() > 1e-8 {
                cols.push(nalgebra::DVector::from_column_slice(sym.as_slice()));
            }
        }
        if cols.is_empty() {
            continue;
        }
        let basis_raw = DMatrix::from_columns(&cols);
        let bsvd = basis_raw.svd(true, false);
        let u = match bsvd.u {
            Some(u) => u,
            None => continue,
        };
        let keep: Vec<usize> = (0..bsvd.singular_values.len())
            .filter(|&i| bsvd.singular_values[i] > 1e-8)
            .collect();
        if keep.is_empty() {
            continue;
        }
        let basis = DMatrix::from_columns(&keep.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
        let image = &sel * basis;
        let min_sv = image.singular_values().min();
        if min_sv <= 1e-8 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let x = solve_generalized_lyapunov(
            &(-Mat::identity(2, 2)),
            &Mat::zeros(2, 2),
            &Mat::identity(2, 2),
        )
        .unwrap();
        assert!((x - Mat::identity(2, 2) * 0.5).amax() < 1e-14);

        let x = solve_generalized_lyapunov(&scalar(-1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_singular_operator_is_rejected() {
        let err = solve_generalized_lyapunov(&Mat::zeros(2, 2), &Mat::zeros(2, 2), &Mat::identity(2, 2));
        assert!(matches!(err, Err(Error::NonStabilizingClosedLoop { .. })));
    }

    #[test]
    fn scalar_feedback_closed_form() {
        let dynamics =
            SystemDynamics::new(scalar(-1.0), scalar(1.0), scalar(0.0), scalar(0.0)).unwrap();
        let cost = CostSpec::new(scalar(1.0), scalar(1.0), scalar(0.0)).unwrap();
        let (sol, _) = pi_feedback(&dynamics, &cost, &scalar(0.0), 1e-12, 50).unwrap();
        let expected = 2f64.sqrt() - 1.0;
        assert!((sol.p[(0, 0)] - expected).abs() < 1e-12);
        assert!((sol.k[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn scalar_feedforward_with_vanishing_q_gamma() {
        // Γ = 2 gives Q_Γ = 2·1·2 − 4 = 0.
        let dynamics =
            SystemDynamics::new(scalar(-1.0), scalar(1.0), scalar(0.0), scalar(0.0)).unwrap();
        let cost = CostSpec::new(scalar(1.0), scalar(1.0), scalar(2.0)).unwrap();
        let (fb, _) = pi_feedback(&dynamics, &cost, &scalar(0.0), 1e-10, 50).unwrap();
        let (ff, trace) = pi_feedforward(&dynamics, &cost, &fb, 1e-10, 50).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(ff.s.amax() < 1e-14 && ff.ks.amax() < 1e-14);
    }

    #[test]
    fn stabilizer_trivial_cases() {
        let z = Mat::zeros(2, 2);
        let zb = Mat::zeros(2, 1);
        let k = Mat::zeros(1, 2);
        let stable = SystemDynamics::new(-Mat::identity(2, 2), zb.clone(), z.clone(), zb.clone()).unwrap();
        assert!(is_ms_stabilizer(&k, &stable));
        let unstable = SystemDynamics::new(Mat::identity(2, 2), zb.clone(), z, zb).unwrap();
        assert!(!is_ms_stabilizer(&k, &unstable));
        assert!(is_ms_stabilizer(&benchmark::k0(), &benchmark::dynamics()));
    }

    #[test]
    fn benchmark_closed_loop_is_hurwitz() {
        let m = Mat::from_row_slice(2, 2, &[-1.2995, 1.5971, -0.8975, 0.5044]);
        assert!(is_hurwitz(&m));
    }

    #[test]
    fn sare_residual_at_zero_is_q() {
        let dynamics = benchmark::dynamics();
        let cost = benchmark::cost();
        let res = sare_residual(&Mat::zeros(2, 2), &dynamics, &cost).unwrap();
        assert!((res - &cost.q).amax() < 1e-15);
    }

    #[test]
    fn indefinite_residual_vanishes_for_zero_gamma() {
        let dynamics = benchmark::dynamics();
        let mut cost = benchmark::cost();
        cost.gamma = Mat::zeros(2, 2);
        let (fb, _) = pi_feedback(&dynamics, &cost, &benchmark::k0(), 1e-10, 50).unwrap();
        let res = indefinite_are_residual(&Mat::zeros(2, 2), &fb, &dynamics, &cost).unwrap();
        assert_eq!(res, Mat::zeros(2, 2));
        let (ff, _) = pi_feedforward(&dynamics, &cost, &fb, 1e-10, 50).unwrap();
        assert!(ff.s.amax() < 1e-14 && ff.ks.amax() < 1e-14);
    }

    #[test]
    fn feedback_rejects_non_stabilizer() {
        let err = pi_feedback(
            &benchmark::dynamics(),
            &benchmark::cost(),
            &Mat::zeros(1, 2),
            1e-4,
            50,
        );
        assert!(matches!(err, Err(Error::NotStabilizer)));
    }

    #[test]
    fn observability_diagnostic_cases() {
        let dynamics = benchmark::dynamics();
        let qroot = benchmark::cost().q.map(f64::sqrt);
        assert!(exact_observability_diagnostic(&dynamics, &qroot));
        assert!(!exact_observability_diagnostic(&dynamics, &Mat::zeros(2, 2)));

        // C = 0: an unobservable mode of (A, F) must be detected.
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let det = SystemDynamics::new(a, Mat::zeros(2, 1), Mat::zeros(2, 2), Mat::zeros(2, 1)).unwrap();
        let f_blind = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!exact_observability_diagnostic(&det, &f_blind));
        let f_sees = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(exact_observability_diagnostic(&det, &f_sees));
    }
}
