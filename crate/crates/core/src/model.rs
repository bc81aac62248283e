//! Agent dynamics, social cost weights and standing-assumption checks.
//!
//! Each agent follows `dx = (A x + B u) dt + (C x + D u) dw` with a scalar
//! Brownian motion `w`. The social cost couples agents only through the
//! population average, weighted by `Γ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rowmajor, Mat};
use crate::riccati;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDynamics {
    #[serde(rename = "A", with = "rowmajor")]
    pub a: Mat,
    #[serde(rename = "B", with = "rowmajor")]
    pub b: Mat,
    #[serde(rename = "C", with = "rowmajor")]
    pub c: Mat,
    #[serde(rename = "D", with = "rowmajor")]
    pub d: Mat,
}

impl SystemDynamics {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let dynamics = Self { a, b, c, d };
        dynamics.check()?;
        Ok(dynamics)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("n and m must be at least 1".into()));
        }
        if self.a.shape() != (n, n) {
            return Err(Error::Dimension(format!("A is {:?}, expected square", self.a.shape())));
        }
        if self.b.shape() != (n, m) {
            return Err(Error::Dimension(format!("B is {:?}, expected ({n}, {m})", self.b.shape())));
        }
        if self.c.shape() != (n, n) {
            return Err(Error::Dimension(format!("C is {:?}, expected ({n}, {n})", self.c.shape())));
        }
        if self.d.shape() != (n, m) {
            return Err(Error::Dimension(format!("D is {:?}, expected ({n}, {m})", self.d.shape())));
        }
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            if !linalg::all_finite(mat) {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// True when both diffusion matrices vanish, i.e. the SDE is an ODE.
    pub fn is_deterministic(&self) -> bool {
        self.c.iter().chain(self.d.iter()).all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(rename = "Q", with = "rowmajor")]
    pub q: Mat,
    #[serde(rename = "R", with = "rowmajor")]
    pub r: Mat,
    #[serde(rename = "Gamma", with = "rowmajor")]
    pub gamma: Mat,
}

impl CostSpec {
    /// Builds a cost after checking shapes and symmetry. Definiteness is left
    /// to [`validate`] so that invalid weights can still be reported.
    pub fn new(q: Mat, r: Mat, gamma: Mat) -> Result<Self> {
        let cost = Self { q, r, gamma };
        cost.check_shapes()?;
        Ok(cost)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.q.nrows();
        if !self.q.is_square() || n == 0 {
            return Err(Error::Dimension("Q must be square and non-empty".into()));
        }
        if !self.r.is_square() || self.r.nrows() == 0 {
            return Err(Error::Dimension("R must be square and non-empty".into()));
        }
        if self.gamma.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Gamma is {:?}, expected ({n}, {n})",
                self.gamma.shape()
            )));
        }
        if !linalg::is_symmetric(&self.q, 1e-12 * (1.0 + self.q.amax())) {
            return Err(Error::Invalid("Q must be symmetric".into()));
        }
        if !linalg::is_symmetric(&self.r, 1e-12 * (1.0 + self.r.amax())) {
            return Err(Error::Invalid("R must be symmetric".into()));
        }
        Ok(())
    }

    pub fn check_against(&self, dynamics: &SystemDynamics) -> Result<()> {
        self.check_shapes()?;
        if self.q.nrows() != dynamics.n() || self.r.nrows() != dynamics.m() {
            return Err(Error::Dimension(format!(
                "cost weights sized for n={}, m={} but dynamics have n={}, m={}",
                self.q.nrows(),
                self.r.nrows(),
                dynamics.n(),
                dynamics.m()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedWeights {
    #[serde(rename = "QGamma", with = "rowmajor")]
    pub q_gamma: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub q_psd: bool,
    pub r_pd: bool,
    pub ms_stabilizer_ok: Option<bool>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.q_psd && self.r_pd && self.ms_stabilizer_ok.unwrap_or(true)
    }
}

/// `Q_Γ = ΓᵀQ + QΓ − ΓᵀQΓ`, symmetrized.
pub fn gamma_weight(cost: &CostSpec) -> DerivedWeights {
    let q = &cost.q;
    let g = &cost.gamma;
    let gt = g.transpose();
    let raw = &gt * q + q * g - &gt * q * g;
    DerivedWeights {
        q_gamma: linalg::symmetrize(&raw),
    }
}

/// `Υ = R + DᵀPD`, symmetrized.
pub fn upsilon(p: &Mat, dynamics: &SystemDynamics, cost: &CostSpec) -> Mat {
    let d = &dynamics.d;
    linalg::symmetrize(&(&cost.r + d.transpose() * p * d))
}

/// Checks Q ⪰ 0 and R ≻ 0, and mean-square stabilization by `k0` when given.
pub fn validate(
    dynamics: &SystemDynamics,
    cost: &CostSpec,
    k0: Option<&Mat>,
) -> Result<ValidationReport> {
    dynamics.check()?;
    cost.check_against(dynamics)?;
    let mut notes = Vec::new();

    let q_psd = linalg::is_psd(&cost.q);
    if !q_psd {
        notes.push(format!(
            "Q has minimum eigenvalue {:.3e} < -1e-10",
            linalg::min_sym_eigenvalue(&cost.q)
        ));
    }
    let r_pd = linalg::is_pd(&cost.r);
    if !r_pd {
        notes.push(format!(
            "R has minimum eigenvalue {:.3e}, not positive definite",
            linalg::min_sym_eigenvalue(&cost.r)
        ));
    }
    let ms_stabilizer_ok = match k0 {
        Some(k) => {
            if k.shape() != (dynamics.m(), dynamics.n()) {
                return Err(Error::Dimension(format!(
                    "K0 is {:?}, expected ({}, {})",
                    k.shape(),
                    dynamics.m(),
                    dynamics.n()
                )));
            }
            let ok = riccati::is_ms_stabilizer(k, dynamics);
            if !ok {
                notes.push("K0 is not a mean-square stabilizer".into());
            }
            Some(ok)
        }
        None => None,
    };
    Ok(ValidationReport {
        q_psd,
        r_pd,
        ms_stabilizer_ok,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;

    #[test]
    fn gamma_weight_trivial_cases() {
        let q = Mat::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let r = Mat::identity(1, 1);
        let zero = CostSpec::new(q.clone(), r.clone(), Mat::zeros(2, 2)).unwrap();
        assert_eq!(gamma_weight(&zero).q_gamma, Mat::zeros(2, 2));
        let ident = CostSpec::new(q.clone(), r, Mat::identity(2, 2)).unwrap();
        assert!((gamma_weight(&ident).q_gamma - q).amax() < 1e-15);
    }

    #[test]
    fn gamma_weight_benchmark_is_099_q() {
        let cost = benchmark::cost();
        let qg = gamma_weight(&cost).q_gamma;
        let expected = Mat::from_row_slice(2, 2, &[2.97, 0.0, 0.0, 1.98]);
        assert!((qg - expected).amax() < 1e-12);
    }

    #[test]
    fn gamma_weight_is_exactly_symmetric_and_reproducible() {
        let cost = CostSpec::new(
            Mat::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]),
            Mat::identity(1, 1),
            Mat::from_row_slice(3, 3, &[0.4, 0.1, -0.7, 0.2, 0.9, 0.3, 0.05, -0.6, 1.1]),
        )
        .unwrap();
        let a = gamma_weight(&cost).q_gamma;
        assert_eq!(a, a.transpose());
        assert_eq!(a, gamma_weight(&cost).q_gamma);
    }

    #[test]
    fn upsilon_reduces_to_r() {
        let dynamics = benchmark::dynamics();
        let cost = benchmark::cost();
        assert_eq!(upsilon(&Mat::zeros(2, 2), &dynamics, &cost), cost.r);
        let mut no_d = dynamics.clone();
        no_d.d = Mat::zeros(2, 1);
        let p = Mat::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 3.0]);
        assert_eq!(upsilon(&p, &no_d, &cost), cost.r);
    }

    #[test]
    fn validate_benchmark_model() {
        let report = validate(&benchmark::dynamics(), &benchmark::cost(), Some(&benchmark::k0())).unwrap();
        assert!(report.q_psd && report.r_pd);
        assert_eq!(report.ms_stabilizer_ok, Some(true));
        assert!(report.ok());
    }

    #[test]
    fn validate_flags_bad_weights() {
        let dynamics = benchmark::dynamics();
        let mut cost = benchmark::cost();
        cost.r = Mat::zeros(1, 1);
        assert!(!validate(&dynamics, &cost, None).unwrap().r_pd);
        let mut cost = benchmark::cost();
        cost.q = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(!validate(&dynamics, &cost, None).unwrap().q_psd);
    }

    #[test]
    fn validate_rejects_dimension_mismatch() {
        let dynamics = benchmark::dynamics();
        let cost = benchmark::cost();
        let bad_k = Mat::zeros(2, 2);
        assert!(matches!(
            validate(&dynamics, &cost, Some(&bad_k)),
            Err(Error::Dimension(_))
        ));
    }
}
