//! Python bindings. Matrices cross the boundary as lists of rows.

use mflqg::features;
use mflqg::linalg::rowmajor::{from_rows, to_rows};
use mflqg::linalg::{Mat, Vector};
use mflqg::meanfield;
use mflqg::model::{self, CostSpec, SystemDynamics};
use mflqg::pipeline::{self, ExperimentConfig, RunOptions};
use mflqg::riccati::{self, FeedbackSolution};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn to_py(err: mflqg::Error) -> PyErr {
    if err.is_validation() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn mat(rows: Rows, name: &str) -> PyResult<Mat> {
    from_rows(&rows).map_err(|e| PyValueError::new_err(format!("{name}: {e}")))
}

/// Agent dynamics `dx = (Ax + Bu)dt + (Cx + Du)dw`.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: SystemDynamics,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (a, b, c, d))]
    fn new(a: Rows, b: Rows, c: Rows, d: Rows) -> PyResult<Self> {
        let inner = SystemDynamics::new(mat(a, "A")?, mat(b, "B")?, mat(c, "C")?, mat(d, "D")?)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// The two-state, single-input benchmark model.
    #[staticmethod]
    fn benchmark() -> Self {
        Self {
            inner: mflqg::benchmark::dynamics(),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter(A)]
    fn a(&self) -> Rows {
        to_rows(&self.inner.a)
    }

    #[getter(B)]
    fn b(&self) -> Rows {
        to_rows(&self.inner.b)
    }

    #[getter(C)]
    fn c(&self) -> Rows {
        to_rows(&self.inner.c)
    }

    #[getter(D)]
    fn d(&self) -> Rows {
        to_rows(&self.inner.d)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn is_ms_stabilizer(&self, k: Rows) -> PyResult<bool> {
        Ok(riccati::is_ms_stabilizer(&mat(k, "K")?, &self.inner))
    }

    fn __repr__(&self) -> String {
        format!("Model(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

/// Weights `Q`, `R` and the coupling matrix `Γ`.
#[pyclass(name = "Cost", frozen)]
struct PyCost {
    inner: CostSpec,
}

#[pymethods]
impl PyCost {
    #[new]
    fn new(q: Rows, r: Rows, gamma: Rows) -> PyResult<Self> {
        let inner = CostSpec::new(mat(q, "Q")?, mat(r, "R")?, mat(gamma, "Gamma")?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn benchmark() -> Self {
        Self {
            inner: mflqg::benchmark::cost(),
        }
    }

    /// `Q_Γ = ΓᵀQ + QΓ − ΓᵀQΓ`.
    fn q_gamma(&self) -> Rows {
        to_rows(&model::gamma_weight(&self.inner).q_gamma)
    }

    fn __repr__(&self) -> String {
        format!("Cost(n={}, m={})", self.inner.q.nrows(), self.inner.r.nrows())
    }
}

/// Solves `AclᵀX + X·Acl + CclᵀX·Ccl + W = 0`.
#[pyfunction]
fn lyapunov(acl: Rows, ccl: Rows, w: Rows) -> PyResult<Rows> {
    let x = riccati::solve_generalized_lyapunov(&mat(acl, "Acl")?, &mat(ccl, "Ccl")?, &mat(w, "W")?)
        .map_err(to_py)?;
    Ok(to_rows(&x))
}

/// Model-based policy iteration for the stochastic Riccati equation.
#[pyfunction]
#[pyo3(signature = (model, cost, k0, xi = 1e-10, max_iter = 50))]
fn pi_feedback<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    cost: PyRef<'_, PyCost>,
    k0: Rows,
    xi: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (fb, trace) =
        riccati::pi_feedback(&model.inner, &cost.inner, &mat(k0, "K0")?, xi, max_iter).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("P", to_rows(&fb.p))?;
    out.set_item("K", to_rows(&fb.k))?;
    out.set_item("Lambda", to_rows(&fb.lambda))?;
    out.set_item("iterations", trace.len())?;
    Ok(out)
}

/// Model-based policy iteration for `(S, K_s)` given a feedback gain and `Λ = DᵀPD`.
#[pyfunction]
#[pyo3(signature = (model, cost, k, lambda_, p = None, xi = 1e-10, max_iter = 50))]
#[allow(clippy::too_many_arguments)]
fn pi_feedforward<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    cost: PyRef<'_, PyCost>,
    k: Rows,
    lambda_: Rows,
    p: Option<Rows>,
    xi: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut fb = FeedbackSolution::from_gain(mat(k, "K")?, mat(lambda_, "Lambda")?, &cost.inner.r);
    if let Some(p) = p {
        fb.p = mat(p, "P")?;
    }
    let (ff, trace) = riccati::pi_feedforward(&model.inner, &cost.inner, &fb, xi, max_iter).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("S", to_rows(&ff.s))?;
    out.set_item("Ks", to_rows(&ff.ks))?;
    out.set_item("iterations", trace.len())?;
    Ok(out)
}

#[pyfunction]
fn sare_residual(p: Rows, model: PyRef<'_, PyModel>, cost: PyRef<'_, PyCost>) -> PyResult<Rows> {
    let r = riccati::sare_residual(&mat(p, "P")?, &model.inner, &cost.inner).map_err(to_py)?;
    Ok(to_rows(&r))
}

#[pyfunction]
fn is_hurwitz(m: Rows) -> PyResult<bool> {
    Ok(riccati::is_hurwitz(&mat(m, "M")?))
}

#[pyfunction]
fn expm(m: Rows) -> PyResult<Rows> {
    let m = mat(m, "M")?;
    if !m.is_square() {
        return Err(PyValueError::new_err("M must be square"));
    }
    Ok(to_rows(&mflqg::matrix_exponential(&m)))
}

#[pyfunction]
fn svec(p: Rows) -> PyResult<Vec<f64>> {
    let p = mat(p, "P")?;
    if !p.is_square() {
        return Err(PyValueError::new_err("P must be square"));
    }
    Ok(features::svec(&p).as_slice().to_vec())
}

#[pyfunction]
fn smat(v: Vec<f64>) -> PyResult<Rows> {
    Ok(to_rows(&features::smat(&Vector::from_vec(v)).map_err(to_py)?))
}

#[pyfunction]
fn quad_features(x: Vec<f64>) -> Vec<f64> {
    features::quad_features(&x).as_slice().to_vec()
}

/// `B̂ = (Υ K_s S⁻¹)ᵀ`.
#[pyfunction]
fn identify_b(s: Rows, ks: Rows, upsilon: Rows) -> PyResult<Rows> {
    let b = meanfield::identify_b(&mat(s, "S")?, &mat(ks, "Ks")?, &mat(upsilon, "Upsilon")?).map_err(to_py)?;
    Ok(to_rows(&b))
}

/// Benchmark experiment configuration as TOML text.
#[pyfunction]
fn benchmark_config() -> PyResult<String> {
    pipeline::benchmark_config().to_toml().map_err(to_py)
}

/// Checks a TOML configuration; returns the validation report as a dict.
#[pyfunction]
fn validate_config<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let report = pipeline::validate_config(&cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("ok", report.ok())?;
    out.set_item("q_psd", report.q_psd)?;
    out.set_item("r_pd", report.r_pd)?;
    out.set_item("ms_stabilizer_ok", report.ms_stabilizer_ok)?;
    out.set_item("notes", report.notes)?;
    Ok(out)
}

/// Runs the design procedure on a TOML configuration and returns the run
/// report as JSON. `mode` is `"gains"`, `"meanfield"` or `"full"`.
#[pyfunction]
#[pyo3(signature = (config, mode = "full"))]
fn run_experiment(py: Python<'_>, config: &str, mode: &str) -> PyResult<String> {
    let options = match mode {
        "gains" => RunOptions::GAINS,
        "meanfield" => RunOptions::MEANFIELD,
        "full" => RunOptions::FULL,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let report = py
        .detach(|| pipeline::run_experiment(&cfg, options))
        .map(|(report, _)| report)
        .map_err(|(_, e)| to_py(e))?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "mflqg")]
fn mflqg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyCost>()?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(pi_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(pi_feedforward, m)?)?;
    m.add_function(wrap_pyfunction!(sare_residual, m)?)?;
    m.add_function(wrap_pyfunction!(is_hurwitz, m)?)?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(svec, m)?)?;
    m.add_function(wrap_pyfunction!(smat, m)?)?;
    m.add_function(wrap_pyfunction!(quad_features, m)?)?;
    m.add_function(wrap_pyfunction!(identify_b, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
