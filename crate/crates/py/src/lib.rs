//! Python bindings for `wigner_ldp`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wigner_ldp::annealed::AnnealedModel;
use wigner_ldp::freeprob::{self, RateValue};
use wigner_ldp::laws::{self, EntryLaw, LawSpec};
use wigner_ldp::montecarlo::{self, EnsembleSummary, SymMatrix, TiltDirection, WignerEnsembleConfig};
use wigner_ldp::rate;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rate_value(v: RateValue) -> f64 {
    v.finite().unwrap_or(f64::INFINITY)
}

fn direction(tilt_dir: &str) -> PyResult<TiltDirection> {
    if tilt_dir == "uniform" {
        return Ok(TiltDirection::Uniform);
    }
    let bad = || PyValueError::new_err(format!("tilt_dir must be 'uniform' or 'loc:<v>,<r2>', got {tilt_dir:?}"));
    let (v, r2) = tilt_dir.strip_prefix("loc:").and_then(|r| r.split_once(',')).ok_or_else(bad)?;
    Ok(TiltDirection::Localized { v: v.trim().parse().map_err(|_| bad())?, r2: r2.trim().parse().map_err(|_| bad())? })
}

/// An entry law together with its annealed model, so repeated `F` and rate
/// evaluations share caches.
#[pyclass(name = "EntryLaw", module = "wigner_ldp_py")]
struct PyEntryLaw {
    model: AnnealedModel,
}

impl PyEntryLaw {
    fn law(&self) -> &EntryLaw {
        self.model.law()
    }
}

#[pymethods]
impl PyEntryLaw {
    /// `spec` is the inline form (`sparse_gaussian:p=0.5`) or the JSON form.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let spec: LawSpec = spec.parse().map_err(value_err)?;
        let law = spec.build().map_err(value_err)?;
        Ok(Self { model: AnnealedModel::new(law).map_err(runtime_err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.law().name().to_string()
    }

    #[getter]
    fn spec(&self) -> String {
        self.law().spec().to_string()
    }

    #[getter]
    fn a(&self) -> f64 {
        self.model.a()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.model.b()
    }

    #[getter]
    fn m_star(&self) -> Option<f64> {
        self.model.classification().constants.m_star
    }

    #[getter]
    fn classification(&self) -> String {
        self.model.classification().tag.to_string()
    }

    fn log_laplace(&self, x: f64) -> f64 {
        self.law().log_laplace(x)
    }

    fn psi(&self, x: f64) -> f64 {
        self.law().psi(x)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = wigner_ldp::numerics::rng_stream(seed, 0);
        (0..n).map(|_| self.law().sample(&mut rng)).collect()
    }

    /// `F(θ)` as a dict with keys theta, value, regime, alpha_opt, zeta_opt,
    /// validity.
    fn f_value<'py>(&self, py: Python<'py>, theta: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = self.model.f_value(theta).map_err(runtime_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("theta", p.theta)?;
        d.set_item("value", p.value)?;
        d.set_item("regime", p.regime.to_string())?;
        d.set_item("alpha_opt", p.alpha_opt)?;
        d.set_item("zeta_opt", p.zeta_opt)?;
        d.set_item("validity", p.validity)?;
        Ok(d)
    }

    fn theta_zero(&self) -> PyResult<Option<f64>> {
        self.model.theta_zero().map_err(runtime_err)
    }

    /// `(I, theta_star, validity)` at `x`; `I` is `inf` below 2.
    fn rate(&self, x: f64) -> PyResult<(f64, Option<f64>, bool)> {
        let p = rate::rate_point(&self.model, x).map_err(runtime_err)?;
        Ok((rate_value(p.value), p.theta_star, p.validity))
    }

    /// Rows `(x, I, I_GOE, theta_star, validity)` on an increasing grid.
    fn rate_curve(&self, xs: Vec<f64>) -> PyResult<Vec<(f64, f64, f64, Option<f64>, bool)>> {
        let c = rate::rate_curve(&self.model, &xs).map_err(runtime_err)?;
        Ok(c.points
            .iter()
            .map(|p| (p.x, rate_value(p.value), rate_value(p.i_goe), p.theta_star, p.validity))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("EntryLaw('{}')", self.law().spec())
    }
}

#[pyfunction]
fn builtin_laws() -> Vec<String> {
    laws::builtin_catalog().iter().map(|l| l.spec().to_string()).collect()
}

#[pyfunction]
fn i_goe(x: f64) -> f64 {
    rate_value(freeprob::i_goe(x))
}

#[pyfunction]
fn g_sigma(x: f64) -> PyResult<f64> {
    freeprob::g_sigma(x).map_err(value_err)
}

#[pyfunction]
fn k_sigma(z: f64) -> PyResult<f64> {
    freeprob::k_sigma(z).map_err(value_err)
}

fn sym_matrix(rows: Vec<Vec<f64>>) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(&rows).map_err(value_err)
}

/// Ascending eigenvalues of a symmetric matrix given as a list of rows.
#[pyfunction]
fn eigvalsh(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(montecarlo::eig_full(&sym_matrix(rows)?, false).map_err(runtime_err)?.values)
}

/// Largest eigenvalue and its unit eigenvector.
#[pyfunction]
fn eig_top(rows: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    montecarlo::eig_top(&sym_matrix(rows)?).map_err(runtime_err)
}

#[pyfunction]
fn semicircle_ks(eigenvalues: Vec<f64>) -> f64 {
    montecarlo::semicircle_ks(&eigenvalues)
}

/// Samples `n` x `n` Wigner matrices and returns `(records, summary)`, where
/// each record is `(sample, lambda_max, ks, overlap_sq)` and the summary is a
/// JSON string.
#[pyfunction]
#[pyo3(signature = (law, n, samples, seed=0, tilt_theta=None, tilt_dir="uniform", full_spectrum=false))]
fn simulate(
    law: &PyEntryLaw,
    n: usize,
    samples: usize,
    seed: u64,
    tilt_theta: Option<f64>,
    tilt_dir: &str,
    full_spectrum: bool,
) -> PyResult<(Vec<(u64, f64, Option<f64>, Option<f64>)>, String)> {
    let mut cfg = WignerEnsembleConfig::new(law.law().clone(), n, samples, seed);
    if let Some(t) = tilt_theta {
        cfg = cfg.with_tilt(t, direction(tilt_dir)?);
    }
    let records = montecarlo::simulate(&cfg, full_spectrum).map_err(runtime_err)?;
    let summary = serde_json::to_string(&EnsembleSummary::from_records(&cfg, &records)).map_err(runtime_err)?;
    Ok((records.iter().map(|r| (r.sample, r.lambda_max, r.ks, r.overlap_sq)).collect(), summary))
}

/// `(mean lambda_max, predicted, mean overlap_sq, predicted)` under a
/// uniform rank-one tilt.
#[pyfunction]
#[pyo3(signature = (law, n, theta, samples, seed=0))]
fn bbp_experiment(law: &PyEntryLaw, n: usize, theta: f64, samples: usize, seed: u64) -> PyResult<(f64, f64, f64, f64)> {
    let s = montecarlo::bbp_experiment(law.law(), n, theta, TiltDirection::Uniform, samples, seed).map_err(runtime_err)?;
    Ok((s.lambda_max.mean, s.predicted_lambda_max, s.overlap_sq.mean, s.predicted_overlap_sq))
}

#[pymodule]
fn wigner_ldp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEntryLaw>()?;
    m.add_function(wrap_pyfunction!(builtin_laws, m)?)?;
    m.add_function(wrap_pyfunction!(i_goe, m)?)?;
    m.add_function(wrap_pyfunction!(g_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(k_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(eigvalsh, m)?)?;
    m.add_function(wrap_pyfunction!(eig_top, m)?)?;
    m.add_function(wrap_pyfunction!(semicircle_ks, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bbp_experiment, m)?)?;
    Ok(())
}
