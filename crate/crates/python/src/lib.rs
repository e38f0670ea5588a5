//! Python bindings: matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use nalgebra::DMatrix;
use ppfa_core::em::EmConfig;
use ppfa_core::model::{self, PpfaModel};
use ppfa_core::monitoring;
use ppfa_core::select::{self, SelectionGrid};
use ppfa_core::statespace::{self, ModelParams};
use ppfa_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ppfa, PpfaError, PyException);

fn to_py(err: Error) -> PyErr {
    PpfaError::new_err((err.category().as_str(), err.to_string()))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(to_py(Error::config("data", "matrix must be nonempty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(to_py(Error::config(
            "data",
            format!("row {i} has {} values, expected {m}", rows[i].len()),
        )));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

fn em_config(r: usize, s: usize, seed: u64, max_iterations: usize) -> EmConfig {
    EmConfig {
        r,
        s,
        seed,
        max_iterations,
        ..EmConfig::default()
    }
}

/// Draws `n` observations from a random stable model.
#[pyfunction]
#[pyo3(signature = (n, m, r, s, noise_var=0.25, seed=0))]
fn simulate(n: usize, m: usize, r: usize, s: usize, noise_var: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let params = ModelParams::random_stable(m, r, s, noise_var, seed).map_err(to_py)?;
    let sim = statespace::simulate(&params, n, seed.wrapping_add(1)).map_err(to_py)?;
    Ok(rows(&sim.observations))
}

/// Control limit and bandwidth at confidence `alpha`.
#[pyfunction]
fn kde_limit(values: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    monitoring::kde_limit(&values, alpha).map_err(to_py)
}

/// Hold-out selection; returns `(r, s, scoreboard_csv)`.
#[pyfunction]
#[pyo3(signature = (data, r_candidates=vec![1, 2, 3], s_candidates=vec![1, 2, 3], alpha=0.99, seed=0, max_iterations=100))]
fn select_order(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    r_candidates: Vec<usize>,
    s_candidates: Vec<usize>,
    alpha: f64,
    seed: u64,
    max_iterations: usize,
) -> PyResult<(usize, usize, String)> {
    let x = matrix(&data)?;
    let grid = SelectionGrid {
        r_candidates,
        s_candidates,
        seed,
        ..SelectionGrid::default()
    };
    let em = em_config(1, 1, seed, max_iterations);
    let sel = py
        .detach(|| select::select(&x, &grid, &em, alpha))
        .map_err(to_py)?;
    Ok((sel.r, sel.s, select::scoreboard_csv(&sel.scoreboard)))
}

#[pyclass(name = "Model", module = "ppfa", frozen)]
struct PyModel {
    inner: PpfaModel,
}

#[pymethods]
impl PyModel {
    /// Fits a model; returns `(model, trace_csv)`.
    #[staticmethod]
    #[pyo3(signature = (data, r=2, s=2, alpha=0.99, seed=0, max_iterations=100))]
    fn train(
        py: Python<'_>,
        data: Vec<Vec<f64>>,
        r: usize,
        s: usize,
        alpha: f64,
        seed: u64,
        max_iterations: usize,
    ) -> PyResult<(Self, String)> {
        let x = matrix(&data)?;
        let cfg = em_config(r, s, seed, max_iterations);
        let (inner, trace) = py.detach(|| model::train(&x, &cfg, alpha)).map_err(to_py)?;
        Ok((PyModel { inner }, trace.to_csv()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = PpfaModel::load(&path).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = PpfaModel::from_text(text).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.params.r()
    }

    #[getter]
    fn s(&self) -> usize {
        self.inner.params.s()
    }

    /// `{"T2": psi, "SPE": psi, "DI": psi, "alpha": alpha}`.
    #[getter]
    fn limits<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let l = &self.inner.limits;
        let d = PyDict::new(py);
        d.set_item("T2", l.psi_t2)?;
        d.set_item("SPE", l.psi_spe)?;
        d.set_item("DI", l.psi_di)?;
        d.set_item("alpha", l.alpha)?;
        Ok(d)
    }

    /// Scores raw rows; returns a dict of equal-length columns.
    fn score<'py>(&self, py: Python<'py>, data: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let x = matrix(&data)?;
        let report = py.detach(|| self.inner.score(&x)).map_err(to_py)?;
        let recs = &report.records;
        let d = PyDict::new(py);
        d.set_item("index", recs.iter().map(|r| r.index).collect::<Vec<_>>())?;
        d.set_item("T2", recs.iter().map(|r| r.stats.t2).collect::<Vec<_>>())?;
        d.set_item("SPE", recs.iter().map(|r| r.stats.spe).collect::<Vec<_>>())?;
        d.set_item("DI", recs.iter().map(|r| r.stats.di).collect::<Vec<_>>())?;
        d.set_item("flag_T2", recs.iter().map(|r| r.flag_t2).collect::<Vec<_>>())?;
        d.set_item("flag_SPE", recs.iter().map(|r| r.flag_spe).collect::<Vec<_>>())?;
        d.set_item("flag_DI", recs.iter().map(|r| r.flag_di).collect::<Vec<_>>())?;
        d.set_item("verdict", recs.iter().map(|r| r.verdict.as_str()).collect::<Vec<_>>())?;
        d.set_item("burn_in", recs.iter().map(|r| r.burn_in).collect::<Vec<_>>())?;
        Ok(d)
    }

    /// One-step-ahead predictions of the raw rows.
    fn predict(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&data)?;
        Ok(rows(&self.inner.predict_one_step(&x).map_err(to_py)?))
    }
}

#[pymodule]
fn ppfa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PpfaError", m.py().get_type::<PpfaError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kde_limit, m)?)?;
    m.add_function(wrap_pyfunction!(select_order, m)?)?;
    Ok(())
}
