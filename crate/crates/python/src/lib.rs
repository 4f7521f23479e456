//! Python bindings for the `fsdopt` solver.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use fsdopt::distribution::{Objective, ScenarioMatrix, SortedReturns};
use fsdopt::dominance::{cdf_residual, quantile_residual, FeasibleBox, ReferenceProfile, Shift};
use fsdopt::harness::{self, Dataset, Problem, RunConfig};
use fsdopt::penalty::{self, Anchor};
use fsdopt::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => {
            PyOSError::new_err(err.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn json_of<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_value(py, &text)
}

/// Scenario returns with asset and row labels.
#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Build from rows of returns; labels default to `a1, a2, ...`.
    #[new]
    #[pyo3(signature = (rows, assets=None))]
    fn new(rows: Vec<Vec<f64>>, assets: Option<Vec<String>>) -> PyResult<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let labels = assets.unwrap_or_else(|| (1..=n).map(|j| format!("a{j}")).collect());
        let m = rows.len();
        let matrix = ScenarioMatrix::new(rows, labels).map_err(to_py)?;
        Ok(Self {
            inner: Dataset {
                matrix,
                row_labels: (1..=m).map(|i| i.to_string()).collect(),
                source: "python".into(),
            },
        })
    }

    #[getter]
    fn scenarios(&self) -> usize {
        self.inner.matrix.scenarios()
    }

    #[getter]
    fn assets(&self) -> usize {
        self.inner.matrix.assets()
    }

    #[getter]
    fn asset_labels(&self) -> Vec<String> {
        self.inner.matrix.asset_labels().to_vec()
    }

    #[getter]
    fn row_labels(&self) -> Vec<String> {
        self.inner.row_labels.clone()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.matrix.rows().map(<[f64]>::to_vec).collect()
    }

    /// Keep the given zero-based columns.
    fn select(&self, columns: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.select(&columns).map_err(to_py)?,
        })
    }

    fn portfolio_returns(&self, weights: Vec<f64>) -> PyResult<Vec<f64>> {
        fsdopt::distribution::portfolio_returns(&self.inner.matrix, &weights).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(scenarios={}, assets={}, source={:?})",
            self.inner.matrix.scenarios(),
            self.inner.matrix.assets(),
            self.inner.source
        )
    }
}

/// Step reference distribution the portfolio must dominate.
#[pyclass(name = "Reference", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyReference {
    inner: ReferenceProfile,
}

#[pymethods]
impl PyReference {
    /// Reference portfolio with every breakpoint moved left by `shift`.
    #[staticmethod]
    #[pyo3(signature = (dataset, weights, shift=0.0))]
    fn from_portfolio(dataset: &PyDataset, weights: Vec<f64>, shift: f64) -> PyResult<Self> {
        let inner = ReferenceProfile::from_portfolio(&dataset.inner.matrix, &weights, Shift::Uniform(shift))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Step distribution function from `(threshold, level)` pairs.
    #[staticmethod]
    fn from_steps(points: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: ReferenceProfile::from_steps(&points).map_err(to_py)?,
        })
    }

    fn cdf(&self, t: f64) -> f64 {
        self.inner.cdf().value(t)
    }

    fn quantile(&self, alpha: f64) -> f64 {
        self.inner.quantile().value(alpha)
    }

    fn jumps(&self) -> Vec<(f64, f64)> {
        self.inner
            .jump_thresholds()
            .iter()
            .copied()
            .zip(self.inner.jump_levels().iter().copied())
            .collect()
    }
}

fn sorted(dataset: &PyDataset, weights: &[f64]) -> PyResult<SortedReturns> {
    SortedReturns::of_portfolio(&dataset.inner.matrix, weights).map_err(to_py)
}

/// Mean, VaR at `level` and upper-tail AVaR from `level`.
#[pyfunction]
#[pyo3(signature = (dataset, weights, level=0.4))]
fn indicators<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    weights: Vec<f64>,
    level: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = sorted(dataset, &weights)?;
    let ind = harness::run::Indicators {
        level,
        mean: r.mean(),
        var: Objective::Var { level }.evaluate(&r),
        avar: Objective::avar_upper(level).evaluate(&r),
    };
    json_of(py, &ind)
}

/// Distribution-function residual `G`; feasible iff `<= 0`.
#[pyfunction]
fn g_residual(dataset: &PyDataset, weights: Vec<f64>, reference: &PyReference) -> PyResult<f64> {
    Ok(cdf_residual(&sorted(dataset, &weights)?, &reference.inner))
}

/// Quantile residual `H`; feasible iff `<= 0`.
#[pyfunction]
fn h_residual(dataset: &PyDataset, weights: Vec<f64>, reference: &PyReference) -> PyResult<f64> {
    Ok(quantile_residual(&sorted(dataset, &weights)?, &reference.inner))
}

/// Euclidean projection onto `{sum x <= 1, x >= lower}`.
#[pyfunction]
#[pyo3(signature = (x, lower=None))]
fn project_box(x: Vec<f64>, lower: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let bounds = match lower {
        Some(c) => FeasibleBox::new(c).map_err(to_py)?,
        None => FeasibleBox::long_only(x.len()),
    };
    penalty::project_box(&x, &bounds).map_err(to_py)
}

/// Pull `x` towards `anchor` until the dominance constraint holds.
///
/// `method` is `"bisection"` (distribution form) or `"analytic"` (quantile
/// form with a risk-free anchor). Returns `(point, lambda)`.
#[pyfunction]
#[pyo3(signature = (dataset, x, reference, anchor, method="bisection"))]
fn star_project(
    dataset: &PyDataset,
    x: Vec<f64>,
    reference: &PyReference,
    anchor: Vec<f64>,
    method: &str,
) -> PyResult<(Vec<f64>, f64)> {
    let s = &dataset.inner.matrix;
    let anchor = Anchor::new(s, anchor).map_err(to_py)?;
    let p = match method {
        "bisection" => penalty::star_project_g(
            s,
            &x,
            &reference.inner,
            &anchor,
            penalty::DEFAULT_LAMBDA_TOLERANCE,
            penalty::DEFAULT_MAX_BISECTIONS,
        ),
        "analytic" => penalty::star_project_h_analytic(s, &x, &reference.inner, &anchor),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
    .map_err(to_py)?;
    Ok((p.point, p.lambda))
}

/// A configured problem: data, reference, bounds, objective and penalty.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    config: RunConfig,
    problem: Problem,
    penalized: penalty::PenalizedObjective,
}

#[pymethods]
impl PyProblem {
    /// Load a config file or `preset:<name>`.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Self::from_config(RunConfig::load(spec).map_err(to_py)?)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::from_config(RunConfig::from_toml_str(text, &PathBuf::from("<python>")).map_err(to_py)?)
    }

    #[getter]
    fn name(&self) -> String {
        self.config.name.clone()
    }

    #[getter]
    fn dataset(&self) -> PyDataset {
        PyDataset {
            inner: self.problem.dataset.clone(),
        }
    }

    #[getter]
    fn reference(&self) -> PyReference {
        PyReference {
            inner: self.problem.reference.clone(),
        }
    }

    /// Penalized objective (to maximize) at a raw point.
    fn penalized_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.penalized.value(&x))
    }

    /// Feasible candidate associated with a raw point.
    fn recover(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(self.penalized.recover(&x))
    }

    /// Residuals, budget slack and feasibility of a portfolio.
    fn assess<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let a = self.problem.assess(&x).map_err(to_py)?;
        json_of(py, &a)
    }

    /// Solve and return the report as a dict.
    #[pyo3(signature = (seed=None, threads=None, timing=false))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        seed: Option<u64>,
        threads: Option<usize>,
        timing: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut cfg = self.config.clone();
        cfg.output = Default::default();
        cfg.output.include_timing = timing;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        if threads.is_some() {
            cfg.solver.threads = threads;
        }
        let report = py.detach(|| harness::run(&cfg)).map_err(to_py)?;
        json_value(py, &report.to_json().map_err(to_py)?)
    }
}

impl PyProblem {
    fn from_config(config: RunConfig) -> PyResult<Self> {
        let problem = config.problem().map_err(to_py)?;
        let penalized = problem.penalized().map_err(to_py)?;
        Ok(Self {
            config,
            problem,
            penalized,
        })
    }

    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.penalized.dim() {
            return Err(to_py(Error::DimensionMismatch {
                expected: self.penalized.dim(),
                got: x.len(),
            }));
        }
        Ok(())
    }
}

/// The bundled annual-return table.
#[pyfunction]
fn appendix() -> PyDataset {
    PyDataset {
        inner: harness::appendix(),
    }
}

#[pyfunction]
fn load_csv(path: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: harness::load_csv(&path).map_err(to_py)?,
    })
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    harness::presets::names()
}

#[pymodule]
fn fsdopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReference>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(appendix, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(indicators, m)?)?;
    m.add_function(wrap_pyfunction!(g_residual, m)?)?;
    m.add_function(wrap_pyfunction!(h_residual, m)?)?;
    m.add_function(wrap_pyfunction!(project_box, m)?)?;
    m.add_function(wrap_pyfunction!(star_project, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    Ok(())
}
