//! Python bindings. Structured values (configs, reports, provenance) cross
//! the boundary as plain dicts via the `json` module; feature matrices are
//! lists of rows.

use expoloss::bounds::{self, BoundQuery, Lemma2Config};
use expoloss::data::{self, LabelKind};
use expoloss::optim::{self, TrainConfig};
use expoloss::transform::{self, DEFAULT_C};
use expoloss::{BaseLoss, LossSpec, TransformParams};
use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: expoloss::Error) -> PyErr {
    match e {
        expoloss::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_base(name: &str) -> PyResult<BaseLoss> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown loss '{name}'")))
}

fn params(e: f64, c: f64) -> PyResult<TransformParams> {
    TransformParams::new(e, c).map_err(err)
}

/// The odd power transform applied to a score.
#[pyfunction]
#[pyo3(signature = (yhat, e, c = DEFAULT_C))]
fn sigma(yhat: f64, e: f64, c: f64) -> PyResult<f64> {
    transform::sigma(yhat, &params(e, c)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (yhat, e, c = DEFAULT_C))]
fn sigma_deriv(yhat: f64, e: f64, c: f64) -> PyResult<f64> {
    transform::sigma_deriv(yhat, &params(e, c)?).map_err(err)
}

/// A base loss composed with the transform.
#[pyclass(name = "Loss", frozen)]
struct PyLoss(LossSpec);

#[pymethods]
impl PyLoss {
    #[new]
    #[pyo3(signature = (base, e = 1.0, c = DEFAULT_C))]
    fn new(base: &str, e: f64, c: f64) -> PyResult<Self> {
        Ok(PyLoss(LossSpec::new(parse_base(base)?, params(e, c)?)))
    }

    #[getter]
    fn base(&self) -> &'static str {
        self.0.base.name()
    }

    #[getter]
    fn e(&self) -> f64 {
        self.0.transform.e()
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.transform.c()
    }

    /// Returns `(value, gradient w.r.t. scores)`. Binary losses take one
    /// score and a label in {-1, +1}.
    fn eval(&self, scores: Vec<f64>, label: i32) -> PyResult<(f64, Vec<f64>)> {
        let ev = self.0.eval(&scores, label).map_err(err)?;
        Ok((ev.value, ev.grad_wrt_scores))
    }

    /// Small-weight Lipschitz constant of the risk for margins uniform on [-m, m].
    #[pyo3(signature = (m, points = 100_000))]
    fn lipschitz_small_uniform(&self, m: f64, points: usize) -> PyResult<f64> {
        bounds::lipschitz_small_uniform(&self.0, m, points).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Loss('{}', e={}, c={})",
            self.0.base.name(),
            self.0.transform.e(),
            self.0.transform.c()
        )
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    /// Labels in {-1, +1} give a binary set, anything else `0..K`.
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<i32>) -> PyResult<Self> {
        let rows = features.len();
        let cols = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("ragged feature rows"));
        }
        let x = Array2::from_shape_vec((rows, cols), features.concat())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let kind = if labels.iter().all(|&y| y == 1 || y == -1) {
            LabelKind::Binary
        } else {
            let k = labels.iter().copied().max().unwrap_or(0).max(0) as usize + 1;
            LabelKind::Multiclass { num_classes: k }
        };
        data::Dataset::new(x, labels, kind)
            .map(PyDataset)
            .map_err(err)
    }

    #[staticmethod]
    fn gaussians(n_per_class: usize, d: usize, separation: f64, seed: u64) -> PyResult<Self> {
        data::gen_gaussians(n_per_class, d, separation, seed)
            .map(PyDataset)
            .map_err(err)
    }

    #[staticmethod]
    fn outlier_gaussians(
        n_per_class: usize,
        d: usize,
        separation: f64,
        outlier_frac: f64,
        outlier_scale: f64,
        seed: u64,
    ) -> PyResult<Self> {
        data::gen_outlier_gaussians(
            n_per_class,
            d,
            separation,
            outlier_frac,
            outlier_scale,
            seed,
        )
        .map(PyDataset)
        .map_err(err)
    }

    #[staticmethod]
    fn load_idx(images: &str, labels: &str) -> PyResult<Self> {
        data::load_idx(images, labels).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        data::load_csv(path).map(PyDataset).map_err(err)
    }

    fn with_noise(&self, rate: f64, seed: u64) -> PyResult<Self> {
        data::inject_symmetric_noise(&self.0, rate, self.0.num_classes(), seed)
            .map(PyDataset)
            .map_err(err)
    }

    fn normalized(&self) -> Self {
        PyDataset(data::normalize_unit_ball(&self.0))
    }

    fn without_outliers(&self) -> Self {
        PyDataset(self.0.without_outliers())
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.0
            .features()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    #[getter]
    fn labels(&self) -> Vec<i32> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn clean_labels(&self) -> Option<Vec<i32>> {
        self.0.clean_labels().map(<[i32]>::to_vec)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn flipped_fraction(&self) -> f64 {
        self.0.flipped_fraction()
    }

    fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.0.provenance())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel(expoloss::model::Model);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        expoloss::model::Model::load_json(path)
            .map(PyModel)
            .map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save_json(path).map_err(err)
    }

    /// Raw scores for one feature vector.
    fn forward(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.forward(&features).map_err(err)
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<i32> {
        Ok(expoloss::model::predict_from_scores(
            &self.forward(features)?,
        ))
    }

    /// The checkpoint as a dict.
    fn checkpoint<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.to_checkpoint())
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }
}

/// Trains from a config dict; returns `(model, per-epoch metrics)`.
#[pyfunction]
fn train<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    train_set: &PyDataset,
    test_set: &PyDataset,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_py(config)?;
    let res = optim::train(&cfg, &train_set.0, &test_set.0).map_err(err)?;
    Ok((PyModel(res.model), to_py(py, &res.epochs)?))
}

/// `(loss, accuracy)` of a model on a dataset.
#[pyfunction]
fn evaluate(model: &PyModel, loss: &PyLoss, ds: &PyDataset) -> PyResult<(f64, f64)> {
    optim::evaluate(&model.0, &loss.0, &ds.0).map_err(err)
}

/// `ln C` for the radius-`m` ball covered by radius-`r` balls in `d` dimensions.
#[pyfunction]
fn log_covering_number_ball(m: f64, r: f64, d: usize) -> f64 {
    bounds::covering_number_ball(m, r, d)
}

#[pyfunction]
fn local_bound<'py>(py: Python<'py>, query: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let q: BoundQuery = from_py(query)?;
    to_py(py, &bounds::theorem2_confidence(&q).map_err(err)?)
}

#[pyfunction]
fn global_bound<'py>(py: Python<'py>, query: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let q: BoundQuery = from_py(query)?;
    to_py(py, &bounds::theorem3_confidence(&q).map_err(err)?)
}

/// Monte Carlo check of the two-point deviation bound with the default
/// logistic setup.
#[pyfunction]
#[pyo3(signature = (n, epsilon, rho, trials = 2000, seed = 0))]
fn deviation_check<'py>(
    py: Python<'py>,
    n: usize,
    epsilon: f64,
    rho: f64,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = Lemma2Config::logistic_default(n, epsilon, rho, trials, seed);
    to_py(py, &bounds::lemma2_mc_check(&cfg).map_err(err)?)
}

#[pymodule]
fn expoloss_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", expoloss::VERSION)?;
    m.add("DEFAULT_C", DEFAULT_C)?;
    m.add_class::<PyLoss>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sigma, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_deriv, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(log_covering_number_ball, m)?)?;
    m.add_function(wrap_pyfunction!(local_bound, m)?)?;
    m.add_function(wrap_pyfunction!(global_bound, m)?)?;
    m.add_function(wrap_pyfunction!(deviation_check, m)?)?;
    Ok(())
}
