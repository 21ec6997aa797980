//! Python bindings: synthetic data, model fitting, conformal calibration and metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};
use serde_json::{Map, Value};

use softkin::config::{Overrides, RunConfig};
use softkin::conformal::{self, ConformalCalibrator, CoverageMode, PredictionInterval};
use softkin::dataset::{self as ds, Sample, SplitSizes, SynthConfig};
use softkin::metrics;
use softkin::models::{FittedModel, ModelDocument, ModelSpec, Regressor};
use softkin::{pipeline, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Fit(_) | Error::Calibration(_) | Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        return Ok(Value::Null);
    }
    if obj.is_instance_of::<PyBool>() {
        return Ok(Value::Bool(obj.extract()?));
    }
    if let Ok(i) = obj.extract::<i64>() {
        return Ok(Value::from(i));
    }
    if let Ok(f) = obj.extract::<f64>() {
        return Ok(Value::from(f));
    }
    if let Ok(s) = obj.extract::<String>() {
        return Ok(Value::String(s));
    }
    if let Ok(d) = obj.extract::<Bound<'_, PyDict>>() {
        return dict_to_map(&d).map(Value::Object);
    }
    Err(PyValueError::new_err(format!("unsupported parameter value {obj}")))
}

fn dict_to_map(d: &Bound<'_, PyDict>) -> PyResult<Map<String, Value>> {
    d.iter().map(|(k, v)| Ok((k.extract::<String>()?, to_value(&v)?))).collect()
}

/// Samples of commands `u` and positions `x`.
#[pyclass(module = "softkin_py", name = "Dataset")]
struct PyDataset {
    inner: ds::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> PyResult<Self> {
        if inputs.len() != outputs.len() {
            return Err(PyValueError::new_err("inputs and outputs differ in length"));
        }
        let n_in = inputs.first().map_or(0, Vec::len);
        let n_out = outputs.first().map_or(0, Vec::len);
        let samples = inputs.into_iter().zip(outputs).map(|(u, x)| Sample::new(u, x)).collect();
        let inner = ds::Dataset::from_samples(samples, n_in, n_out).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_csv(path: &str, n_inputs: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ds::load_csv(path, n_inputs).map_err(to_py)?,
        })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.inner.inputs()
    }

    #[getter]
    fn outputs(&self) -> Vec<Vec<f64>> {
        self.inner.outputs()
    }

    #[getter]
    fn input_names(&self) -> Vec<String> {
        self.inner.input_names().to_vec()
    }

    #[getter]
    fn output_names(&self) -> Vec<String> {
        self.inner.output_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, inputs={:?}, outputs={:?})",
            self.inner.len(),
            self.inner.input_names(),
            self.inner.output_names()
        )
    }
}

/// Synthetic constant-curvature data as a dict of the four splits.
#[pyfunction]
#[pyo3(signature = (seed=0, noise_std=0.5, n_train=800, n_calibration=500, n_test=500, n_extrapolation=500))]
fn generate_synthetic(
    py: Python<'_>,
    seed: u64,
    noise_std: f64,
    n_train: usize,
    n_calibration: usize,
    n_test: usize,
    n_extrapolation: usize,
) -> PyResult<Py<PyDict>> {
    let cfg = SynthConfig {
        seed,
        noise_std,
        sizes: SplitSizes {
            train: n_train,
            calibration: n_calibration,
            test: n_test,
            extrapolation: n_extrapolation,
        },
        ..Default::default()
    };
    let bundle = ds::generate_synthetic(&cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    for (name, d) in bundle.parts() {
        out.set_item(name, PyDataset { inner: d.clone() })?;
    }
    Ok(out.unbind())
}

/// A fitted forward-kinematics model.
#[pyclass(module = "softkin_py", name = "Model")]
struct PyModel {
    inner: FittedModel,
    input_names: Vec<String>,
    output_names: Vec<String>,
}

#[pymethods]
impl PyModel {
    /// Fits a model of `kind` ("linear", "lasso", "forest", "boosted"); extra
    /// keyword arguments are hyperparameters, e.g. `n_trees=100` or
    /// `loss={"type": "pinball", "tau": 0.9}`.
    #[staticmethod]
    #[pyo3(signature = (train, kind, standardize=false, id=None, **params))]
    fn fit(
        train: PyRef<'_, PyDataset>,
        kind: &str,
        standardize: bool,
        id: Option<String>,
        params: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut map = match params {
            Some(p) => dict_to_map(p)?,
            None => Map::new(),
        };
        map.insert("kind".into(), Value::String(kind.to_string()));
        let spec: ModelSpec =
            serde_json::from_value(Value::Object(map)).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = FittedModel::fit(id.unwrap_or_else(|| kind.to_string()), &spec, &train.inner, standardize)
            .map_err(to_py)?;
        Ok(Self {
            inner,
            input_names: train.inner.input_names().to_vec(),
            output_names: train.inner.output_names().to_vec(),
        })
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.predict_batch(&rows).map_err(to_py)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.spec.kind()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn to_json(&self) -> PyResult<String> {
        ModelDocument::new(self.inner.clone(), self.input_names.clone(), self.output_names.clone())
            .to_json()
            .map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc = ModelDocument::from_json(text).map_err(to_py)?;
        Ok(Self {
            inner: doc.model,
            input_names: doc.input_names,
            output_names: doc.output_names,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(id={:?}, kind={:?})", self.inner.id, self.inner.spec.kind())
    }
}

fn interval_tuple(iv: PredictionInterval) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (iv.lower, iv.center, iv.upper)
}

/// Split conformal calibrator for a fitted model.
#[pyclass(module = "softkin_py", name = "Calibrator")]
struct PyCalibrator {
    inner: ConformalCalibrator,
}

#[pymethods]
impl PyCalibrator {
    #[staticmethod]
    #[pyo3(signature = (model, calibration, alpha=0.1, mode="marginal"))]
    fn calibrate(model: PyRef<'_, PyModel>, calibration: PyRef<'_, PyDataset>, alpha: f64, mode: &str) -> PyResult<Self> {
        let mode = match mode {
            "marginal" => CoverageMode::Marginal,
            "bonferroni" => CoverageMode::Bonferroni,
            other => return Err(PyValueError::new_err(format!("unknown coverage mode {other:?}"))),
        };
        let inner =
            ConformalCalibrator::calibrate_with_mode(&model.inner, &calibration.inner, alpha, mode).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `(lower, center, upper)` for one command vector.
    fn predict_interval(&self, model: PyRef<'_, PyModel>, u: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.inner.predict_interval(&model.inner, &u).map(interval_tuple).map_err(to_py)
    }

    /// Coverage and mean Winkler score of the intervals on `data`.
    fn evaluate(&self, model: PyRef<'_, PyModel>, data: PyRef<'_, PyDataset>) -> PyResult<(f64, f64)> {
        let ivs = self.inner.predict_intervals(&model.inner, &data.inner).map_err(to_py)?;
        let m = metrics::IntervalMetrics::compute(&data.inner.outputs(), &ivs, self.inner.alpha()).map_err(to_py)?;
        Ok((m.coverage, m.mean_winkler))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn n_cal(&self) -> usize {
        self.inner.n_cal()
    }

    #[getter]
    fn quantiles(&self) -> Vec<f64> {
        self.inner.quantiles().to_vec()
    }
}

fn intervals_from(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>, alpha: f64) -> PyResult<Vec<PredictionInterval>> {
    if lower.len() != upper.len() {
        return Err(PyValueError::new_err("lower and upper differ in length"));
    }
    lower
        .into_iter()
        .zip(upper)
        .map(|(l, u)| {
            if l.len() != u.len() || l.iter().zip(&u).any(|(a, b)| a > b) {
                return Err(PyValueError::new_err("each lower bound must not exceed its upper bound"));
            }
            let center = l.iter().zip(&u).map(|(a, b)| a + (b - a) / 2.0).collect();
            Ok(PredictionInterval {
                lower: l,
                center,
                upper: u,
                alpha,
            })
        })
        .collect()
}

#[pyfunction]
fn winkler(y: f64, lower: f64, upper: f64, alpha: f64) -> PyResult<f64> {
    metrics::winkler(y, lower, upper, alpha).map_err(to_py)
}

#[pyfunction]
fn mean_winkler(truth: Vec<Vec<f64>>, lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>, alpha: f64) -> PyResult<f64> {
    let ivs = intervals_from(lower, upper, alpha)?;
    Ok(metrics::mean_winkler(&truth, &ivs, alpha).map_err(to_py)?.mean)
}

#[pyfunction]
fn coverage(truth: Vec<Vec<f64>>, lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> PyResult<f64> {
    let ivs = intervals_from(lower, upper, 0.5)?;
    Ok(metrics::coverage(&truth, &ivs).map_err(to_py)?.overall)
}

#[pyfunction]
fn rmse(truth: Vec<Vec<f64>>, pred: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    metrics::rmse(&truth, &pred).map_err(to_py)
}

#[pyfunction]
fn mae(truth: Vec<Vec<f64>>, pred: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    metrics::mae(&truth, &pred).map_err(to_py)
}

#[pyfunction]
fn r2(truth: Vec<Vec<f64>>, pred: Vec<Vec<f64>>) -> PyResult<Vec<Option<f64>>> {
    metrics::r2(&truth, &pred).map_err(to_py)
}

#[pyfunction]
fn conformal_quantile(scores: Vec<f64>, alpha: f64) -> PyResult<f64> {
    conformal::conformal_quantile(&scores, alpha).map_err(to_py)
}

#[pyfunction]
fn p_value(scores: Vec<f64>, score: f64) -> PyResult<f64> {
    conformal::p_value(&scores, score).map_err(to_py)
}

#[pyfunction]
fn ks_statistic(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    ds::ks_statistic(&a, &b).map_err(to_py)
}

/// Runs the whole workflow from a TOML config and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir, seed=None))]
fn run_pipeline(py: Python<'_>, config_toml: &str, out_dir: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config_toml)
        .and_then(|c| {
            c.resolve(&Overrides {
                seed,
                out_dir: Some(out_dir.into()),
                ..Default::default()
            })
        })
        .map_err(to_py)?;
    let report = py.detach(|| pipeline::run_all(&cfg)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn softkin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCalibrator>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(winkler, m)?)?;
    m.add_function(wrap_pyfunction!(mean_winkler, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(p_value, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
