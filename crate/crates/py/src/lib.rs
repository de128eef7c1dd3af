//! Python bindings: models, exam sets, training, evaluation and ensembles.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use retinn::dataio::{self, PairedExam, SynthConfig};
use retinn::ensemble::{Ensemble as CoreEnsemble, EnsembleSpec};
use retinn::error::{Error, ErrorCategory};
use retinn::evalkit::{self, SectorMap};
use retinn::models::{Architecture, ModelVariant, PassSchedule};
use retinn::objective::{self, LossHyper, VfCoordinates};
use retinn::tensor::AdamConfig;
use retinn::trainer::{self, Registry, TrainConfig};
use retinn::checkpoint;

create_exception!(retinervenet, RetiNerveNetError, PyValueError);
create_exception!(retinervenet, ConfigError, RetiNerveNetError);
create_exception!(retinervenet, DataError, RetiNerveNetError);
create_exception!(retinervenet, TrainingError, RetiNerveNetError);
create_exception!(retinervenet, InferenceError, RetiNerveNetError);
create_exception!(retinervenet, UsageError, RetiNerveNetError);

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Config => ConfigError::new_err(msg),
        ErrorCategory::Data => DataError::new_err(msg),
        ErrorCategory::Training => TrainingError::new_err(msg),
        ErrorCategory::Inference => InferenceError::new_err(msg),
        ErrorCategory::Usage => UsageError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for retinn::error::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn architecture(name: &str) -> PyResult<Architecture> {
    Ok(match name {
        "reference" => Architecture::reference_retinervenet(),
        "compact" => Architecture::compact_retinervenet(),
        "linear" => Architecture::Linear,
        "fully-connected" => Architecture::fully_connected(),
        "vanilla-conv" => Architecture::reference_vanilla_conv(),
        other => {
            return Err(ConfigError::new_err(format!(
                "unknown architecture `{other}` (reference, compact, linear, fully-connected, vanilla-conv)"
            )))
        }
    })
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A trained or freshly initialized network.
#[pyclass(module = "retinervenet", skip_from_py_object)]
#[derive(Clone)]
pub struct Model {
    inner: ModelVariant,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (architecture = "reference", seed = 1))]
    fn new(architecture: &str, seed: u64) -> PyResult<Self> {
        let arch = self::architecture(architecture)?;
        let inner = ModelVariant::build(arch, PassSchedule::standard(), seed).py_err()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).py_err()?,
        })
    }

    /// Writes a checkpoint and returns its SHA-256.
    fn save(&self, path: PathBuf) -> PyResult<String> {
        checkpoint::save(&self.inner, &path).py_err()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn hyper(&self) -> (f64, f64, f64) {
        let h = self.inner.hyper;
        (h.alpha, h.beta, h.gamma)
    }

    /// Returns `(vf, md)`: 52 total-deviation values and mean deviation.
    fn predict(&self, rnfl: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        let p = self.inner.predict(&rnfl).py_err()?;
        Ok((p.vf, p.md))
    }

    fn evaluate<'py>(&self, py: Python<'py>, exams: &Exams) -> PyResult<Bound<'py, PyAny>> {
        let report = evalkit::evaluate(&self.inner, &exams.inner, &SectorMap::standard()).py_err()?;
        let text = serde_json::to_string(&report).map_err(|e| err(e.into()))?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        let (a, b, g) = self.hyper();
        format!(
            "Model({:?}, params={}, alpha={a}, beta={b}, gamma={g})",
            self.inner.kind(),
            self.inner.param_count()
        )
    }
}

/// An ordered set of paired OCT/visual-field exams.
#[pyclass(module = "retinervenet", skip_from_py_object)]
#[derive(Clone)]
pub struct Exams {
    inner: Vec<PairedExam>,
}

#[pymethods]
impl Exams {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataio::parse_exams(&path).py_err()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, mix = [0.70, 0.15, 0.10, 0.05], noise = true, unreliable_fraction = 0.0))]
    fn synthesize(n: usize, seed: u64, mix: [f64; 4], noise: bool, unreliable_fraction: f64) -> PyResult<Self> {
        let cfg = SynthConfig {
            n,
            seed,
            mix,
            noise,
            unreliable_fraction,
        };
        Ok(Self {
            inner: dataio::synth_generate(&cfg).py_err()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataio::write_exams(&path, &self.inner).py_err()
    }

    /// Drops exams failing a reliability rule; returns the number removed.
    fn filter(&mut self) -> usize {
        let (kept, rejected) = dataio::reliability_filter(std::mem::take(&mut self.inner));
        self.inner = kept;
        rejected.len()
    }

    /// Patient-level split into `(train, val, test)`.
    #[pyo3(signature = (seed, fractions = [0.6, 0.2, 0.2]))]
    fn split(&self, seed: u64, fractions: [f64; 3]) -> PyResult<(Exams, Exams, Exams)> {
        let s = dataio::split_by_patient(&self.inner, fractions, seed).py_err()?;
        Ok((Exams { inner: s.train }, Exams { inner: s.val }, Exams { inner: s.test }))
    }

    #[getter]
    fn rnfl(&self) -> Vec<Vec<f64>> {
        self.inner.iter().map(|e| e.rnfl.clone()).collect()
    }

    #[getter]
    fn td(&self) -> Vec<Vec<f64>> {
        self.inner.iter().map(|e| e.td.clone()).collect()
    }

    #[getter]
    fn md(&self) -> Vec<f64> {
        self.inner.iter().map(|e| e.md).collect()
    }

    #[getter]
    fn patients(&self) -> Vec<String> {
        self.inner.iter().map(|e| e.patient_id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Trains one run per seed and returns the model with the best validation loss.
#[pyfunction]
#[pyo3(signature = (
    train_set, val_set, architecture = "reference", alpha = 0.0, beta = 0.0, gamma = 5.0,
    max_epochs = 2000, patience = 50, batch_size = 256, learning_rate = 1e-3, seeds = vec![1]
))]
#[allow(clippy::too_many_arguments)]
fn train(
    train_set: &Exams,
    val_set: &Exams,
    architecture: &str,
    alpha: f64,
    beta: f64,
    gamma: f64,
    max_epochs: usize,
    patience: usize,
    batch_size: usize,
    learning_rate: f64,
    seeds: Vec<u64>,
) -> PyResult<Model> {
    let arch = self::architecture(architecture)?;
    let cfg = TrainConfig {
        hyper: LossHyper::new(alpha, beta, gamma).py_err()?,
        max_epochs,
        patience,
        batch_size,
        seeds,
        adam: AdamConfig {
            lr: learning_rate,
            ..Default::default()
        },
        ..Default::default()
    };
    let (run, _) =
        trainer::train_variant(&arch, &PassSchedule::standard(), &train_set.inner, &val_set.inner, &cfg).py_err()?;
    Ok(Model { inner: run.model })
}

/// Router plus three disease-group experts loaded from a registry directory.
#[pyclass(module = "retinervenet")]
pub struct Ensemble {
    inner: CoreEnsemble,
}

#[pymethods]
impl Ensemble {
    /// Uses `spec` if given, otherwise selects from the registry's metrics.
    #[staticmethod]
    #[pyo3(signature = (registry_dir, spec = None))]
    fn load(registry_dir: PathBuf, spec: Option<PathBuf>) -> PyResult<Self> {
        let registry = Registry::load(&registry_dir).py_err()?;
        let spec = match spec {
            Some(p) => EnsembleSpec::load(&p).py_err()?,
            None => EnsembleSpec::build(&registry.entries).py_err()?,
        };
        Ok(Self {
            inner: CoreEnsemble::from_registry(spec, &registry).py_err()?,
        })
    }

    #[getter]
    fn router(&self) -> String {
        self.inner.spec.router.clone()
    }

    #[getter]
    fn experts(&self) -> (String, String, String) {
        let e = &self.inner.spec.experts;
        (e.early.clone(), e.moderate.clone(), e.advanced.clone())
    }

    /// Returns `(group, vf, md)` with the group chosen by the router.
    fn predict(&self, rnfl: Vec<f64>) -> PyResult<(String, Vec<f64>, f64)> {
        let (g, p) = self.inner.predict_routed(&rnfl).py_err()?;
        Ok((g.as_str().to_string(), p.vf, p.md))
    }

    fn evaluate<'py>(&self, py: Python<'py>, exams: &Exams) -> PyResult<Bound<'py, PyAny>> {
        let report = evalkit::evaluate(&self.inner, &exams.inner, &SectorMap::standard()).py_err()?;
        let text = serde_json::to_string(&report).map_err(|e| err(e.into()))?;
        json_to_py(py, &text)
    }
}

/// Per-exam weights λ for the given MD values.
#[pyfunction]
fn sample_weights(md: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    objective::sample_weights(&md, alpha).py_err()
}

/// Per-location weights ρ over the 52 test points.
#[pyfunction]
fn location_weights(gamma: f64) -> PyResult<Vec<f64>> {
    objective::location_weights(&VfCoordinates::standard(), gamma).py_err()
}

#[pyfunction]
fn disease_group(md: f64) -> PyResult<String> {
    Ok(dataio::assign_group(md).py_err()?.as_str().to_string())
}

#[pymodule]
fn retinervenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Model>()?;
    m.add_class::<Exams>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sample_weights, m)?)?;
    m.add_function(wrap_pyfunction!(location_weights, m)?)?;
    m.add_function(wrap_pyfunction!(disease_group, m)?)?;
    m.add("RetiNerveNetError", py.get_type::<RetiNerveNetError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("TrainingError", py.get_type::<TrainingError>())?;
    m.add("InferenceError", py.get_type::<InferenceError>())?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    Ok(())
}
