//! Python bindings: model construction, embeddings, scoring and the audio
//! helpers, on plain lists of floats.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fdn_core::audio::{self, CropPolicy, Waveform};
use fdn_core::cli::is_validation_error;
use fdn_core::eval::{self, ScoreSet};
use fdn_core::model::{self, checkpoint, FdnModel, Variant};
use fdn_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e if is_validation_error(&e) => PyValueError::new_err(e.to_string()),
        Error::Wav(_)
        | Error::ShapeMismatch { .. }
        | Error::InvalidShape { .. }
        | Error::ZeroVector => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Architecture hyperparameters.
#[pyclass(name = "ModelConfig", module = "fdn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (variant = "light", tiny = false, alpha = None, speakers = None))]
    fn new(
        variant: &str,
        tiny: bool,
        alpha: Option<usize>,
        speakers: Option<usize>,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(to_py)?;
        let mut inner = if tiny {
            model::ModelConfig::tiny(variant)
        } else {
            model::ModelConfig::new(variant)
        };
        if let Some(a) = alpha {
            inner.alpha = a;
        }
        if let Some(s) = speakers {
            inner.num_speakers = s;
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Sets one field by name, using the configuration-file spelling.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        if !next.set(key, value).map_err(to_py)? {
            return Err(PyValueError::new_err(format!(
                "unknown configuration key '{key}'"
            )));
        }
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn to_dict(&self) -> Vec<(String, String)> {
        self.inner
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn alpha(&self) -> usize {
        self.inner.alpha
    }

    #[getter]
    fn num_speakers(&self) -> usize {
        self.inner.num_speakers
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_width()
    }

    #[getter]
    fn crop_samples(&self) -> usize {
        self.inner.crop_samples
    }

    #[getter]
    fn min_samples(&self) -> usize {
        self.inner.min_samples()
    }

    fn __repr__(&self) -> String {
        let fields: Vec<String> = self
            .inner
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("ModelConfig({})", fields.join(", "))
    }
}

/// An FDN-Light or FDN-Heavy network.
#[pyclass(name = "Model", module = "fdn_py")]
struct PyModel {
    inner: FdnModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: FdnModel::new(config.inner.clone(), seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.config.clone(),
        }
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Unit-norm speaker embedding of a 16 kHz utterance.
    fn embed(&self, py: Python<'_>, samples: Vec<f64>) -> PyResult<Vec<f64>> {
        let wave = Waveform::at_default_rate(samples);
        py.detach(|| eval::extract_embedding(&self.inner, &wave))
            .map_err(to_py)
    }

    /// Raw embedding and class logits for an input of a valid network length.
    fn infer(&self, py: Python<'_>, samples: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (emb, logits) = py.detach(|| self.inner.infer(&samples)).map_err(to_py)?;
        Ok((emb.into_data(), logits.into_data()))
    }
}

#[pyfunction]
fn count_parameters(config: &PyModelConfig) -> usize {
    model::count_parameters(&config.inner)
}

/// Returns `(eer, threshold)`; labels are true for target trials.
#[pyfunction]
fn compute_eer(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    let set = ScoreSet::new(scores, labels).map_err(to_py)?;
    eval::compute_eer(&set).map_err(to_py)
}

#[pyfunction]
fn cosine_score(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    eval::cosine_score(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (samples, coeff = audio::PRE_EMPHASIS))]
fn pre_emphasis(samples: Vec<f64>, coeff: f64) -> Vec<f64> {
    audio::pre_emphasis(&Waveform::at_default_rate(samples), coeff).samples
}

#[pyfunction]
fn speed_perturb(samples: Vec<f64>, factor: f64) -> PyResult<Vec<f64>> {
    Ok(
        audio::speed_perturb(&Waveform::at_default_rate(samples), factor)
            .map_err(to_py)?
            .samples,
    )
}

/// Center crop (or seeded random crop when `seed` is given); shorter inputs
/// repeat cyclically.
#[pyfunction]
#[pyo3(signature = (samples, n, seed = None))]
fn crop_or_pad(samples: Vec<f64>, n: usize, seed: Option<u64>) -> PyResult<Vec<f64>> {
    if n == 0 {
        return Err(PyValueError::new_err("crop length must be positive"));
    }
    let policy = seed.map_or(CropPolicy::Center, |seed| CropPolicy::Random { seed });
    Ok(audio::crop_or_pad(&Waveform::at_default_rate(samples), n, policy).samples)
}

/// Returns `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f64>, u32)> {
    let w = audio::read_wav(path).map_err(to_py)?;
    Ok((w.samples, w.sample_rate))
}

/// Writes 16-bit PCM.
#[pyfunction]
#[pyo3(signature = (path, samples, sample_rate = 16000))]
fn write_wav(path: &str, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    audio::write_wav(path, &Waveform::new(samples, sample_rate)).map_err(to_py)
}

#[pymodule]
fn fdn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_score, m)?)?;
    m.add_function(wrap_pyfunction!(pre_emphasis, m)?)?;
    m.add_function(wrap_pyfunction!(speed_perturb, m)?)?;
    m.add_function(wrap_pyfunction!(crop_or_pad, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    Ok(())
}
