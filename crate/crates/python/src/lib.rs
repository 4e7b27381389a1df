//! Python bindings: feature tensors, feature extraction, augmentation,
//! metrics, training and inference.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mcasc::audio::{self, MultichannelClip, SyntheticDatasetConfig};
use mcasc::augment::{self, AugmentKind, AugmentationPolicy};
use mcasc::features::{self, FeatureConfig};
use mcasc::harness::{self, Confusion};
use mcasc::model::{self, Batch, ModelState, NetworkConfig, RAdamConfig, TrainConfig, TrainExample};
use mcasc::seed::rng_for;
use mcasc::tensorio::{self, Dims};

fn py_err(e: mcasc::Error) -> PyErr {
    match e {
        mcasc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn channel_set(channels: Vec<usize>) -> BTreeSet<usize> {
    channels.into_iter().collect()
}

/// Log mel-band energies of shape `(freq, time, channels)` with per-channel
/// validity flags.
#[pyclass(name = "FeatureTensor", module = "mcasc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureTensor {
    inner: tensorio::FeatureTensor,
}

#[pymethods]
impl PyFeatureTensor {
    /// `data` is flat in (freq, time, channel) order.
    #[new]
    #[pyo3(signature = (freq, time, channels, data, channel_valid=None))]
    fn new(freq: usize, time: usize, channels: usize, data: Vec<f64>, channel_valid: Option<Vec<bool>>) -> PyResult<Self> {
        let dims = Dims::new(freq, time, channels);
        let inner = match channel_valid {
            Some(v) => tensorio::FeatureTensor::new(dims, data, v),
            None => tensorio::FeatureTensor::from_data(dims, data),
        }
        .map_err(py_err)?;
        Ok(PyFeatureTensor { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyFeatureTensor {
            inner: tensorio::read_tensor(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        tensorio::write_tensor(&self.inner, path).map_err(py_err)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(PyFeatureTensor {
            inner: tensorio::FeatureTensor::from_bytes(&data).map_err(py_err)?,
        })
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.inner.to_bytes().map_err(py_err)
    }

    /// `(freq, time, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let d = self.inner.dims();
        (d.freq, d.time, d.channels)
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    #[getter]
    fn channel_valid(&self) -> Vec<bool> {
        self.inner.channel_valid().to_vec()
    }

    fn get(&self, f: usize, t: usize, c: usize) -> PyResult<f64> {
        let d = self.inner.dims();
        if f >= d.freq || t >= d.time || c >= d.channels {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(f, t, c))
    }

    /// One channel's `freq x time` plane, frequency-major.
    fn plane(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.inner.channels() {
            return Err(PyValueError::new_err("channel out of range"));
        }
        Ok(self.inner.plane(c))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (f, t, c) = self.shape();
        format!("FeatureTensor({f}x{t}x{c})")
    }
}

/// Synthesizes a dataset (WAV files + manifest.tsv) into `out_dir` and
/// returns the number of clips.
#[pyfunction]
#[pyo3(signature = (out_dir, classes=9, per_class=10, channels=16, duration_s=10.0, sample_rate=16000, seed=0))]
fn synth_dataset(
    out_dir: &str,
    classes: usize,
    per_class: usize,
    channels: usize,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> PyResult<usize> {
    let cfg = SyntheticDatasetConfig {
        n_classes: classes,
        clips_per_class: per_class,
        channels,
        duration_s,
        sample_rate_hz: sample_rate,
        seed,
    };
    Ok(audio::make_synthetic_dataset(&cfg, out_dir).map_err(py_err)?.entries.len())
}

/// Reads a WAV file: `(channels x samples list, sample_rate)`.
#[pyfunction]
fn load_wav(path: &str) -> PyResult<(Vec<Vec<f64>>, u32)> {
    let clip = audio::load_wav(path).map_err(py_err)?;
    Ok((clip.samples().to_vec(), clip.sample_rate_hz()))
}

/// Log mel-band energies of a multichannel signal. Channels listed in
/// `missing` are zeroed first.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, n_mels=40, frame_ms=40.0, hop_ms=20.0, missing=None))]
fn extract_features(
    samples: Vec<Vec<f64>>,
    sample_rate: u32,
    n_mels: usize,
    frame_ms: f64,
    hop_ms: f64,
    missing: Option<Vec<usize>>,
) -> PyResult<PyFeatureTensor> {
    let mut clip = MultichannelClip::new(samples, sample_rate).map_err(py_err)?;
    if let Some(m) = missing {
        clip = audio::zero_channels(&clip, &channel_set(m)).map_err(py_err)?;
    }
    let cfg = FeatureConfig {
        n_mels,
        frame_len_s: frame_ms / 1000.0,
        hop_len_s: hop_ms / 1000.0,
        ..FeatureConfig::default()
    };
    Ok(PyFeatureTensor {
        inner: features::extract_features(&clip, &cfg).map_err(py_err)?,
    })
}

/// Sets the listed channels to the missing-channel value.
#[pyfunction]
fn channel_mask(x: &PyFeatureTensor, channels: Vec<usize>) -> PyResult<PyFeatureTensor> {
    Ok(PyFeatureTensor {
        inner: augment::channel_mask(&x.inner, &channel_set(channels)).map_err(py_err)?,
    })
}

/// One draw of `kind` (none, mask, overwrite, swap) touching k_min..=k_max channels.
#[pyfunction]
#[pyo3(signature = (x, kind, k_min=0, k_max=None, seed=0))]
fn augment_tensor(x: &PyFeatureTensor, kind: &str, k_min: usize, k_max: Option<usize>, seed: u64) -> PyResult<PyFeatureTensor> {
    let kind: AugmentKind = kind.parse().map_err(py_err)?;
    let policy = AugmentationPolicy::new(kind, k_min, k_max.unwrap_or(x.inner.channels() / 2), seed);
    let mut rng = rng_for(seed, &[]);
    Ok(PyFeatureTensor {
        inner: policy.apply(&x.inner, &mut rng).map_err(py_err)?,
    })
}

/// Fills each missing channel with a copy of a random non-missing one.
#[pyfunction]
#[pyo3(signature = (x, missing, seed=0))]
fn random_copy(x: &PyFeatureTensor, missing: Vec<usize>, seed: u64) -> PyResult<PyFeatureTensor> {
    let mut rng = rng_for(seed, &[]);
    Ok(PyFeatureTensor {
        inner: augment::random_copy(&x.inner, &channel_set(missing), &mut rng).map_err(py_err)?,
    })
}

/// `(micro_f, macro_f)` of a confusion matrix (rows = true class).
#[pyfunction]
fn micro_macro_f(rows: Vec<Vec<u64>>) -> PyResult<(f64, f64)> {
    let c = Confusion::from_rows(&rows).map_err(py_err)?;
    harness::micro_macro_f(&c).map_err(py_err)
}

#[pyfunction]
fn confusion_recall_percent(rows: Vec<Vec<u64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = Confusion::from_rows(&rows).map_err(py_err)?;
    Ok(harness::confusion_recall_percent(&c))
}

/// A trained classifier (network, optimizer state and RNG).
#[pyclass(name = "Model", module = "mcasc_py")]
struct PyModel {
    state: ModelState,
}

fn batch(xs: &[PyRef<'_, PyFeatureTensor>]) -> PyResult<Batch> {
    let refs: Vec<&tensorio::FeatureTensor> = xs.iter().map(|x| &x.inner).collect();
    Batch::from_tensors(&refs).map_err(py_err)
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            state: ModelState::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.state.save(path).map_err(py_err)
    }

    /// Trains a fresh network on `xs` / `labels`.
    #[staticmethod]
    #[pyo3(signature = (xs, labels, n_classes, augmentation="none", k_min=0, k_max=None, epochs=50, batch_size=32, lr=0.001, widths=(16, 32, 64), hidden=32, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        xs: Vec<PyRef<'_, PyFeatureTensor>>,
        labels: Vec<usize>,
        n_classes: usize,
        augmentation: &str,
        k_min: usize,
        k_max: Option<usize>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        widths: (usize, usize, usize),
        hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        if xs.len() != labels.len() || xs.is_empty() {
            return Err(PyValueError::new_err("need equally many (non-zero) tensors and labels"));
        }
        let dims = xs[0].inner.dims();
        let kind: AugmentKind = augmentation.parse().map_err(py_err)?;
        let policy = AugmentationPolicy::new(kind, k_min, k_max.unwrap_or(dims.channels / 2), seed);
        let examples: Vec<TrainExample<'_>> = xs
            .iter()
            .zip(&labels)
            .enumerate()
            .map(|(i, (x, &label))| TrainExample {
                uid: i as u64,
                label,
                features: &x.inner,
            })
            .collect();
        let net = NetworkConfig::scaled(dims, [widths.0, widths.1, widths.2], hidden, n_classes);
        let cfg = TrainConfig {
            epochs,
            batch_size,
            seed,
            radam: RAdamConfig {
                lr,
                ..RAdamConfig::default()
            },
        };
        let (state, _) = model::train(net, &examples, &policy, &cfg).map_err(py_err)?;
        Ok(PyModel { state })
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.state.network.config().n_classes
    }

    /// Inference-mode class probabilities per tensor.
    fn predict_proba(&self, xs: Vec<PyRef<'_, PyFeatureTensor>>) -> PyResult<Vec<Vec<f64>>> {
        let b = batch(&xs)?;
        self.state
            .network
            .forward_with(&b, model::PassOptions::INFER, None)
            .map_err(py_err)
    }

    /// Argmax class per tensor.
    fn predict(&self, xs: Vec<PyRef<'_, PyFeatureTensor>>) -> PyResult<Vec<usize>> {
        let b = batch(&xs)?;
        self.state.network.predict(&b).map_err(py_err)
    }
}

#[pymodule]
fn mcasc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LOG_FLOOR", tensorio::LOG_FLOOR)?;
    m.add_class::<PyFeatureTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(channel_mask, m)?)?;
    m.add_function(wrap_pyfunction!(augment_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(random_copy, m)?)?;
    m.add_function(wrap_pyfunction!(micro_macro_f, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_recall_percent, m)?)?;
    Ok(())
}
