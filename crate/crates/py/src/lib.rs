//! Python bindings: simulation, metrics, PIT, mask-based beamforming and
//! trained-model inference. Signals cross the boundary as lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vmekit::beamformer::{beamform as bf_run, AugmentedArray, BfConfig};
use vmekit::nnet::{Separator as CoreSeparator, VmeModel};
use vmekit::pipeline::train::separator_masks;
use vmekit::pipeline::{Checkpoint, Config, Stage};
use vmekit::room::{generate_sample, REF_CHANNEL};
use vmekit::signal::{MultichannelWave, StftKernel};

fn py_err(e: vmekit::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.category());
    match e {
        vmekit::Error::Io { .. } => PyIOError::new_err(msg),
        vmekit::Error::Training(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn rows(w: &MultichannelWave) -> Vec<Vec<f64>> {
    (0..w.channels()).map(|c| w.channel(c).to_vec()).collect()
}

/// `-10 log10(|r|^2 / (|r - e|^2 + eps))`, floored at -60 dB.
#[pyfunction]
fn snr_loss(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    vmekit::losses::snr_loss(&reference, &estimate).map_err(py_err)
}

/// Projection SDR in dB.
#[pyfunction]
fn sdr(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    vmekit::metrics::sdr(&reference, &estimate).map_err(py_err)
}

/// Mean SDR over sources after the max-SIR permutation; returns
/// `(sdr, permutation)`.
#[pyfunction]
fn sdr_bf(references: Vec<Vec<f64>>, estimates: Vec<Vec<f64>>) -> PyResult<(f64, Vec<usize>)> {
    let s = vmekit::metrics::sdr_bf(&references, &estimates).map_err(py_err)?;
    Ok((s.sdr, s.permutation))
}

/// Minimum over permutations `p` of `sum_i costs[i][p[i]]`.
#[pyfunction]
fn pit_select(costs: Vec<Vec<f64>>) -> PyResult<(f64, Vec<usize>)> {
    vmekit::losses::pit_select(&costs).map_err(py_err)
}

/// One simulated scene: `{"mixture": [3][T], "images": [I][T], "scene": json}`
/// with images at the reference channel.
#[pyfunction]
#[pyo3(signature = (seed, duration_s = 2.0, sample_rate = 8000))]
fn simulate(py: Python<'_>, seed: u64, duration_s: f64, sample_rate: u32) -> PyResult<Py<PyAny>> {
    let len = (duration_s * sample_rate as f64).round() as usize;
    let s = generate_sample(seed, len, sample_rate, &Config::desk().data.scene).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("mixture", rows(&s.mixture))?;
    let images: Vec<Vec<f64>> = s.images.iter().map(|w| w.channel(REF_CHANNEL).to_vec()).collect();
    d.set_item("images", images)?;
    d.set_item("scene", serde_json::to_string(&s.scene).map_err(|e| PyValueError::new_err(e.to_string()))?)?;
    Ok(d.into_any().unbind())
}

/// Mask-based MVDR on `array` (`[C][T]`, channel 0 the reference) with
/// magnitude-ratio masks of `separated` against channel 0.
#[pyfunction]
#[pyo3(signature = (array, separated, sample_rate = 8000))]
fn beamform(array: Vec<Vec<f64>>, separated: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    let cfg = BfConfig::default();
    let kernel = StftKernel::new(cfg.stft).map_err(py_err)?;
    let y = MultichannelWave::from_channels(array, sample_rate).map_err(py_err)?;
    let masks = separator_masks(y.channel(0), &separated, &kernel, &cfg, sample_rate).map_err(py_err)?;
    let (out, _) = bf_run(&y, &masks, &cfg).map_err(py_err)?;
    Ok(rows(&out))
}

/// Desk-scale defaults as TOML.
#[pyfunction]
fn desk_config() -> String {
    Config::desk().to_toml()
}

fn load(path: PathBuf, stage: Stage) -> PyResult<Checkpoint> {
    Checkpoint::load(&path)
        .and_then(|c| c.expect_stage(stage, &path))
        .map_err(py_err)
}

/// A trained NN-VME.
#[pyclass(frozen)]
struct VirtualMic {
    model: VmeModel,
    #[pyo3(get)]
    alpha: Option<f64>,
}

#[pymethods]
impl VirtualMic {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = load(path, Stage::Vme)?;
        Ok(Self {
            alpha: ck.alpha,
            model: VmeModel::from_net(ck.net).map_err(py_err)?,
        })
    }

    /// Virtual ch5 estimate from the real ch4 and ch6 signals.
    fn infer(&self, r0: Vec<f64>, r1: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.infer(&[r0, r1]).map_err(py_err)
    }

    /// The augmented array `[r0, v_hat, r1]`.
    #[pyo3(signature = (r0, r1, sample_rate = 8000))]
    fn augment(&self, r0: Vec<f64>, r1: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
        let v = self.model.infer(&[r0.clone(), r1.clone()]).map_err(py_err)?;
        let r = MultichannelWave::from_channels(vec![r0, r1], sample_rate).map_err(py_err)?;
        let v = MultichannelWave::mono(v, sample_rate).map_err(py_err)?;
        Ok(rows(&AugmentedArray::with_virtual(&r, &v).map_err(py_err)?.wave))
    }
}

/// A trained PIT separator.
#[pyclass(frozen)]
struct Separator {
    model: CoreSeparator,
}

#[pymethods]
impl Separator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: CoreSeparator::from_net(load(path, Stage::Separator)?.net).map_err(py_err)?,
        })
    }

    fn separate(&self, mixture: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.model.infer(&mixture).map_err(py_err)
    }
}

#[pymodule(name = "vmekit")]
fn vmekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(snr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sdr, m)?)?;
    m.add_function(wrap_pyfunction!(sdr_bf, m)?)?;
    m.add_function(wrap_pyfunction!(pit_select, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(beamform, m)?)?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_class::<VirtualMic>()?;
    m.add_class::<Separator>()?;
    Ok(())
}
