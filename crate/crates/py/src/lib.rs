//! Python bindings: volumes cross the boundary as f32 numpy arrays
//! (3D for images/masks, 4D with a leading band axis for wavelet
//! coefficients), schedules and trained models as opaque classes.

// the pymethods/pyfunction expansions trip this lint on their own glue
#![allow(clippy::useless_conversion)]

use numpy::{IntoPyArray, PyArray2, PyArray3, PyArray4, PyReadonlyArray3, PyReadonlyArray4};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wdiff3d::denoiser::{self, DenoiserConfig, DenoiserModel};
use wdiff3d::diffusion::{self, SeededRng};
use wdiff3d::metrics;
use wdiff3d::phantom::{self, PhantomSpec};
use wdiff3d::sampler::{self, InpaintSample, SamplerConfig};
use wdiff3d::schedule::{self, Schedule, ScheduleKind, ScheduleParams, VpForm};
use wdiff3d::training::{self, LossKind, TrainConfig};
use wdiff3d::volume::{self, MaskVolume, NormRecord, Volume3D};
use wdiff3d::wavelet::{self, WaveletCoeffs, DEFAULT_COEFF_SCALE};
use wdiff3d::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(inner) => PyIOError::new_err(inner.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn volume_from_py(arr: &PyReadonlyArray3<'_, f32>) -> PyResult<Volume3D> {
    Volume3D::from_array(arr.as_array().to_owned()).map_err(to_py_err)
}

fn mask_from_py(arr: &PyReadonlyArray3<'_, f32>) -> PyResult<MaskVolume> {
    MaskVolume::from_volume(volume_from_py(arr)?).map_err(to_py_err)
}

fn coeffs_from_py(arr: &PyReadonlyArray4<'_, f32>, scale: f32) -> PyResult<WaveletCoeffs> {
    WaveletCoeffs::from_parts(arr.as_array().to_owned(), scale).map_err(to_py_err)
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    match name {
        "l2" | "squared" => Ok(LossKind::SquaredError),
        "l1" | "absolute" => Ok(LossKind::AbsoluteError),
        other => Err(PyValueError::new_err(format!(
            "unknown loss '{other}' (expected l2 or l1)"
        ))),
    }
}

/// The affine preprocessing record needed to invert normalization.
#[pyclass(name = "NormRecord")]
#[derive(Clone)]
struct PyNormRecord {
    inner: NormRecord,
}

#[pymethods]
impl PyNormRecord {
    #[new]
    fn new(scale: f64, offset: f64, clip_lo: f64, clip_hi: f64) -> PyResult<Self> {
        Ok(Self {
            inner: NormRecord::new(scale, offset, clip_lo, clip_hi).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: NormRecord::identity(),
        }
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.inner.offset
    }

    #[getter]
    fn clip_lo(&self) -> f64 {
        self.inner.clip_lo
    }

    #[getter]
    fn clip_hi(&self) -> f64 {
        self.inner.clip_hi
    }

    fn __repr__(&self) -> String {
        format!(
            "NormRecord(scale={}, offset={}, clip_lo={}, clip_hi={})",
            self.inner.scale, self.inner.offset, self.inner.clip_lo, self.inner.clip_hi
        )
    }
}

/// Precomputed variance-schedule constants.
#[pyclass(name = "Schedule")]
struct PySchedule {
    inner: Schedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (kind, num_steps, beta1=None, beta_last=None, beta_min=None,
                        beta_max=None, vp_form=None))]
    fn new(
        kind: &str,
        num_steps: usize,
        beta1: Option<f64>,
        beta_last: Option<f64>,
        beta_min: Option<f64>,
        beta_max: Option<f64>,
        vp_form: Option<&str>,
    ) -> PyResult<Self> {
        let kind: ScheduleKind = kind.parse().map_err(to_py_err)?;
        let mut params = ScheduleParams::new(kind, num_steps);
        if let Some(v) = beta1 {
            params.beta_first = v;
        }
        if let Some(v) = beta_last {
            params.beta_last = v;
        }
        if let Some(v) = beta_min {
            params.beta_min = v;
        }
        if let Some(v) = beta_max {
            params.beta_max = v;
        }
        if let Some(v) = vp_form {
            params.vp_form = v.parse::<VpForm>().map_err(to_py_err)?;
        }
        Ok(Self {
            inner: schedule::build_schedule(&params).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn num_steps(&self) -> usize {
        self.inner.num_steps()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.params().kind.to_string()
    }

    fn beta(&self, t: usize) -> f64 {
        self.inner.beta(t)
    }

    fn alpha_bar(&self, t: usize) -> f64 {
        self.inner.alpha_bar(t)
    }

    fn posterior_mean_coef_x0(&self, t: usize) -> f64 {
        self.inner.posterior_mean_coef_x0(t)
    }

    fn posterior_mean_coef_xt(&self, t: usize) -> f64 {
        self.inner.posterior_mean_coef_xt(t)
    }

    fn posterior_var(&self, t: usize) -> f64 {
        self.inner.posterior_var(t)
    }

    /// (alpha_bar_final, first_step_below_1pct or None, fully_perturbed)
    fn perturbation_report(&self) -> (f64, Option<usize>, bool) {
        let r = schedule::perturbation_report(&self.inner);
        (r.alpha_bar_final, r.first_step_below_1pct, r.fully_perturbed)
    }
}

/// A trainable clean-coefficient predictor.
#[pyclass(name = "Denoiser")]
struct PyDenoiser {
    inner: DenoiserModel,
}

#[pymethods]
impl PyDenoiser {
    #[new]
    #[pyo3(signature = (hidden_channels=16, num_hidden_convs=2, time_embed_dim=None, seed=0))]
    fn new(
        hidden_channels: usize,
        num_hidden_convs: usize,
        time_embed_dim: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = DenoiserConfig {
            hidden_channels,
            num_hidden_convs,
            time_embed_dim: time_embed_dim.unwrap_or(hidden_channels),
        };
        Ok(Self {
            inner: denoiser::init_model(&cfg, seed).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.config.num_params()
    }

    #[getter]
    fn hidden_channels(&self) -> usize {
        self.inner.config.hidden_channels
    }

    /// Clean-coefficient prediction for a `(24, d0, d1, d2)` input.
    fn forward<'py>(
        &self,
        py: Python<'py>,
        input: PyReadonlyArray4<'py, f32>,
        t: usize,
        num_steps: usize,
    ) -> PyResult<Bound<'py, PyArray4<f32>>> {
        let arr = input.as_array().to_owned();
        let out = denoiser::forward(&self.inner, &arr, t, num_steps).map_err(to_py_err)?;
        Ok(out.into_pyarray_bound(py))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        denoiser::save_checkpoint(&self.inner, path.as_ref()).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: denoiser::load_checkpoint(path.as_ref()).map_err(to_py_err)?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (vol, coeff_scale=DEFAULT_COEFF_SCALE))]
fn dwt3<'py>(
    py: Python<'py>,
    vol: PyReadonlyArray3<'py, f32>,
    coeff_scale: f32,
) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let v = volume_from_py(&vol)?;
    let coeffs = wavelet::dwt3(&v, coeff_scale).map_err(to_py_err)?;
    Ok(coeffs.bands().clone().into_pyarray_bound(py))
}

#[pyfunction]
#[pyo3(signature = (bands, coeff_scale=DEFAULT_COEFF_SCALE))]
fn idwt3<'py>(
    py: Python<'py>,
    bands: PyReadonlyArray4<'py, f32>,
    coeff_scale: f32,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let coeffs = coeffs_from_py(&bands, coeff_scale)?;
    let vol = wavelet::idwt3(&coeffs).map_err(to_py_err)?;
    Ok(vol.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
fn normalize<'py>(
    py: Python<'py>,
    vol: PyReadonlyArray3<'py, f32>,
    pct: f64,
) -> PyResult<(Bound<'py, PyArray3<f32>>, PyNormRecord)> {
    let v = volume_from_py(&vol)?;
    let (out, rec) = volume::normalize(&v, pct).map_err(to_py_err)?;
    Ok((
        out.data().clone().into_pyarray_bound(py),
        PyNormRecord { inner: rec },
    ))
}

#[pyfunction]
fn denormalize<'py>(
    py: Python<'py>,
    vol: PyReadonlyArray3<'py, f32>,
    record: &PyNormRecord,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let v = volume_from_py(&vol)?;
    let out = volume::denormalize(&v, &record.inner).map_err(to_py_err)?;
    Ok(out.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
fn apply_mask<'py>(
    py: Python<'py>,
    g: PyReadonlyArray3<'py, f32>,
    mask: PyReadonlyArray3<'py, f32>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let g = volume_from_py(&g)?;
    let m = mask_from_py(&mask)?;
    let out = volume::apply_mask(&g, &m).map_err(to_py_err)?;
    Ok(out.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
fn save_volume(vol: PyReadonlyArray3<'_, f32>, path: &str) -> PyResult<()> {
    volume::save_volume(&volume_from_py(&vol)?, path.as_ref()).map_err(to_py_err)
}

#[pyfunction]
fn load_volume<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let vol = volume::load_volume(path.as_ref()).map_err(to_py_err)?;
    Ok(vol.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
#[pyo3(signature = (x0, t, eps, schedule, coeff_scale=DEFAULT_COEFF_SCALE))]
fn q_sample<'py>(
    py: Python<'py>,
    x0: PyReadonlyArray4<'py, f32>,
    t: usize,
    eps: PyReadonlyArray4<'py, f32>,
    schedule: &PySchedule,
    coeff_scale: f32,
) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let x0 = coeffs_from_py(&x0, coeff_scale)?;
    let eps = coeffs_from_py(&eps, coeff_scale)?;
    let out = diffusion::q_sample(&x0, t, &eps, &schedule.inner).map_err(to_py_err)?;
    Ok(out.bands().clone().into_pyarray_bound(py))
}

#[pyfunction]
#[pyo3(signature = (x_t, x0_hat, t, schedule, seed, coeff_scale=DEFAULT_COEFF_SCALE))]
fn posterior_sample<'py>(
    py: Python<'py>,
    x_t: PyReadonlyArray4<'py, f32>,
    x0_hat: PyReadonlyArray4<'py, f32>,
    t: usize,
    schedule: &PySchedule,
    seed: u64,
    coeff_scale: f32,
) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let x_t = coeffs_from_py(&x_t, coeff_scale)?;
    let x0_hat = coeffs_from_py(&x0_hat, coeff_scale)?;
    let mut rng = SeededRng::new(seed);
    let out = diffusion::posterior_sample(&x_t, &x0_hat, t, &schedule.inner, &mut rng)
        .map_err(to_py_err)?;
    Ok(out.bands().clone().into_pyarray_bound(py))
}

/// (g, m, v, record)
type PhantomParts<'py> = (
    Bound<'py, PyArray3<f32>>,
    Bound<'py, PyArray3<f32>>,
    Bound<'py, PyArray3<f32>>,
    PyNormRecord,
);

/// Returns `(g, m, v, record)` for a deterministic synthetic sample.
#[pyfunction]
#[pyo3(signature = (seed, dims=32, mask_radius_min=3, mask_radius_max=6, pct=0.005))]
fn gen_phantom(
    py: Python<'_>,
    seed: u64,
    dims: usize,
    mask_radius_min: usize,
    mask_radius_max: usize,
    pct: f64,
) -> PyResult<PhantomParts<'_>> {
    let mut spec = PhantomSpec::new(seed);
    spec.dims = (dims, dims, dims);
    spec.mask_radius_min = mask_radius_min;
    spec.mask_radius_max = mask_radius_max;
    spec.norm_pct = pct;
    let sample = phantom::gen_phantom(&spec).map_err(to_py_err)?;
    let g = sample.ground_truth().expect("generated with ground truth");
    Ok((
        g.data().clone().into_pyarray_bound(py),
        sample
            .mask()
            .as_volume()
            .data()
            .clone()
            .into_pyarray_bound(py),
        sample.voided().data().clone().into_pyarray_bound(py),
        PyNormRecord { inner: sample.norm },
    ))
}

/// Trains on `(g, m, v)` triplets of 3D arrays (already normalized).
/// Returns the model and a `(steps, 5)` history array with columns
/// `(step, t_drawn, l_recon, l_masked, total)`.
#[pyfunction]
#[pyo3(signature = (samples, schedule_kind="vp", num_steps=2, steps=2000, batch_size=2,
                    learning_rate=1e-4, seed=0, coeff_scale=DEFAULT_COEFF_SCALE, loss="l2",
                    hidden_channels=16, num_hidden_convs=2))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    samples: Vec<(
        PyReadonlyArray3<'py, f32>,
        PyReadonlyArray3<'py, f32>,
        PyReadonlyArray3<'py, f32>,
    )>,
    schedule_kind: &str,
    num_steps: usize,
    steps: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    coeff_scale: f32,
    loss: &str,
    hidden_channels: usize,
    num_hidden_convs: usize,
) -> PyResult<(PyDenoiser, Bound<'py, PyArray2<f64>>)> {
    let dataset: Vec<InpaintSample> = samples
        .iter()
        .map(|(g, m, v)| {
            InpaintSample::new(
                Some(volume_from_py(g)?),
                mask_from_py(m)?,
                volume_from_py(v)?,
                NormRecord::identity(),
            )
            .map_err(to_py_err)
        })
        .collect::<PyResult<_>>()?;

    let kind: ScheduleKind = schedule_kind.parse().map_err(to_py_err)?;
    let mut cfg = TrainConfig::new(ScheduleParams::new(kind, num_steps), steps);
    cfg.batch_size = batch_size;
    cfg.learning_rate = learning_rate;
    cfg.seed = seed;
    cfg.coeff_scale = coeff_scale;
    cfg.loss_kind = parse_loss(loss)?;
    cfg.denoiser = DenoiserConfig {
        hidden_channels,
        num_hidden_convs,
        time_embed_dim: hidden_channels,
    };

    let out = training::train_loop(&dataset, &cfg).map_err(to_py_err)?;
    let mut history = numpy::ndarray::Array2::<f64>::zeros((out.history.len(), 5));
    for (i, row) in out.history.iter().enumerate() {
        history[[i, 0]] = row.step as f64;
        history[[i, 1]] = row.t_drawn as f64;
        history[[i, 2]] = row.l_recon;
        history[[i, 3]] = row.l_masked;
        history[[i, 4]] = row.total;
    }
    Ok((
        PyDenoiser { inner: out.model },
        history.into_pyarray_bound(py),
    ))
}

/// Reverse-process inpainting of a voided volume.
#[pyfunction]
#[pyo3(signature = (model, voided, mask, schedule, seed=0, composite=true, clamp_x0=None,
                    coeff_scale=DEFAULT_COEFF_SCALE, record=None))]
#[allow(clippy::too_many_arguments)]
fn inpaint<'py>(
    py: Python<'py>,
    model: &PyDenoiser,
    voided: PyReadonlyArray3<'py, f32>,
    mask: PyReadonlyArray3<'py, f32>,
    schedule: &PySchedule,
    seed: u64,
    composite: bool,
    clamp_x0: Option<f32>,
    coeff_scale: f32,
    record: Option<&PyNormRecord>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let sample = InpaintSample::new(
        None,
        mask_from_py(&mask)?,
        volume_from_py(&voided)?,
        record.map_or_else(NormRecord::identity, |r| r.inner),
    )
    .map_err(to_py_err)?;
    let cfg = SamplerConfig {
        composite_known_region: composite,
        clamp_x0,
        coeff_scale,
        seed,
    };
    let out = sampler::inpaint(&model.inner, &sample, &schedule.inner, &cfg).map_err(to_py_err)?;
    Ok(out.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
#[pyo3(signature = (voided, mask, record=None))]
fn mean_fill_baseline<'py>(
    py: Python<'py>,
    voided: PyReadonlyArray3<'py, f32>,
    mask: PyReadonlyArray3<'py, f32>,
    record: Option<&PyNormRecord>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let sample = InpaintSample::new(
        None,
        mask_from_py(&mask)?,
        volume_from_py(&voided)?,
        record.map_or_else(NormRecord::identity, |r| r.inner),
    )
    .map_err(to_py_err)?;
    let out = sampler::mean_fill_baseline(&sample).map_err(to_py_err)?;
    Ok(out.data().clone().into_pyarray_bound(py))
}

#[pyfunction]
#[pyo3(signature = (a, b, mask=None))]
fn mse(
    a: PyReadonlyArray3<'_, f32>,
    b: PyReadonlyArray3<'_, f32>,
    mask: Option<PyReadonlyArray3<'_, f32>>,
) -> PyResult<f64> {
    let a = volume_from_py(&a)?;
    let b = volume_from_py(&b)?;
    let m = mask.as_ref().map(mask_from_py).transpose()?;
    metrics::mse(&a, &b, m.as_ref()).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, data_range, mask=None))]
fn psnr(
    a: PyReadonlyArray3<'_, f32>,
    b: PyReadonlyArray3<'_, f32>,
    data_range: f64,
    mask: Option<PyReadonlyArray3<'_, f32>>,
) -> PyResult<f64> {
    let a = volume_from_py(&a)?;
    let b = volume_from_py(&b)?;
    let m = mask.as_ref().map(mask_from_py).transpose()?;
    metrics::psnr(&a, &b, data_range, m.as_ref()).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, data_range, window=7, sigma=1.5, mask=None))]
fn ssim3d(
    a: PyReadonlyArray3<'_, f32>,
    b: PyReadonlyArray3<'_, f32>,
    data_range: f64,
    window: usize,
    sigma: f64,
    mask: Option<PyReadonlyArray3<'_, f32>>,
) -> PyResult<f64> {
    let a = volume_from_py(&a)?;
    let b = volume_from_py(&b)?;
    let m = mask.as_ref().map(mask_from_py).transpose()?;
    let params = metrics::SsimParams { window, sigma };
    metrics::ssim3d(&a, &b, data_range, &params, m.as_ref()).map_err(to_py_err)
}

#[pymodule]
fn wdiff3d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_class::<PyNormRecord>()?;
    m.add_function(wrap_pyfunction!(dwt3, m)?)?;
    m.add_function(wrap_pyfunction!(idwt3, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(save_volume, m)?)?;
    m.add_function(wrap_pyfunction!(load_volume, m)?)?;
    m.add_function(wrap_pyfunction!(q_sample, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_sample, m)?)?;
    m.add_function(wrap_pyfunction!(gen_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint, m)?)?;
    m.add_function(wrap_pyfunction!(mean_fill_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim3d, m)?)?;
    m.add("DEFAULT_COEFF_SCALE", DEFAULT_COEFF_SCALE)?;
    Ok(())
}
