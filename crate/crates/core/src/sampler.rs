//! Full inpainting inference: the T-step reverse loop with concatenation
//! conditioning, known-region compositing and back-normalization.
//!
//! Starting from pure coefficient-space noise, each step feeds the model
//! the fixed conditioning (coefficients of the voided image and the mask)
//! concatenated with the current noisy state, takes the predicted clean
//! coefficients, and samples the previous state from the exact posterior.
//! The step-1 posterior has zero variance, so the final prediction is the
//! last clean-coefficient estimate itself.

use ndarray::{s, Array4, Zip};

use crate::denoiser::{Denoise, INPUT_CHANNELS};
use crate::diffusion::{posterior_sample, DiffusionState, SeededRng};
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::volume::{denormalize, MaskVolume, NormRecord, Volume3D};
use crate::wavelet::{dwt3, idwt3, WaveletCoeffs, DEFAULT_COEFF_SCALE, NUM_BANDS};

/// One inpainting task: the voided image, its mask, optionally the ground
/// truth, and the record needed to map results back to the original
/// intensity range.
#[derive(Debug, Clone)]
pub struct InpaintSample {
    ground_truth: Option<Volume3D>,
    mask: MaskVolume,
    voided: Volume3D,
    pub norm: NormRecord,
}

impl InpaintSample {
    pub fn new(
        ground_truth: Option<Volume3D>,
        mask: MaskVolume,
        voided: Volume3D,
        norm: NormRecord,
    ) -> Result<Self> {
        if mask.dims() != voided.dims() {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs voided dims {:?}",
                mask.dims(),
                voided.dims()
            )));
        }
        if let Some(g) = &ground_truth {
            if g.dims() != voided.dims() {
                return Err(Error::Shape(format!(
                    "ground truth dims {:?} vs voided dims {:?}",
                    g.dims(),
                    voided.dims()
                )));
            }
            let expect = crate::volume::apply_mask(g, &mask)?;
            if expect != voided {
                return Err(Error::Validation(
                    "voided image is not ground_truth with the masked region zeroed".into(),
                ));
            }
        }
        Ok(Self {
            ground_truth,
            mask,
            voided,
            norm,
        })
    }

    pub fn ground_truth(&self) -> Option<&Volume3D> {
        self.ground_truth.as_ref()
    }

    pub fn mask(&self) -> &MaskVolume {
        &self.mask
    }

    pub fn voided(&self) -> &Volume3D {
        &self.voided
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.voided.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Copy the known region from the voided input into the output
    /// (default). When off, the raw model reconstruction is returned.
    pub composite_known_region: bool,
    /// Optional image-space clamp on the clean prediction at every step.
    pub clamp_x0: Option<f32>,
    /// Coefficient scale the model was trained with.
    pub coeff_scale: f32,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            composite_known_region: true,
            clamp_x0: None,
            coeff_scale: DEFAULT_COEFF_SCALE,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.clamp_x0 {
            if !(b > 0.0) {
                return Err(Error::Validation(format!(
                    "clamp bound must be > 0, got {b}"
                )));
            }
        }
        if !(self.coeff_scale > 0.0) {
            return Err(Error::Validation("coeff_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Stacks the conditioning coefficients and the noisy state into the
/// 24-channel model input: bands 0..8 from the voided image, 8..16 from
/// the mask, 16..24 the current state.
pub fn conditioned_input(
    cond_voided: &WaveletCoeffs,
    cond_mask: &WaveletCoeffs,
    state: &WaveletCoeffs,
) -> Result<Array4<f32>> {
    if !cond_voided.same_shape(cond_mask) || !cond_voided.same_shape(state) {
        return Err(Error::Shape(
            "conditioning and state coefficient shapes differ".into(),
        ));
    }
    let (d0, d1, d2) = cond_voided.band_dims();
    let mut input = Array4::zeros((INPUT_CHANNELS, d0, d1, d2));
    input
        .slice_mut(s![0..NUM_BANDS, .., .., ..])
        .assign(cond_voided.bands());
    input
        .slice_mut(s![NUM_BANDS..2 * NUM_BANDS, .., .., ..])
        .assign(cond_mask.bands());
    input
        .slice_mut(s![2 * NUM_BANDS..3 * NUM_BANDS, .., .., ..])
        .assign(state.bands());
    Ok(input)
}

/// Runs the reverse process and returns the denormalized inpainting.
pub fn inpaint<D: Denoise>(
    model: &D,
    sample: &InpaintSample,
    s: &Schedule,
    cfg: &SamplerConfig,
) -> Result<Volume3D> {
    cfg.validate()?;
    let t_total = s.num_steps();
    let cond_v = dwt3(sample.voided(), cfg.coeff_scale)?;
    let cond_m = dwt3(sample.mask().as_volume(), cfg.coeff_scale)?;

    let mut rng = SeededRng::new(cfg.seed);
    let noise_seed = rng.standard_normal_like(&cond_v);
    let mut state = DiffusionState {
        coeffs: noise_seed,
        t: t_total,
    };

    let mut x0_hat = WaveletCoeffs::zeros(cond_v.band_dims(), cfg.coeff_scale);
    for t in (1..=t_total).rev() {
        let input = conditioned_input(&cond_v, &cond_m, &state.coeffs)?;
        let predicted = model.predict_x0(&input, t, t_total)?;
        x0_hat = WaveletCoeffs::from_parts(predicted, cfg.coeff_scale)?;
        if let Some(bound) = cfg.clamp_x0 {
            let image = idwt3(&x0_hat)?;
            let clamped =
                Volume3D::from_array(image.data().mapv(|v| v.clamp(-bound, bound)))?;
            x0_hat = dwt3(&clamped, cfg.coeff_scale)?;
        }
        state = DiffusionState {
            coeffs: posterior_sample(&state.coeffs, &x0_hat, t, s, &mut rng)?,
            t: t - 1,
        };
    }

    let y_raw = idwt3(&x0_hat)?;
    let composed = if cfg.composite_known_region {
        composite(sample.voided(), sample.mask(), &y_raw)?
    } else {
        y_raw
    };
    denormalize(&composed, &sample.norm)
}

/// Known region from `v`, masked region from `y`.
fn composite(v: &Volume3D, m: &MaskVolume, y: &Volume3D) -> Result<Volume3D> {
    if v.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "voided dims {:?} vs prediction dims {:?}",
            v.dims(),
            y.dims()
        )));
    }
    let data = Zip::from(v.data())
        .and(m.as_volume().data())
        .and(y.data())
        .map_collect(|&vv, &mv, &yv| if mv == 1.0 { yv } else { vv });
    Volume3D::from_array(data)
}

/// Trivial inpainting floor: fills the masked region with the mean of the
/// voided image over unmasked nonzero voxels, then denormalizes.
pub fn mean_fill_baseline(sample: &InpaintSample) -> Result<Volume3D> {
    if sample.mask().masked_count() == 0 {
        return Err(Error::Validation("mask is empty".into()));
    }
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for (&v, &m) in sample
        .voided()
        .as_slice()
        .iter()
        .zip(sample.mask().as_volume().as_slice())
    {
        if m == 0.0 && v != 0.0 {
            acc += f64::from(v);
            count += 1;
        }
    }
    let fill = if count > 0 { (acc / count as f64) as f32 } else { 0.0 };

    let data = Zip::from(sample.voided().data())
        .and(sample.mask().as_volume().data())
        .map_collect(|&v, &m| if m == 1.0 { fill } else { v });
    denormalize(&Volume3D::from_array(data)?, &sample.norm)
}
