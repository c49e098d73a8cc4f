//! Training objective and loop: clean-coefficient prediction under
//! concatenation conditioning, with a composite reconstruction loss
//! `L = L_y + L_ym` (whole-volume plus masked-region reconstruction error,
//! both in voxel space after the inverse transform), optimized by Adam.
//!
//! The inverse transform is linear and orthonormal up to the coefficient
//! scale, so the loss gradient pulls back into coefficient space as a
//! forward transform of the voxel-space gradient with the reciprocal
//! scale; that identity is verified numerically in the tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array3, NdFloat};

use crate::denoiser::{forward_tape, init_model, DenoiserConfig, DenoiserModel, ParamSet};
use crate::diffusion::{q_sample, SeededRng};
use crate::error::{Error, Result};
use crate::sampler::{conditioned_input, InpaintSample};
use crate::schedule::{build_schedule, Schedule, ScheduleParams};
use crate::volume::{MaskVolume, Volume3D};
use crate::wavelet::{dwt3, dwt3_array, idwt3_array, WaveletCoeffs, DEFAULT_COEFF_SCALE};

/// Learning rate of the full-scale (128-cube, batch 3) reference runs;
/// kept as documentation, not the desk-scale default.
pub const FULL_SCALE_LEARNING_RATE: f64 = 2e-5;
/// Crop edge and batch size of the full-scale reference configuration.
pub const FULL_SCALE_CROP: usize = 128;
pub const FULL_SCALE_BATCH_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    SquaredError,
    AbsoluteError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub coeff_scale: f32,
    pub loss_kind: LossKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn new(schedule: ScheduleParams, steps: usize) -> Self {
        Self {
            schedule,
            denoiser: DenoiserConfig::default(),
            learning_rate: 1e-4,
            batch_size: 2,
            steps,
            seed: 0,
            coeff_scale: DEFAULT_COEFF_SCALE,
            loss_kind: LossKind::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be > 0".into()));
        }
        if !(self.coeff_scale > 0.0) {
            return Err(Error::Validation("coeff_scale must be > 0".into()));
        }
        self.schedule.validate()?;
        self.denoiser.validate()
    }
}

/// The composite loss split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_recon: f64,
    pub l_masked: f64,
}

impl LossBreakdown {
    fn mean_of(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len() as f64;
        let l_recon = items.iter().map(|l| l.l_recon).sum::<f64>() / n;
        let l_masked = items.iter().map(|l| l.l_masked).sum::<f64>() / n;
        LossBreakdown {
            total: l_recon + l_masked,
            l_recon,
            l_masked,
        }
    }
}

/// `L_y`: mean reconstruction error over all voxels. `L_ym`: the same
/// error summed over masked voxels and divided by the masked-voxel count
/// (1 if the mask is empty).
pub fn compute_loss(
    g: &Volume3D,
    y_hat: &Volume3D,
    m: &MaskVolume,
    kind: LossKind,
) -> Result<LossBreakdown> {
    if g.dims() != y_hat.dims() || g.dims() != m.dims() {
        return Err(Error::Shape(format!(
            "loss operands disagree: g {:?}, y_hat {:?}, mask {:?}",
            g.dims(),
            y_hat.dims(),
            m.dims()
        )));
    }
    let mut whole = 0.0f64;
    let mut masked = 0.0f64;
    let mut masked_count = 0usize;
    for ((&gv, &yv), &mv) in g
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .zip(m.as_volume().as_slice())
    {
        let d = f64::from(gv) - f64::from(yv);
        let e = match kind {
            LossKind::SquaredError => d * d,
            LossKind::AbsoluteError => d.abs(),
        };
        whole += e;
        if mv == 1.0 {
            masked += e;
            masked_count += 1;
        }
    }
    let l_recon = whole / g.len() as f64;
    let l_masked = masked / masked_count.max(1) as f64;
    Ok(LossBreakdown {
        total: l_recon + l_masked,
        l_recon,
        l_masked,
    })
}

/// Generic loss on raw arrays; the f64 instantiation backs the
/// finite-difference oracles.
pub fn compute_loss_array<F: NdFloat>(
    g: &Array3<F>,
    y_hat: &Array3<F>,
    mask: &Array3<F>,
    kind: LossKind,
) -> F {
    let mut whole = F::zero();
    let mut masked = F::zero();
    let mut masked_count = 0usize;
    for ((&gv, &yv), &mv) in g.iter().zip(y_hat.iter()).zip(mask.iter()) {
        let d = gv - yv;
        let e = match kind {
            LossKind::SquaredError => d * d,
            LossKind::AbsoluteError => d.abs(),
        };
        whole += e;
        if mv == F::one() {
            masked += e;
            masked_count += 1;
        }
    }
    whole / F::from(g.len()).unwrap() + masked / F::from(masked_count.max(1)).unwrap()
}

/// Voxel-space gradient of [`compute_loss`] w.r.t. the prediction.
fn loss_grad(
    g: &Volume3D,
    y_hat: &Volume3D,
    m: &MaskVolume,
    kind: LossKind,
) -> Array3<f32> {
    let n = g.len() as f64;
    let masked_count = m.masked_count().max(1) as f64;
    let mut grad = Array3::<f32>::zeros(g.dims());
    ndarray::Zip::from(&mut grad)
        .and(g.data())
        .and(y_hat.data())
        .and(m.as_volume().data())
        .for_each(|out, &gv, &yv, &mv| {
            let d = f64::from(yv) - f64::from(gv);
            let base = match kind {
                LossKind::SquaredError => 2.0 * d,
                LossKind::AbsoluteError => d.signum(),
            };
            let mut acc = base / n;
            if mv == 1.0 {
                acc += base / masked_count;
            }
            *out = acc as f32;
        });
    grad
}

/// Loss and parameter gradients for one sample at a fixed `(t, eps)`.
/// Deterministic; [`train_step`] supplies the random draws.
pub fn sample_loss_and_grads(
    model: &DenoiserModel,
    sample: &InpaintSample,
    t: usize,
    eps: &WaveletCoeffs,
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, ParamSet<f32>)> {
    let g = sample
        .ground_truth()
        .ok_or_else(|| Error::Validation("training requires the ground truth volume".into()))?;
    let x0 = dwt3(g, cfg.coeff_scale)?;
    let x_t = q_sample(&x0, t, eps, schedule)?;
    let cond_v = dwt3(sample.voided(), cfg.coeff_scale)?;
    let cond_m = dwt3(sample.mask().as_volume(), cfg.coeff_scale)?;
    let input = conditioned_input(&cond_v, &cond_m, &x_t)?;

    let tape = forward_tape(&model.config, &model.params, &input, t, schedule.num_steps())?;
    let y_hat_arr = idwt3_array(&tape.output, cfg.coeff_scale)?;
    let y_hat = Volume3D::from_array(y_hat_arr)?;

    let loss = compute_loss(g, &y_hat, sample.mask(), cfg.loss_kind)?;

    // pull the voxel-space gradient back through the linear inverse
    // transform: d(loss)/d(coeffs) = dwt3(d(loss)/d(y)) / coeff_scale
    let grad_y = loss_grad(g, &y_hat, sample.mask(), cfg.loss_kind);
    let grad_coeffs = dwt3_array(&grad_y, 1.0 / cfg.coeff_scale)?;
    let grads = tape.backward(&grad_coeffs)?;
    Ok((loss, grads))
}

/// Adam moment estimates, one slot per scalar parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update in place.
    pub fn update(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &ParamSet<f32>,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let mut flat = params.flatten();
        let grad_flat = grads.flatten();
        if flat.len() != self.m.len() || grad_flat.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state sized for {} parameters, got {} / {}",
                self.m.len(),
                flat.len(),
                grad_flat.len()
            )));
        }
        self.step += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let corr1 = 1.0 - b1.powi(self.step as i32);
        let corr2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..flat.len() {
            let gi = f64::from(grad_flat[i]);
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
            let m_hat = self.m[i] / corr1;
            let v_hat = self.v[i] / corr2;
            flat[i] =
                (f64::from(flat[i]) - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps))
                    as f32;
        }
        params.assign_flat(&flat)
    }
}

/// One gradient step on a single sample: draws `t` and the noise, runs the
/// pipeline, applies Adam.
pub fn train_step(
    model: &mut DenoiserModel,
    sample: &InpaintSample,
    schedule: &Schedule,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    adam: &mut AdamState,
) -> Result<LossBreakdown> {
    train_batch_step(model, &[sample], schedule, cfg, rng, adam).map(|(loss, _)| loss)
}

/// One gradient step on a batch. A single `t` is drawn per step (shared by
/// the batch); noise is drawn per sample. Gradients are averaged in batch
/// order, so results are reproducible.
pub fn train_batch_step(
    model: &mut DenoiserModel,
    batch: &[&InpaintSample],
    schedule: &Schedule,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    adam: &mut AdamState,
) -> Result<(LossBreakdown, usize)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let t = rng.uniform_step(schedule.num_steps());

    let mut losses = Vec::with_capacity(batch.len());
    let mut grad_acc: Option<ParamSet<f32>> = None;
    for sample in batch {
        let g = sample
            .ground_truth()
            .ok_or_else(|| Error::Validation("training requires the ground truth volume".into()))?;
        let proto = dwt3(g, cfg.coeff_scale)?;
        let eps = rng.standard_normal_like(&proto);
        let (loss, grads) = sample_loss_and_grads(model, sample, t, &eps, schedule, cfg)?;
        losses.push(loss);
        grad_acc = Some(match grad_acc {
            None => grads,
            Some(mut acc) => {
                let mut flat = acc.flatten();
                for (a, b) in flat.iter_mut().zip(grads.flatten()) {
                    *a += b;
                }
                acc.assign_flat(&flat)?;
                acc
            }
        });
    }
    let mut grads = grad_acc.expect("nonempty batch");
    if batch.len() > 1 {
        let scale = 1.0 / batch.len() as f32;
        let flat: Vec<f32> = grads.flatten().iter().map(|v| v * scale).collect();
        grads.assign_flat(&flat)?;
    }
    adam.update(&mut model.params, &grads, cfg)?;
    Ok((LossBreakdown::mean_of(&losses), t))
}

/// One per-step row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub t_drawn: usize,
    pub l_recon: f64,
    pub l_masked: f64,
    pub total: f64,
}

/// Trained model plus its loss history.
pub struct TrainOutput {
    pub model: DenoiserModel,
    pub history: Vec<HistoryRow>,
}

/// Full training run: seeded shuffling, `cfg.steps` batch steps, one
/// history row per step.
pub fn train_loop(dataset: &[InpaintSample], cfg: &TrainConfig) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    cfg.validate()?;
    let schedule = build_schedule(&cfg.schedule)?;
    let mut model = init_model(&cfg.denoiser, cfg.seed)?;
    let mut adam = AdamState::new(cfg.denoiser.num_params());
    let mut rng = SeededRng::new(cfg.seed);
    let mut shuffle_rng = rng.derive(1);

    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch: Vec<&InpaintSample> = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..dataset.len()).collect();
                shuffle_rng.shuffle(&mut order);
            }
            batch.push(&dataset[order.pop().expect("refilled above")]);
        }
        let (loss, t) = train_batch_step(&mut model, &batch, &schedule, cfg, &mut rng, &mut adam)?;
        history.push(HistoryRow {
            step,
            t_drawn: t,
            l_recon: loss.l_recon,
            l_masked: loss.l_masked,
            total: loss.total,
        });
    }
    Ok(TrainOutput { model, history })
}

/// Writes `(step, t_drawn, l_recon, l_masked, total)` rows.
pub fn write_history_csv(history: &[HistoryRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,t_drawn,l_recon,l_masked,total")?;
    for row in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.step, row.t_drawn, row.l_recon, row.l_masked, row.total
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{gen_phantom, PhantomSpec};
    use crate::wavelet::idwt3;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_phantom(seed: u64) -> InpaintSample {
        let mut spec = PhantomSpec::new(seed);
        spec.dims = (16, 16, 16);
        spec.mask_radius_min = 2;
        spec.mask_radius_max = 3;
        gen_phantom(&spec).unwrap()
    }

    fn tiny_train_config(steps: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(ScheduleParams::variance_preserving(2), steps);
        cfg.denoiser = DenoiserConfig {
            hidden_channels: 8,
            num_hidden_convs: 2,
            time_embed_dim: 8,
        };
        cfg
    }

    #[test]
    fn loss_of_perfect_reconstruction_is_zero() {
        let sample = small_phantom(1);
        let g = sample.ground_truth().unwrap();
        let loss = compute_loss(g, g, sample.mask(), LossKind::SquaredError).unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.l_recon, 0.0);
        assert_eq!(loss.l_masked, 0.0);
    }

    #[test]
    fn constant_error_case() {
        // g = 1, y = 0 everywhere, mask covering half the voxels
        let dims = (4, 4, 4);
        let g = Volume3D::from_vec(dims, vec![1.0; 64]).unwrap();
        let y = Volume3D::from_vec(dims, vec![0.0; 64]).unwrap();
        let mut mdata = Array3::<f32>::zeros(dims);
        for i in 0..2 {
            for j in 0..4 {
                for k in 0..4 {
                    mdata[[i, j, k]] = 1.0;
                }
            }
        }
        let m = MaskVolume::from_volume(Volume3D::from_array(mdata).unwrap()).unwrap();
        let loss = compute_loss(&g, &y, &m, LossKind::SquaredError).unwrap();
        assert_eq!(loss.l_recon, 1.0);
        assert_eq!(loss.l_masked, 1.0);
        assert_eq!(loss.total, 2.0);
    }

    #[test]
    fn empty_mask_is_guarded() {
        let dims = (4, 4, 4);
        let g = Volume3D::from_vec(dims, vec![1.0; 64]).unwrap();
        let y = Volume3D::from_vec(dims, vec![0.0; 64]).unwrap();
        let m = MaskVolume::from_volume(Volume3D::zeros(dims).unwrap()).unwrap();
        let loss = compute_loss(&g, &y, &m, LossKind::SquaredError).unwrap();
        assert_eq!(loss.l_masked, 0.0);
        assert_eq!(loss.total, 1.0);
    }

    #[test]
    fn loss_is_symmetric_in_its_operands() {
        let a = small_phantom(2);
        let b = small_phantom(3);
        let (ga, gb) = (a.ground_truth().unwrap(), b.ground_truth().unwrap());
        for kind in [LossKind::SquaredError, LossKind::AbsoluteError] {
            let l1 = compute_loss(ga, gb, a.mask(), kind).unwrap();
            let l2 = compute_loss(gb, ga, a.mask(), kind).unwrap();
            assert_eq!(l1, l2);
        }
    }

    #[test]
    fn zero_model_loss_matches_closed_form() {
        let sample = small_phantom(4);
        let cfg = tiny_train_config(1);
        let schedule = build_schedule(&cfg.schedule).unwrap();
        let model = init_model(&cfg.denoiser, 0).unwrap();
        let g = sample.ground_truth().unwrap();
        let x0 = dwt3(g, cfg.coeff_scale).unwrap();
        let mut rng = SeededRng::new(5);
        let eps = rng.standard_normal_like(&x0);
        let (loss, _) =
            sample_loss_and_grads(&model, &sample, 1, &eps, &schedule, &cfg).unwrap();
        // zero prediction: L_y = mean(g^2), L_ym = masked mean(g^2)
        let zeros = Volume3D::zeros(g.dims()).unwrap();
        let expect = compute_loss(g, &zeros, sample.mask(), cfg.loss_kind).unwrap();
        assert!((loss.total - expect.total).abs() < 1e-9);
    }

    #[test]
    fn idwt_gradient_identity_holds_numerically() {
        // d(loss)/d(coeffs) computed by the pullback must match central
        // finite differences through idwt3 alone.
        let sample = small_phantom(6);
        let g = sample.ground_truth().unwrap();
        let scale = DEFAULT_COEFF_SCALE;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coeffs = {
            let mut c = WaveletCoeffs::zeros((8, 8, 8), scale);
            for v in c.bands_mut().iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
            c
        };
        let y = idwt3(&coeffs).unwrap();
        let grad_y = loss_grad(g, &y, sample.mask(), LossKind::SquaredError);
        let analytic = dwt3_array(&grad_y, 1.0 / scale).unwrap();

        let loss_of = |bands: &ndarray::Array4<f32>| -> f64 {
            let y = Volume3D::from_array(idwt3_array(bands, scale).unwrap()).unwrap();
            compute_loss(g, &y, sample.mask(), LossKind::SquaredError)
                .unwrap()
                .total
        };
        let h = 1e-2f32;
        let mut checked = 0;
        for idx in [(0, 0, 0, 0), (3, 1, 2, 3), (7, 7, 7, 7), (5, 0, 3, 1)] {
            let mut plus = coeffs.bands().clone();
            plus[idx] += h;
            let mut minus = coeffs.bands().clone();
            minus[idx] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * f64::from(h));
            let a = f64::from(analytic[idx]);
            assert!(
                (fd - a).abs() <= 1e-3 * a.abs().max(fd.abs()).max(1e-4),
                "coeff {idx:?}: analytic {a} vs fd {fd}"
            );
            checked += 1;
        }
        assert_eq!(checked, 4);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let dataset: Vec<InpaintSample> = (0..2).map(small_phantom).collect();
        let mut cfg = tiny_train_config(5);
        cfg.seed = 42;
        let a = train_loop(&dataset, &cfg).unwrap();
        let b = train_loop(&dataset, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params.flatten(), b.model.params.flatten());
    }

    #[test]
    fn zero_steps_returns_initial_model_and_empty_history() {
        let dataset = vec![small_phantom(8)];
        let cfg = tiny_train_config(0);
        let out = train_loop(&dataset, &cfg).unwrap();
        assert!(out.history.is_empty());
        let fresh = init_model(&cfg.denoiser, cfg.seed).unwrap();
        assert_eq!(out.model.params.flatten(), fresh.params.flatten());
    }

    #[test]
    fn history_length_matches_steps() {
        let dataset: Vec<InpaintSample> = (0..3).map(small_phantom).collect();
        let cfg = tiny_train_config(7);
        let out = train_loop(&dataset, &cfg).unwrap();
        assert_eq!(out.history.len(), 7);
        for (i, row) in out.history.iter().enumerate() {
            assert_eq!(row.step, i);
            assert!(row.t_drawn >= 1 && row.t_drawn <= 2);
            assert!((row.total - row.l_recon - row.l_masked).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = tiny_train_config(1);
        assert!(matches!(
            train_loop(&[], &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn loss_decreases_on_a_single_fixed_phantom() {
        let sample = small_phantom(10);
        let mut cfg = tiny_train_config(200);
        cfg.batch_size = 1;
        cfg.learning_rate = 1e-3;
        cfg.seed = 3;
        let out = train_loop(std::slice::from_ref(&sample), &cfg).unwrap();
        let initial = out.history.first().unwrap().total;
        let last = out.history.last().unwrap().total;
        assert!(
            last < 0.5 * initial,
            "loss did not halve: {initial} -> {last}"
        );
    }

    #[test]
    fn trained_model_responds_to_time_conditioning() {
        let sample = small_phantom(12);
        let mut cfg = tiny_train_config(50);
        cfg.batch_size = 1;
        cfg.learning_rate = 1e-3;
        let out = train_loop(std::slice::from_ref(&sample), &cfg).unwrap();
        let schedule = build_schedule(&cfg.schedule).unwrap();
        let x0 = dwt3(sample.ground_truth().unwrap(), cfg.coeff_scale).unwrap();
        let mut rng = SeededRng::new(9);
        let eps = rng.standard_normal_like(&x0);
        let x_t = q_sample(&x0, 2, &eps, &schedule).unwrap();
        let cond_v = dwt3(sample.voided(), cfg.coeff_scale).unwrap();
        let cond_m = dwt3(sample.mask().as_volume(), cfg.coeff_scale).unwrap();
        let input = conditioned_input(&cond_v, &cond_m, &x_t).unwrap();
        let y1 = crate::denoiser::forward(&out.model, &input, 1, 2).unwrap();
        let y2 = crate::denoiser::forward(&out.model, &input, 2, 2).unwrap();
        let max_diff = y1
            .iter()
            .zip(y2.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let rows = vec![HistoryRow {
            step: 0,
            t_drawn: 2,
            l_recon: 0.5,
            l_masked: 0.25,
            total: 0.75,
        }];
        write_history_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,t_drawn,l_recon,l_masked,total\n0,2,0.5,0.25,0.75\n");
    }
}
