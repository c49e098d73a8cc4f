//! A small time-conditioned 3D convnet predicting clean wavelet
//! coefficients from a 24-channel conditioned state.
//!
//! Layer stack: 3x3x3 same-padded conv (24 -> C), plus a per-channel bias
//! projected from a sinusoidal embedding of `t/T`, SiLU, `num_hidden_convs`
//! further 3x3x3 convs (C -> C) each followed by SiLU, and a final 3x3x3
//! conv (C -> 8). The output conv is zero-initialized so a fresh model
//! predicts exactly zero, a neutral starting point for clean-signal
//! prediction.
//!
//! Forward and reverse passes are hand-written and generic over the float
//! type; gradients are checked against central finite differences in the
//! tests (the `f64` instantiation exists for that purpose).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4, Array5, NdFloat};

use crate::diffusion::SeededRng;
use crate::error::{Error, Result};
use crate::volume;

/// Conditioned input: coefficients of the voided image, the mask, and the
/// noisy state, 8 bands each.
pub const INPUT_CHANNELS: usize = 24;
/// Predicted clean coefficients, one per band.
pub const OUTPUT_CHANNELS: usize = 8;
/// Fixed kernel edge length.
pub const KERNEL: usize = 3;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FWCK";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub hidden_channels: usize,
    pub num_hidden_convs: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            num_hidden_convs: 2,
            time_embed_dim: 16,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels < 4 {
            return Err(Error::Validation(format!(
                "hidden_channels must be >= 4, got {}",
                self.hidden_channels
            )));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "time_embed_dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    /// Total scalar parameter count implied by this configuration.
    pub fn num_params(&self) -> usize {
        let c = self.hidden_channels;
        let d = self.time_embed_dim;
        let k3 = KERNEL * KERNEL * KERNEL;
        let conv_in = c * INPUT_CHANNELS * k3 + c;
        let time = c * d + c;
        let hidden = self.num_hidden_convs * (c * c * k3 + c);
        let conv_out = OUTPUT_CHANNELS * c * k3 + OUTPUT_CHANNELS;
        conv_in + time + hidden + conv_out
    }
}

/// All trainable tensors, in declaration order. Shared between the model
/// (f32) and gradient accumulators; the f64 instantiation backs the
/// finite-difference oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub conv_in_w: Array5<F>,
    pub conv_in_b: Array1<F>,
    pub time_w: Array2<F>,
    pub time_b: Array1<F>,
    pub hidden_w: Vec<Array5<F>>,
    pub hidden_b: Vec<Array1<F>>,
    pub conv_out_w: Array5<F>,
    pub conv_out_b: Array1<F>,
}

impl<F: NdFloat> ParamSet<F> {
    pub fn zeros(cfg: &DenoiserConfig) -> Self {
        let c = cfg.hidden_channels;
        Self {
            conv_in_w: Array5::zeros((c, INPUT_CHANNELS, KERNEL, KERNEL, KERNEL)),
            conv_in_b: Array1::zeros(c),
            time_w: Array2::zeros((c, cfg.time_embed_dim)),
            time_b: Array1::zeros(c),
            hidden_w: (0..cfg.num_hidden_convs)
                .map(|_| Array5::zeros((c, c, KERNEL, KERNEL, KERNEL)))
                .collect(),
            hidden_b: (0..cfg.num_hidden_convs).map(|_| Array1::zeros(c)).collect(),
            conv_out_w: Array5::zeros((OUTPUT_CHANNELS, c, KERNEL, KERNEL, KERNEL)),
            conv_out_b: Array1::zeros(OUTPUT_CHANNELS),
        }
    }

    /// Tensors in declaration order (the checkpoint and flattening order).
    pub fn tensors(&self) -> Vec<ndarray::ArrayViewD<'_, F>> {
        let mut v: Vec<ndarray::ArrayViewD<'_, F>> = vec![
            self.conv_in_w.view().into_dyn(),
            self.conv_in_b.view().into_dyn(),
            self.time_w.view().into_dyn(),
            self.time_b.view().into_dyn(),
        ];
        for (w, b) in self.hidden_w.iter().zip(&self.hidden_b) {
            v.push(w.view().into_dyn());
            v.push(b.view().into_dyn());
        }
        v.push(self.conv_out_w.view().into_dyn());
        v.push(self.conv_out_b.view().into_dyn());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, F>> {
        let mut v: Vec<ndarray::ArrayViewMutD<'_, F>> = vec![
            self.conv_in_w.view_mut().into_dyn(),
            self.conv_in_b.view_mut().into_dyn(),
            self.time_w.view_mut().into_dyn(),
            self.time_b.view_mut().into_dyn(),
        ];
        for (w, b) in self.hidden_w.iter_mut().zip(self.hidden_b.iter_mut()) {
            v.push(w.view_mut().into_dyn());
            v.push(b.view_mut().into_dyn());
        }
        v.push(self.conv_out_w.view_mut().into_dyn());
        v.push(self.conv_out_b.view_mut().into_dyn());
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for mut t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

impl ParamSet<f32> {
    pub fn to_f64(&self) -> ParamSet<f64> {
        ParamSet {
            conv_in_w: self.conv_in_w.mapv(f64::from),
            conv_in_b: self.conv_in_b.mapv(f64::from),
            time_w: self.time_w.mapv(f64::from),
            time_b: self.time_b.mapv(f64::from),
            hidden_w: self.hidden_w.iter().map(|w| w.mapv(f64::from)).collect(),
            hidden_b: self.hidden_b.iter().map(|b| b.mapv(f64::from)).collect(),
            conv_out_w: self.conv_out_w.mapv(f64::from),
            conv_out_b: self.conv_out_b.mapv(f64::from),
        }
    }
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: ParamSet<f32>,
}

/// Anything that predicts clean coefficients from a conditioned state.
/// Implemented by [`DenoiserModel`] and by test oracles.
pub trait Denoise {
    fn predict_x0(&self, input: &Array4<f32>, t: usize, t_total: usize) -> Result<Array4<f32>>;
}

impl Denoise for DenoiserModel {
    fn predict_x0(&self, input: &Array4<f32>, t: usize, t_total: usize) -> Result<Array4<f32>> {
        forward(self, input, t, t_total)
    }
}

/// Fan-in-scaled uniform init, deterministic per seed. The output conv and
/// all biases start at zero.
pub fn init_model(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserModel> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    let mut params = ParamSet::<f32>::zeros(cfg);

    let fill = |w: &mut Array5<f32>, fan_in: usize, rng: &mut SeededRng| {
        let limit = 1.0 / (fan_in as f32).sqrt();
        for v in w.iter_mut() {
            *v = rng.uniform_f32(-limit, limit);
        }
    };
    let k3 = KERNEL * KERNEL * KERNEL;
    fill(&mut params.conv_in_w, INPUT_CHANNELS * k3, &mut rng);
    {
        let limit = 1.0 / (cfg.time_embed_dim as f32).sqrt();
        for v in params.time_w.iter_mut() {
            *v = rng.uniform_f32(-limit, limit);
        }
    }
    for w in params.hidden_w.iter_mut() {
        let limit = 1.0 / ((cfg.hidden_channels * k3) as f32).sqrt();
        for v in w.iter_mut() {
            *v = rng.uniform_f32(-limit, limit);
        }
    }
    // conv_out_w and all biases stay zero

    Ok(DenoiserModel {
        config: *cfg,
        params,
    })
}

/// Runs the network. Output has 8 channels and the input's spatial dims.
pub fn forward(
    model: &DenoiserModel,
    input: &Array4<f32>,
    t: usize,
    t_total: usize,
) -> Result<Array4<f32>> {
    forward_params(&model.config, &model.params, input, t, t_total)
}

/// Generic forward pass over any float type.
pub fn forward_params<F: NdFloat>(
    cfg: &DenoiserConfig,
    params: &ParamSet<F>,
    input: &Array4<F>,
    t: usize,
    t_total: usize,
) -> Result<Array4<F>> {
    Ok(forward_tape(cfg, params, input, t, t_total)?.output)
}

/// Parameter gradients of `sum(grad_out * forward(...))` via reverse-mode
/// accumulation. Recomputes the forward pass internally; hot paths should
/// hold a [`ForwardTape`] instead.
pub fn backward(
    model: &DenoiserModel,
    input: &Array4<f32>,
    t: usize,
    t_total: usize,
    grad_out: &Array4<f32>,
) -> Result<ParamSet<f32>> {
    let tape = forward_tape(&model.config, &model.params, input, t, t_total)?;
    tape.backward(grad_out)
}

/// Forward pass with the intermediate activations needed for one reverse
/// sweep.
pub struct ForwardTape<'a, F> {
    cfg: &'a DenoiserConfig,
    params: &'a ParamSet<F>,
    input: &'a Array4<F>,
    embedding: Vec<F>,
    /// Pre-activation of conv_in (+ time bias) and of each hidden conv.
    pre: Vec<Array4<F>>,
    /// SiLU outputs feeding the next layer, same indexing as `pre`.
    post: Vec<Array4<F>>,
    pub output: Array4<F>,
}

pub fn forward_tape<'a, F: NdFloat>(
    cfg: &'a DenoiserConfig,
    params: &'a ParamSet<F>,
    input: &'a Array4<F>,
    t: usize,
    t_total: usize,
) -> Result<ForwardTape<'a, F>> {
    let channels = input.dim().0;
    if channels != INPUT_CHANNELS {
        return Err(Error::Shape(format!(
            "expected {INPUT_CHANNELS}-channel input, got {channels}"
        )));
    }
    if t_total < 1 || t < 1 || t > t_total {
        return Err(Error::Validation(format!(
            "step {t} outside 1..={t_total}"
        )));
    }

    let embedding = time_embedding::<F>(t, t_total, cfg.time_embed_dim);
    let time_bias = project_embedding(params, &embedding);

    let mut pre = Vec::with_capacity(1 + cfg.num_hidden_convs);
    let mut post = Vec::with_capacity(1 + cfg.num_hidden_convs);

    let mut a = conv3_same(input, &params.conv_in_w, Some(&params.conv_in_b));
    add_channel_bias(&mut a, &time_bias);
    let h = silu(&a);
    pre.push(a);
    post.push(h);

    for (w, b) in params.hidden_w.iter().zip(&params.hidden_b) {
        let a = conv3_same(post.last().unwrap(), w, Some(b));
        let h = silu(&a);
        pre.push(a);
        post.push(h);
    }

    let output = conv3_same(post.last().unwrap(), &params.conv_out_w, Some(&params.conv_out_b));

    Ok(ForwardTape {
        cfg,
        params,
        input,
        embedding,
        pre,
        post,
        output,
    })
}

impl<F: NdFloat> ForwardTape<'_, F> {
    /// Reverse sweep producing one gradient per parameter tensor.
    pub fn backward(&self, grad_out: &Array4<F>) -> Result<ParamSet<F>> {
        if grad_out.dim() != self.output.dim() {
            return Err(Error::Shape(format!(
                "grad_out shape {:?} does not match output {:?}",
                grad_out.dim(),
                self.output.dim()
            )));
        }
        let mut grads = ParamSet::<F>::zeros(self.cfg);

        // output conv
        let h_last = self.post.last().unwrap();
        conv3_weight_grads(
            grad_out,
            h_last,
            &mut grads.conv_out_w,
            &mut grads.conv_out_b,
        );
        let mut g = conv3_input_grad(grad_out, &self.params.conv_out_w);

        // hidden convs, deepest first
        for idx in (0..self.cfg.num_hidden_convs).rev() {
            silu_backward_inplace(&mut g, &self.pre[idx + 1]);
            let upstream = &self.post[idx];
            conv3_weight_grads(
                &g,
                upstream,
                &mut grads.hidden_w[idx],
                &mut grads.hidden_b[idx],
            );
            g = conv3_input_grad(&g, &self.params.hidden_w[idx]);
        }

        // input conv and the time projection: both biases see the same
        // per-channel spatial sum
        silu_backward_inplace(&mut g, &self.pre[0]);
        let channel_sums = sum_per_channel(&g);
        for (c, &s) in channel_sums.iter().enumerate() {
            grads.conv_in_b[c] = s;
            grads.time_b[c] = s;
            for (d, &e) in self.embedding.iter().enumerate() {
                grads.time_w[[c, d]] = s * e;
            }
        }
        let mut unused_bias = Array1::zeros(self.cfg.hidden_channels);
        conv3_weight_grads(&g, self.input, &mut grads.conv_in_w, &mut unused_bias);

        Ok(grads)
    }
}

/// Sinusoidal embedding of the normalized step. `t/T` is mapped to a
/// pseudo-position in [0, 1000] and expanded with geometric frequencies,
/// sines in the first half, cosines in the second.
pub fn time_embedding<F: NdFloat>(t: usize, t_total: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let pos = 1000.0 * (t as f64) / (t_total as f64);
    let mut emb = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000.0f64).ln() * (i as f64) / (half as f64)).exp();
        let angle = pos * freq;
        emb[i] = F::from(angle.sin()).unwrap();
        emb[half + i] = F::from(angle.cos()).unwrap();
    }
    emb
}

fn project_embedding<F: NdFloat>(params: &ParamSet<F>, emb: &[F]) -> Vec<F> {
    let (c, d) = params.time_w.dim();
    debug_assert_eq!(d, emb.len());
    (0..c)
        .map(|ci| {
            let mut acc = params.time_b[ci];
            for (di, &e) in emb.iter().enumerate() {
                acc += params.time_w[[ci, di]] * e;
            }
            acc
        })
        .collect()
}

fn add_channel_bias<F: NdFloat>(a: &mut Array4<F>, bias: &[F]) {
    for (c, &b) in bias.iter().enumerate() {
        if b != F::zero() {
            a.index_axis_mut(ndarray::Axis(0), c).mapv_inplace(|v| v + b);
        }
    }
}

fn silu<F: NdFloat>(a: &Array4<F>) -> Array4<F> {
    a.mapv(|x| x * sigmoid(x))
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// In place: `g *= silu'(pre)` with `silu'(x) = s(x) (1 + x (1 - s(x)))`.
fn silu_backward_inplace<F: NdFloat>(g: &mut Array4<F>, pre: &Array4<F>) {
    ndarray::Zip::from(g).and(pre).for_each(|gv, &x| {
        let s = sigmoid(x);
        *gv = *gv * s * (F::one() + x * (F::one() - s));
    });
}

fn sum_per_channel<F: NdFloat>(g: &Array4<F>) -> Vec<F> {
    (0..g.dim().0)
        .map(|c| {
            g.index_axis(ndarray::Axis(0), c)
                .iter()
                .fold(F::zero(), |acc, &v| acc + v)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 3x3x3 same-padded convolution kernels (zero boundary fill)
// ---------------------------------------------------------------------------

/// Output voxel range along one axis for which `idx + shift` stays in
/// bounds.
fn shift_range(n: usize, shift: isize) -> (usize, usize) {
    if shift < 0 {
        ((-shift) as usize, n)
    } else {
        (0, n - shift as usize)
    }
}

fn conv3_same<F: NdFloat>(
    input: &Array4<F>,
    w: &Array5<F>,
    bias: Option<&Array1<F>>,
) -> Array4<F> {
    let (ci, d0, d1, d2) = input.dim();
    let (co, ciw, _, _, _) = w.dim();
    debug_assert_eq!(ci, ciw);
    let plane = d1 * d2;
    let vol = d0 * plane;

    let mut out = Array4::<F>::zeros((co, d0, d1, d2));
    let in_flat = input.as_slice().expect("input in standard layout");
    let out_flat = out.as_slice_mut().expect("output in standard layout");

    for o in 0..co {
        let out_ch = &mut out_flat[o * vol..(o + 1) * vol];
        if let Some(b) = bias {
            if b[o] != F::zero() {
                out_ch.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        for i in 0..ci {
            let in_ch = &in_flat[i * vol..(i + 1) * vol];
            for dz in 0..KERNEL {
                let sz = dz as isize - 1;
                let (z0, z1) = shift_range(d0, sz);
                for dy in 0..KERNEL {
                    let sy = dy as isize - 1;
                    let (y0, y1) = shift_range(d1, sy);
                    let wm = w[[o, i, dz, dy, 0]];
                    let w0 = w[[o, i, dz, dy, 1]];
                    let wp = w[[o, i, dz, dy, 2]];
                    if wm == F::zero() && w0 == F::zero() && wp == F::zero() {
                        continue;
                    }
                    for z in z0..z1 {
                        let src_z = ((z as isize + sz) as usize) * plane;
                        let dst_z = z * plane;
                        for y in y0..y1 {
                            let src_y = src_z + ((y as isize + sy) as usize) * d2;
                            let dst_y = dst_z + y * d2;
                            row_conv3(
                                &mut out_ch[dst_y..dst_y + d2],
                                &in_ch[src_y..src_y + d2],
                                wm,
                                w0,
                                wp,
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// One output row accumulating the three x-taps of a kernel row.
#[inline]
fn row_conv3<F: NdFloat>(dst: &mut [F], src: &[F], wm: F, w0: F, wp: F) {
    let n = dst.len();
    if n == 1 {
        dst[0] += w0 * src[0];
        return;
    }
    dst[0] = dst[0] + w0 * src[0] + wp * src[1];
    for x in 1..n - 1 {
        dst[x] = dst[x] + wm * src[x - 1] + w0 * src[x] + wp * src[x + 1];
    }
    dst[n - 1] = dst[n - 1] + wm * src[n - 2] + w0 * src[n - 1];
}

/// Weight and bias gradients: correlation of `grad_out` with the layer
/// input under the same shift geometry as the forward pass.
fn conv3_weight_grads<F: NdFloat>(
    grad_out: &Array4<F>,
    input: &Array4<F>,
    gw: &mut Array5<F>,
    gb: &mut Array1<F>,
) {
    let (ci, d0, d1, d2) = input.dim();
    let co = grad_out.dim().0;
    let plane = d1 * d2;
    let vol = d0 * plane;
    let g_flat = grad_out.as_slice().expect("standard layout");
    let in_flat = input.as_slice().expect("standard layout");

    for o in 0..co {
        let g_ch = &g_flat[o * vol..(o + 1) * vol];
        gb[o] = g_ch.iter().fold(F::zero(), |acc, &v| acc + v);
        for i in 0..ci {
            let in_ch = &in_flat[i * vol..(i + 1) * vol];
            for dz in 0..KERNEL {
                let sz = dz as isize - 1;
                let (z0, z1) = shift_range(d0, sz);
                for dy in 0..KERNEL {
                    let sy = dy as isize - 1;
                    let (y0, y1) = shift_range(d1, sy);
                    let mut am = F::zero();
                    let mut a0 = F::zero();
                    let mut ap = F::zero();
                    for z in z0..z1 {
                        let src_z = ((z as isize + sz) as usize) * plane;
                        let dst_z = z * plane;
                        for y in y0..y1 {
                            let src_y = src_z + ((y as isize + sy) as usize) * d2;
                            let dst_y = dst_z + y * d2;
                            let (m, c, p) =
                                row_dot3(&g_ch[dst_y..dst_y + d2], &in_ch[src_y..src_y + d2]);
                            am += m;
                            a0 += c;
                            ap += p;
                        }
                    }
                    gw[[o, i, dz, dy, 0]] += am;
                    gw[[o, i, dz, dy, 1]] += a0;
                    gw[[o, i, dz, dy, 2]] += ap;
                }
            }
        }
    }
}

/// Per-row contributions to the three x-taps:
/// `(sum g[x] s[x-1], sum g[x] s[x], sum g[x] s[x+1])`.
#[inline]
fn row_dot3<F: NdFloat>(g: &[F], s: &[F]) -> (F, F, F) {
    let n = g.len();
    if n == 1 {
        return (F::zero(), g[0] * s[0], F::zero());
    }
    let mut am = F::zero();
    let mut a0 = g[0] * s[0];
    let mut ap = g[0] * s[1];
    for x in 1..n - 1 {
        am += g[x] * s[x - 1];
        a0 += g[x] * s[x];
        ap += g[x] * s[x + 1];
    }
    am += g[n - 1] * s[n - 2];
    a0 += g[n - 1] * s[n - 1];
    (am, a0, ap)
}

/// Gradient w.r.t. the layer input: convolution with the channel-transposed,
/// spatially flipped kernel.
fn conv3_input_grad<F: NdFloat>(grad_out: &Array4<F>, w: &Array5<F>) -> Array4<F> {
    let (co, ci, _, _, _) = w.dim();
    let mut flipped = Array5::<F>::zeros((ci, co, KERNEL, KERNEL, KERNEL));
    for o in 0..co {
        for i in 0..ci {
            for dz in 0..KERNEL {
                for dy in 0..KERNEL {
                    for dx in 0..KERNEL {
                        flipped[[i, o, dz, dy, dx]] =
                            w[[o, i, KERNEL - 1 - dz, KERNEL - 1 - dy, KERNEL - 1 - dx]];
                    }
                }
            }
        }
    }
    conv3_same(grad_out, &flipped, None)
}

// ---------------------------------------------------------------------------
// checkpoint I/O
// ---------------------------------------------------------------------------

/// Writes magic, version, the config, then every parameter tensor in
/// declaration order as little-endian f32 with u32-prefixed shapes.
pub fn save_checkpoint(model: &DenoiserModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [
        model.config.hidden_channels,
        model.config.num_hidden_convs,
        model.config.time_embed_dim,
    ] {
        let v = u32::try_from(v)
            .map_err(|_| Error::Validation(format!("config value {v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for t in model.params.tensors() {
        let shape = t.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let data: Vec<f32> = t.iter().copied().collect();
        volume::write_f32_payload(&mut w, &data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}",
            &head[0..4]
        )));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let cfg = DenoiserConfig {
        hidden_channels: read_u32(&mut r)? as usize,
        num_hidden_convs: read_u32(&mut r)? as usize,
        time_embed_dim: read_u32(&mut r)? as usize,
    };
    cfg.validate()?;

    let mut params = ParamSet::<f32>::zeros(&cfg);
    for mut t in params.tensors_mut() {
        let ndim = read_u32(&mut r)? as usize;
        if ndim != t.ndim() {
            return Err(Error::Format(format!(
                "tensor rank {ndim} does not match expected {}",
                t.ndim()
            )));
        }
        for expected in t.shape().to_vec() {
            let got = read_u32(&mut r)? as usize;
            if got != expected {
                return Err(Error::Format(format!(
                    "tensor dimension {got} does not match expected {expected}"
                )));
            }
        }
        let data = volume::read_f32_payload(&mut r, t.len())?;
        for (slot, v) in t.iter_mut().zip(data) {
            *slot = v;
        }
    }
    volume::expect_eof(&mut r)?;
    let model = DenoiserModel {
        config: cfg,
        params,
    };
    if model.params.flatten().iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok(model)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
