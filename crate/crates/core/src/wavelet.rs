//! Single-level orthonormal 3D Haar transform and its exact inverse.
//!
//! The forward transform applies the stride-2 filter pair
//! `l = (1/sqrt(2))[1, 1]` and `h = (1/sqrt(2))[-1, 1]` along axes 0, 1, 2
//! in that order, producing 8 half-resolution sub-bands ordered
//! `[lll, llh, lhl, lhh, hll, hlh, hhl, hhh]`, where letter position `i`
//! names the filter applied along axis `i`. The high-pass acts on the pair
//! `(a, b)` at positions `(2k, 2k+1)` as `(b - a)/sqrt(2)`.
//!
//! All outputs are multiplied by a configurable coefficient scale; the
//! inverse undoes it. With scale 1 the transform is orthonormal (energy
//! preserving). The default scale `2^(-3/2)` keeps the `lll` band of a
//! [-1, 1] image inside [-1, 1], commensurate with unit-variance noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis, NdFloat, Zip};

use crate::error::{Error, Result};
use crate::volume::{self, Volume3D};

/// Number of sub-bands produced by one 3D decomposition level.
pub const NUM_BANDS: usize = 8;

/// Band names in storage order; letter position i is the filter on axis i.
pub const BAND_NAMES: [&str; NUM_BANDS] = ["lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh"];

/// Default coefficient scale `2^(-3/2)`.
pub const DEFAULT_COEFF_SCALE: f32 = 0.353_553_39;

/// 8 half-resolution sub-band volumes stored as one `(8, d0/2, d1/2, d2/2)`
/// tensor; the diffusion state space.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    bands: Array4<f32>,
    scale_applied: f32,
}

impl WaveletCoeffs {
    /// Wraps a raw band tensor. The channel axis must have length 8.
    pub fn from_parts(bands: Array4<f32>, scale_applied: f32) -> Result<Self> {
        if bands.dim().0 != NUM_BANDS {
            return Err(Error::Shape(format!(
                "expected {NUM_BANDS} bands, got {}",
                bands.dim().0
            )));
        }
        if !(scale_applied > 0.0) {
            return Err(Error::Validation(format!(
                "coefficient scale must be > 0, got {scale_applied}"
            )));
        }
        Ok(Self {
            bands,
            scale_applied,
        })
    }

    pub fn zeros(band_dims: (usize, usize, usize), scale_applied: f32) -> Self {
        Self {
            bands: Array4::zeros((NUM_BANDS, band_dims.0, band_dims.1, band_dims.2)),
            scale_applied,
        }
    }

    /// Spatial dimensions of each band (half the source volume per axis).
    pub fn band_dims(&self) -> (usize, usize, usize) {
        let (_, d0, d1, d2) = self.bands.dim();
        (d0, d1, d2)
    }

    pub fn scale_applied(&self) -> f32 {
        self.scale_applied
    }

    pub fn bands(&self) -> &Array4<f32> {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut Array4<f32> {
        &mut self.bands
    }

    pub fn band(&self, index: usize) -> ndarray::ArrayView3<'_, f32> {
        self.bands.index_axis(Axis(0), index)
    }

    /// Total number of scalar coefficients.
    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn same_shape(&self, other: &WaveletCoeffs) -> bool {
        self.bands.dim() == other.bands.dim()
    }
}

/// Forward 3D Haar decomposition of a volume.
pub fn dwt3(vol: &Volume3D, coeff_scale: f32) -> Result<WaveletCoeffs> {
    let bands = dwt3_array(vol.data(), coeff_scale)?;
    Ok(WaveletCoeffs {
        bands,
        scale_applied: coeff_scale,
    })
}

/// Inverse 3D Haar reconstruction, undoing the stored coefficient scale.
pub fn idwt3(coeffs: &WaveletCoeffs) -> Result<Volume3D> {
    let data = idwt3_array(&coeffs.bands, coeffs.scale_applied)?;
    Volume3D::from_array(data)
}

/// Generic forward transform on a raw array; `f64` used by test oracles.
pub fn dwt3_array<F: NdFloat>(vol: &Array3<F>, coeff_scale: F) -> Result<Array4<F>> {
    let (d0, d1, d2) = vol.dim();
    if d0 % 2 != 0 || d1 % 2 != 0 || d2 % 2 != 0 {
        return Err(Error::Shape(format!(
            "all dimensions must be even for a stride-2 decomposition, got {d0}x{d1}x{d2}"
        )));
    }
    if d0 == 0 || d1 == 0 || d2 == 0 {
        return Err(Error::Shape("empty volume".into()));
    }
    if !(coeff_scale > F::zero()) {
        return Err(Error::Validation("coeff_scale must be > 0".into()));
    }

    let mut buf = vol.to_owned();
    for axis in 0..3 {
        buf = forward_axis(&buf, axis);
    }

    let (h0, h1, h2) = (d0 / 2, d1 / 2, d2 / 2);
    let mut bands = Array4::zeros((NUM_BANDS, h0, h1, h2));
    for b in 0..NUM_BANDS {
        let (o0, o1, o2) = octant_offsets(b, (h0, h1, h2));
        bands
            .slice_mut(s![b, .., .., ..])
            .assign(&buf.slice(s![o0..o0 + h0, o1..o1 + h1, o2..o2 + h2]));
    }
    if coeff_scale != F::one() {
        bands.mapv_inplace(|x| x * coeff_scale);
    }
    Ok(bands)
}

/// Generic inverse transform on a raw band tensor.
pub fn idwt3_array<F: NdFloat>(bands: &Array4<F>, coeff_scale: F) -> Result<Array3<F>> {
    let (nb, h0, h1, h2) = bands.dim();
    if nb != NUM_BANDS {
        return Err(Error::Shape(format!("expected {NUM_BANDS} bands, got {nb}")));
    }
    if h0 == 0 || h1 == 0 || h2 == 0 {
        return Err(Error::Shape("empty band volume".into()));
    }
    if !(coeff_scale > F::zero()) {
        return Err(Error::Validation("coeff_scale must be > 0".into()));
    }

    let mut buf = Array3::zeros((2 * h0, 2 * h1, 2 * h2));
    for b in 0..NUM_BANDS {
        let (o0, o1, o2) = octant_offsets(b, (h0, h1, h2));
        buf.slice_mut(s![o0..o0 + h0, o1..o1 + h1, o2..o2 + h2])
            .assign(&bands.slice(s![b, .., .., ..]));
    }
    if coeff_scale != F::one() {
        let inv = F::one() / coeff_scale;
        buf.mapv_inplace(|x| x * inv);
    }
    for axis in (0..3).rev() {
        buf = inverse_axis(&buf, axis);
    }
    Ok(buf)
}

/// One stride-2 analysis pass along `axis`: low half then high half.
fn forward_axis<F: NdFloat>(src: &Array3<F>, axis: usize) -> Array3<F> {
    let inv_sqrt2 = F::from(std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let half = src.len_of(Axis(axis)) / 2;
    let mut dst = Array3::zeros(src.dim());
    Zip::from(dst.lanes_mut(Axis(axis)))
        .and(src.lanes(Axis(axis)))
        .for_each(|mut d, s_lane| {
            for k in 0..half {
                let a = s_lane[2 * k];
                let b = s_lane[2 * k + 1];
                d[k] = (a + b) * inv_sqrt2;
                d[half + k] = (b - a) * inv_sqrt2;
            }
        });
    dst
}

/// Inverse of [`forward_axis`].
fn inverse_axis<F: NdFloat>(src: &Array3<F>, axis: usize) -> Array3<F> {
    let inv_sqrt2 = F::from(std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let half = src.len_of(Axis(axis)) / 2;
    let mut dst = Array3::zeros(src.dim());
    Zip::from(dst.lanes_mut(Axis(axis)))
        .and(src.lanes(Axis(axis)))
        .for_each(|mut d, s_lane| {
            for k in 0..half {
                let low = s_lane[k];
                let high = s_lane[half + k];
                d[2 * k] = (low - high) * inv_sqrt2;
                d[2 * k + 1] = (low + high) * inv_sqrt2;
            }
        });
    dst
}

/// Octant origin of band `b`: bit 2 selects the high half of axis 0,
/// bit 1 of axis 1, bit 0 of axis 2.
fn octant_offsets(b: usize, half: (usize, usize, usize)) -> (usize, usize, usize) {
    (
        if b & 4 != 0 { half.0 } else { 0 },
        if b & 2 != 0 { half.1 } else { 0 },
        if b & 1 != 0 { half.2 } else { 0 },
    )
}

/// Serializes a coefficient set: FW3D header with the coefficient dtype,
/// band dims in the header, the applied scale in the reserved field, then
/// the 8 band payloads in storage order.
pub fn save_coeffs(coeffs: &WaveletCoeffs, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let reserved = coeffs.scale_applied.to_le_bytes();
    volume::write_header(&mut w, volume::DTYPE_COEFFS, coeffs.band_dims(), reserved)?;
    let flat = coeffs
        .bands
        .as_slice()
        .expect("bands stored in standard layout");
    volume::write_f32_payload(&mut w, flat)?;
    w.flush()?;
    Ok(())
}

/// Reads a coefficient set written by [`save_coeffs`].
pub fn load_coeffs(path: &Path) -> Result<WaveletCoeffs> {
    let mut r = BufReader::new(File::open(path)?);
    let (dtype, dims, reserved) = volume::read_header(&mut r)?;
    if dtype != volume::DTYPE_COEFFS {
        return Err(Error::Format(format!(
            "expected coefficient dtype {}, found {dtype}",
            volume::DTYPE_COEFFS
        )));
    }
    let scale = f32::from_le_bytes(reserved);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Format(format!("invalid coefficient scale {scale}")));
    }
    let n = NUM_BANDS * dims.0 * dims.1 * dims.2;
    let data = volume::read_f32_payload(&mut r, n)?;
    volume::expect_eof(&mut r)?;
    let bands = Array4::from_shape_vec((NUM_BANDS, dims.0, dims.1, dims.2), data)
        .map_err(|e| Error::Format(e.to_string()))?;
    WaveletCoeffs::from_parts(bands, scale)
}
