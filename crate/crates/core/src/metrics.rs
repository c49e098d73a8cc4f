//! SSIM, MSE and PSNR for 3D volumes, whole-volume or mask-restricted.
//!
//! SSIM uses a separable 3D Gaussian window (default 7^3, sigma 1.5) with
//! per-position weight renormalization at the boundary, so constant inputs
//! have exactly zero local variance everywhere and the constant-patch
//! closed form holds including edge voxels. All accumulation is `f64`.
//!
//! The evaluation region and data range are caller's choices;
//! [`compute_report`] defaults the range to `max(gt) - min(gt)` per volume.

use std::fmt;

use ndarray::{Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricRegion {
    Whole,
    Masked,
}

impl fmt::Display for MetricRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricRegion::Whole => "whole",
            MetricRegion::Masked => "masked",
        })
    }
}

/// SSIM window shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            sigma: 1.5,
        }
    }
}

/// The metric triple for one (ground truth, prediction) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub ssim: f64,
    pub mse: f64,
    /// `+inf` sentinel when `mse == 0`.
    pub psnr: f64,
    pub region: MetricRegion,
    pub data_range: f64,
}

fn check_pair(a: &Volume3D, b: &Volume3D, region: Option<&MaskVolume>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "volume dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if let Some(m) = region {
        if m.dims() != a.dims() {
            return Err(Error::Shape(format!(
                "region dims {:?} do not match volume dims {:?}",
                m.dims(),
                a.dims()
            )));
        }
        if m.masked_count() == 0 {
            return Err(Error::Validation("empty evaluation region".into()));
        }
    }
    Ok(())
}

/// Mean squared difference over the region (whole volume if `None`).
pub fn mse(a: &Volume3D, b: &Volume3D, region: Option<&MaskVolume>) -> Result<f64> {
    check_pair(a, b, region)?;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    match region {
        None => {
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                let d = f64::from(x) - f64::from(y);
                acc += d * d;
            }
            count = a.len();
        }
        Some(m) => {
            for ((&x, &y), &w) in a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .zip(m.as_volume().as_slice())
            {
                if w == 1.0 {
                    let d = f64::from(x) - f64::from(y);
                    acc += d * d;
                    count += 1;
                }
            }
        }
    }
    Ok(acc / count as f64)
}

/// `10 log10(data_range^2 / mse)`; `+inf` when the volumes coincide.
pub fn psnr(
    a: &Volume3D,
    b: &Volume3D,
    data_range: f64,
    region: Option<&MaskVolume>,
) -> Result<f64> {
    let err = mse(a, b, region)?;
    psnr_from_mse(data_range, err)
}

/// The PSNR formula on a precomputed mean squared error.
pub fn psnr_from_mse(data_range: f64, mse: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Validation(format!(
            "data_range must be > 0, got {data_range}"
        )));
    }
    if mse < 0.0 {
        return Err(Error::Validation(format!("mse must be >= 0, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Mean structural similarity over the region.
pub fn ssim3d(
    a: &Volume3D,
    b: &Volume3D,
    data_range: f64,
    params: &SsimParams,
    region: Option<&MaskVolume>,
) -> Result<f64> {
    check_pair(a, b, region)?;
    if !(data_range > 0.0) {
        return Err(Error::Validation(format!(
            "data_range must be > 0, got {data_range}"
        )));
    }
    if params.window < 1 || !(params.sigma > 0.0) {
        return Err(Error::Validation("window must be >= 1 and sigma > 0".into()));
    }
    let (d0, d1, d2) = a.dims();
    if d0 < params.window || d1 < params.window || d2 < params.window {
        return Err(Error::Validation(format!(
            "volume {d0}x{d1}x{d2} smaller than the {} window",
            params.window
        )));
    }

    let kernel = gaussian_kernel(params.window, params.sigma);
    let av = a.data().mapv(f64::from);
    let bv = b.data().mapv(f64::from);

    let mu_a = gaussian_filter(&av, &kernel);
    let mu_b = gaussian_filter(&bv, &kernel);
    let e_aa = gaussian_filter(&(&av * &av), &kernel);
    let e_bb = gaussian_filter(&(&bv * &bv), &kernel);
    let e_ab = gaussian_filter(&(&av * &bv), &kernel);

    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);

    let mut ssim_map = Array3::<f64>::zeros(a.dims());
    Zip::from(&mut ssim_map)
        .and(&mu_a)
        .and(&mu_b)
        .and(&e_aa)
        .and(&e_bb)
        .and(&e_ab)
        .for_each(|s, &ma, &mb, &eaa, &ebb, &eab| {
            let var_a = eaa - ma * ma;
            let var_b = ebb - mb * mb;
            let cov = eab - ma * mb;
            *s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        });

    match region {
        None => Ok(ssim_map.iter().sum::<f64>() / ssim_map.len() as f64),
        Some(m) => {
            let mut acc = 0.0;
            let mut count = 0usize;
            Zip::from(&ssim_map)
                .and(m.as_volume().data())
                .for_each(|&s, &w| {
                    if w == 1.0 {
                        acc += s;
                        count += 1;
                    }
                });
            Ok(acc / count as f64)
        }
    }
}

/// The SSIM/MSE/PSNR triple; `data_range` defaults to the ground truth's
/// value range.
pub fn compute_report(
    gt: &Volume3D,
    pred: &Volume3D,
    region: Option<&MaskVolume>,
    data_range: Option<f64>,
    params: &SsimParams,
) -> Result<MetricReport> {
    let data_range = match data_range {
        Some(r) => r,
        None => {
            let (lo, hi) = gt.value_range();
            let r = f64::from(hi) - f64::from(lo);
            if r <= 0.0 {
                return Err(Error::DegenerateInput(
                    "constant ground truth has zero data range".into(),
                ));
            }
            r
        }
    };
    Ok(MetricReport {
        ssim: ssim3d(gt, pred, data_range, params, region)?,
        mse: mse(gt, pred, region)?,
        psnr: psnr(gt, pred, data_range, region)?,
        region: if region.is_some() {
            MetricRegion::Masked
        } else {
            MetricRegion::Whole
        },
        data_range,
    })
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let center = (window as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..window)
        .map(|i| {
            let x = i as f64 - center;
            (-0.5 * (x / sigma).powi(2)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable correlation with per-position renormalization over the
/// in-bounds part of the window (each axis pass divides by its own weight
/// overlap, which multiplies out to the joint overlap).
fn gaussian_filter(arr: &Array3<f64>, kernel: &[f64]) -> Array3<f64> {
    let mut out = arr.to_owned();
    for axis in 0..3 {
        out = filter_axis(&out, kernel, axis);
    }
    out
}

fn filter_axis(src: &Array3<f64>, kernel: &[f64], axis: usize) -> Array3<f64> {
    let n = src.len_of(Axis(axis));
    let w = kernel.len();
    let center = (w - 1) / 2;

    // per-position in-bounds weight mass
    let denom: Vec<f64> = (0..n)
        .map(|p| {
            kernel
                .iter()
                .enumerate()
                .filter(|(k, _)| {
                    let q = p as isize + *k as isize - center as isize;
                    q >= 0 && (q as usize) < n
                })
                .map(|(_, &kv)| kv)
                .sum()
        })
        .collect();

    let mut dst = Array3::zeros(src.dim());
    Zip::from(dst.lanes_mut(Axis(axis)))
        .and(src.lanes(Axis(axis)))
        .for_each(|mut d, s| {
            for p in 0..n {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let q = p as isize + k as isize - center as isize;
                    if q >= 0 && (q as usize) < n {
                        acc += kv * s[q as usize];
                    }
                }
                d[p] = acc / denom[p];
            }
        });
    dst
}
