//! Deterministic synthetic volumes: smooth ellipsoidal intensity blobs on
//! a zero background, with a spherical "healthy" mask placed strictly
//! inside the foreground. Stands in for restricted clinical data at desk
//! scale; the rest of the pipeline treats samples as opaque, so real data
//! can be slotted in through FW3D files.

use ndarray::Array3;

use crate::diffusion::SeededRng;
use crate::error::{Error, Result};
use crate::sampler::InpaintSample;
use crate::volume::{apply_mask, normalize, MaskVolume, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub seed: u64,
    /// Number of random ellipsoid blobs added on top of the anchor blob.
    pub num_blobs_min: usize,
    pub num_blobs_max: usize,
    /// Sharpness of the blob intensity falloff; larger is sharper.
    pub smoothness: f32,
    /// Spherical mask radius range, voxels.
    pub mask_radius_min: usize,
    pub mask_radius_max: usize,
    /// Percentile used for intensity normalization.
    pub norm_pct: f64,
}

impl PhantomSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            dims: (32, 32, 32),
            seed,
            num_blobs_min: 3,
            num_blobs_max: 6,
            smoothness: 1.0,
            mask_radius_min: 3,
            mask_radius_max: 6,
            norm_pct: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d0, d1, d2) = self.dims;
        if d0 % 2 != 0 || d1 % 2 != 0 || d2 % 2 != 0 || d0 < 8 || d1 < 8 || d2 < 8 {
            return Err(Error::Validation(format!(
                "phantom dims must be even and >= 8, got {d0}x{d1}x{d2}"
            )));
        }
        if self.num_blobs_min > self.num_blobs_max {
            return Err(Error::Validation("num_blobs range is inverted".into()));
        }
        if self.mask_radius_min < 1 || self.mask_radius_min > self.mask_radius_max {
            return Err(Error::Validation("mask radius range is invalid".into()));
        }
        let min_dim = d0.min(d1).min(d2);
        if 2 * self.mask_radius_max >= min_dim / 2 {
            return Err(Error::Validation(format!(
                "mask radius {} too large for dims {d0}x{d1}x{d2}",
                self.mask_radius_max
            )));
        }
        if !(0.0..0.5).contains(&self.norm_pct) {
            return Err(Error::Validation("norm_pct must lie in [0, 0.5)".into()));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::Validation("smoothness must be > 0".into()));
        }
        Ok(())
    }
}

const MASK_PLACEMENT_RETRIES: usize = 200;
/// Fraction of the peak intensity below which a voxel counts as background.
const FOREGROUND_THRESHOLD: f32 = 0.05;

/// Generates one deterministic sample: normalized image, mask, voided
/// image and the normalization record.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<InpaintSample> {
    spec.validate()?;
    let (d0, d1, d2) = spec.dims;
    let mut rng = SeededRng::new(spec.seed);

    let mut raw = Array3::<f32>::zeros(spec.dims);

    // anchor blob: always present, centered, large enough to host any mask
    let center = (
        d0 as f32 / 2.0 + rng.uniform_f32(-1.0, 1.0),
        d1 as f32 / 2.0 + rng.uniform_f32(-1.0, 1.0),
        d2 as f32 / 2.0 + rng.uniform_f32(-1.0, 1.0),
    );
    let anchor_axes = (
        d0 as f32 * rng.uniform_f32(0.30, 0.38),
        d1 as f32 * rng.uniform_f32(0.30, 0.38),
        d2 as f32 * rng.uniform_f32(0.30, 0.38),
    );
    add_blob(&mut raw, center, anchor_axes, 1.0, spec.smoothness);

    let extra = rng.uniform_usize(spec.num_blobs_min, spec.num_blobs_max);
    for _ in 0..extra {
        let c = (
            rng.uniform_f32(0.25 * d0 as f32, 0.75 * d0 as f32),
            rng.uniform_f32(0.25 * d1 as f32, 0.75 * d1 as f32),
            rng.uniform_f32(0.25 * d2 as f32, 0.75 * d2 as f32),
        );
        let axes = (
            rng.uniform_f32(d0 as f32 / 8.0, d0 as f32 / 4.0),
            rng.uniform_f32(d1 as f32 / 8.0, d1 as f32 / 4.0),
            rng.uniform_f32(d2 as f32 / 8.0, d2 as f32 / 4.0),
        );
        let amp = rng.uniform_f32(0.4, 1.0);
        add_blob(&mut raw, c, axes, amp, spec.smoothness);
    }

    let peak = raw.iter().cloned().fold(0.0f32, f32::max);
    let threshold = FOREGROUND_THRESHOLD * peak;

    let mask = place_mask(&raw, threshold, spec, &mut rng)?;
    let (g, rec) = normalize(&Volume3D::from_array(raw)?, spec.norm_pct)?;
    let voided = apply_mask(&g, &mask)?;
    InpaintSample::new(Some(g), mask, voided, rec)
}

fn add_blob(
    raw: &mut Array3<f32>,
    center: (f32, f32, f32),
    axes: (f32, f32, f32),
    amplitude: f32,
    smoothness: f32,
) {
    let (d0, d1, d2) = raw.dim();
    for i in 0..d0 {
        let rz = (i as f32 - center.0) / axes.0;
        for j in 0..d1 {
            let ry = (j as f32 - center.1) / axes.1;
            for k in 0..d2 {
                let rx = (k as f32 - center.2) / axes.2;
                let r2 = rz * rz + ry * ry + rx * rx;
                raw[[i, j, k]] += amplitude * (-smoothness * r2).exp();
            }
        }
    }
}

/// Random sphere whose every voxel lies in the foreground; bounded retries.
fn place_mask(
    raw: &Array3<f32>,
    threshold: f32,
    spec: &PhantomSpec,
    rng: &mut SeededRng,
) -> Result<MaskVolume> {
    let (d0, d1, d2) = raw.dim();
    for _ in 0..MASK_PLACEMENT_RETRIES {
        let r = rng.uniform_usize(spec.mask_radius_min, spec.mask_radius_max);
        let cz = rng.uniform_usize(r + 1, d0 - r - 2);
        let cy = rng.uniform_usize(r + 1, d1 - r - 2);
        let cx = rng.uniform_usize(r + 1, d2 - r - 2);

        let ri = r as isize;
        let mut ok = true;
        let mut mdata = Array3::<f32>::zeros(raw.dim());
        'scan: for dz in -ri..=ri {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dz * dz + dy * dy + dx * dx > ri * ri {
                        continue;
                    }
                    let z = (cz as isize + dz) as usize;
                    let y = (cy as isize + dy) as usize;
                    let x = (cx as isize + dx) as usize;
                    if raw[[z, y, x]] <= threshold {
                        ok = false;
                        break 'scan;
                    }
                    mdata[[z, y, x]] = 1.0;
                }
            }
        }
        if ok {
            return MaskVolume::from_volume(Volume3D::from_array(mdata)?);
        }
    }
    Err(Error::Generation(format!(
        "could not place a mask inside the foreground after {MASK_PLACEMENT_RETRIES} attempts \
         (seed {})",
        spec.seed
    )))
}

/// Crops a `size`-edge cube centered on the mask bounding box, clamped to
/// the volume bounds with the mask always fully contained. Returns the
/// cropped image, mask and re-derived voided image.
pub fn crop_to_cube(
    g: &Volume3D,
    m: &MaskVolume,
    size: usize,
) -> Result<(Volume3D, MaskVolume, Volume3D)> {
    if g.dims() != m.dims() {
        return Err(Error::Shape(format!(
            "image dims {:?} vs mask dims {:?}",
            g.dims(),
            m.dims()
        )));
    }
    let dims = [g.dims().0, g.dims().1, g.dims().2];
    if !size.is_multiple_of(2) {
        return Err(Error::Validation(format!("crop size {size} must be even")));
    }
    if dims.iter().any(|&d| size > d) {
        return Err(Error::Validation(format!(
            "crop size {size} exceeds volume dims {dims:?}"
        )));
    }
    if m.masked_count() == 0 {
        return Err(Error::Validation("mask is empty".into()));
    }

    let bbox = mask_bbox(m);
    let mut start = [0usize; 3];
    for a in 0..3 {
        let (lo, hi) = bbox[a];
        if hi - lo + 1 > size {
            return Err(Error::Validation(format!(
                "mask extent {} along axis {a} exceeds crop size {size}",
                hi - lo + 1
            )));
        }
        let center = (lo + hi) / 2;
        let ideal = center as isize - size as isize / 2;
        // keep the window inside the volume and around the whole mask
        let min_start = (hi + 1).saturating_sub(size);
        let max_start = lo.min(dims[a] - size);
        start[a] = ideal.clamp(min_start as isize, max_start as isize) as usize;
    }

    let view = ndarray::s![
        start[0]..start[0] + size,
        start[1]..start[1] + size,
        start[2]..start[2] + size
    ];
    let g_crop = Volume3D::from_array(g.data().slice(view).to_owned())?;
    let m_crop = MaskVolume::from_volume(Volume3D::from_array(
        m.as_volume().data().slice(view).to_owned(),
    )?)?;
    let v_crop = apply_mask(&g_crop, &m_crop)?;
    Ok((g_crop, m_crop, v_crop))
}

fn mask_bbox(m: &MaskVolume) -> [(usize, usize); 3] {
    let data = m.as_volume().data();
    let (d0, d1, d2) = data.dim();
    let mut lo = [d0, d1, d2];
    let mut hi = [0usize; 3];
    for ((i, j, k), &v) in data.indexed_iter() {
        if v == 1.0 {
            lo[0] = lo[0].min(i);
            lo[1] = lo[1].min(j);
            lo[2] = lo[2].min(k);
            hi[0] = hi[0].max(i);
            hi[1] = hi[1].max(j);
            hi[2] = hi[2].max(k);
        }
    }
    [(lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2])]
}
