//! Dense 3D volumes, FW3D file I/O, percentile normalization and masking.
//!
//! The FW3D container is deliberately minimal: a fixed 24-byte little-endian
//! header followed by raw IEEE-754 binary32 voxels with axis 2 fastest.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FW3D"
//! 4       2     version (u16, = 1)
//! 6       1     dtype   (0 = volume, 1 = wavelet coefficient set)
//! 7       1     flags   (= 0)
//! 8       12    dims    (3 x u32: d0, d1, d2)
//! 20      4     reserved (zero for volumes; coefficient files store the
//!               applied coefficient scale here as an f32)
//! 24      ...   payload (d0*d1*d2 f32 values, axis 2 contiguous)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

pub(crate) const FW3D_MAGIC: &[u8; 4] = b"FW3D";
pub(crate) const FW3D_VERSION: u16 = 1;
pub(crate) const DTYPE_VOLUME: u8 = 0;
pub(crate) const DTYPE_COEFFS: u8 = 1;

/// A dense 3D scalar field. The universal carrier for images, masks,
/// voided images and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    data: Array3<f32>,
}

impl Volume3D {
    /// Wraps an existing array. Rejects empty axes and non-finite values.
    pub fn from_array(data: Array3<f32>) -> Result<Self> {
        let (d0, d1, d2) = data.dim();
        if d0 == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::Validation(format!(
                "volume dimensions must be positive, got {d0}x{d1}x{d2}"
            )));
        }
        let vol = Self {
            data: ensure_standard_layout(data),
        };
        vol.validate_finite()?;
        Ok(vol)
    }

    /// Builds a volume from a flat buffer laid out with axis 2 fastest.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {}x{}x{} ({expected})",
                data.len(),
                dims.0,
                dims.1,
                dims.2
            )));
        }
        let arr = Array3::from_shape_vec(dims, data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::Validation(format!(
                "volume dimensions must be positive, got {}x{}x{}",
                dims.0, dims.1, dims.2
            )));
        }
        Ok(Self {
            data: Array3::zeros(dims),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// Mutable voxel access. Callers that inject non-finite values will be
    /// caught by the next validating operation (`save_volume`, `normalize`).
    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    /// Flat voxel slice, axis 2 fastest.
    pub fn as_slice(&self) -> &[f32] {
        self.data.as_slice().expect("volume stored in standard layout")
    }

    /// (min, max) over all voxels.
    pub fn value_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in self.as_slice() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub(crate) fn validate_finite(&self) -> Result<()> {
        if self.as_slice().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(
                "volume contains non-finite values".into(),
            ))
        }
    }
}

/// A binary mask paired with an image volume. Values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    vol: Volume3D,
}

impl MaskVolume {
    pub fn from_volume(vol: Volume3D) -> Result<Self> {
        if vol.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(
                "mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(Self { vol })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.vol.dims()
    }

    pub fn as_volume(&self) -> &Volume3D {
        &self.vol
    }

    pub fn into_volume(self) -> Volume3D {
        self.vol
    }

    /// Number of voxels with value 1.
    pub fn masked_count(&self) -> usize {
        self.vol.as_slice().iter().filter(|&&v| v == 1.0).count()
    }
}

/// The affine map applied by [`normalize`] plus the clip bounds it used,
/// i.e. everything needed to invert the preprocessing.
///
/// Forward map: `x_norm = scale * clip(x) + offset`, with `clip_lo -> -1`
/// and `clip_hi -> +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub scale: f64,
    pub offset: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl NormRecord {
    pub fn new(scale: f64, offset: f64, clip_lo: f64, clip_hi: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Validation(format!("scale must be > 0, got {scale}")));
        }
        if !(clip_lo < clip_hi) {
            return Err(Error::Validation(format!(
                "clip_lo ({clip_lo}) must be < clip_hi ({clip_hi})"
            )));
        }
        Ok(Self {
            scale,
            offset,
            clip_lo,
            clip_hi,
        })
    }

    /// Record whose inverse map is the identity (data already in [-1, 1]).
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
            clip_lo: -1.0,
            clip_hi: 1.0,
        }
    }
}

/// Clips to the `[pct, 1-pct]` empirical quantiles, then maps the clip
/// bounds affinely onto [-1, 1]. Quantiles use nearest-rank on the sorted
/// voxel multiset.
pub fn normalize(vol: &Volume3D, pct: f64) -> Result<(Volume3D, NormRecord)> {
    if !(0.0..0.5).contains(&pct) {
        return Err(Error::Validation(format!(
            "pct must lie in [0, 0.5), got {pct}"
        )));
    }
    vol.validate_finite()?;

    let mut sorted: Vec<f32> = vol.as_slice().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let clip_lo = f64::from(nearest_rank(&sorted, pct));
    let clip_hi = f64::from(nearest_rank(&sorted, 1.0 - pct));
    if clip_lo == clip_hi {
        return Err(Error::DegenerateInput(format!(
            "clip bounds coincide at {clip_lo}; volume is (nearly) constant"
        )));
    }

    let scale = 2.0 / (clip_hi - clip_lo);
    let offset = -(clip_hi + clip_lo) / (clip_hi - clip_lo);
    let rec = NormRecord::new(scale, offset, clip_lo, clip_hi)?;

    let data = vol.data().mapv(|x| {
        let clipped = f64::from(x).clamp(clip_lo, clip_hi);
        (scale * clipped + offset) as f32
    });
    Ok((Volume3D { data }, rec))
}

/// Applies the inverse of the affine map stored in `rec`.
pub fn denormalize(vol: &Volume3D, rec: &NormRecord) -> Result<Volume3D> {
    if !(rec.scale > 0.0) {
        return Err(Error::Validation("norm record has non-positive scale".into()));
    }
    let data = vol
        .data()
        .mapv(|x| ((f64::from(x) - rec.offset) / rec.scale) as f32);
    let out = Volume3D { data };
    out.validate_finite()?;
    Ok(out)
}

/// Voids the masked region: `v = g * (1 - m)` elementwise.
pub fn apply_mask(g: &Volume3D, m: &MaskVolume) -> Result<Volume3D> {
    if g.dims() != m.dims() {
        return Err(Error::Shape(format!(
            "image dims {:?} do not match mask dims {:?}",
            g.dims(),
            m.dims()
        )));
    }
    let data = ndarray::Zip::from(g.data())
        .and(m.as_volume().data())
        .map_collect(|&g, &m| g * (1.0 - m));
    Ok(Volume3D { data })
}

/// Writes `vol` in FW3D format. Bytes are deterministic for a given volume.
pub fn save_volume(vol: &Volume3D, path: &Path) -> Result<()> {
    vol.validate_finite()?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, DTYPE_VOLUME, vol.dims(), [0u8; 4])?;
    write_f32_payload(&mut w, vol.as_slice())?;
    w.flush()?;
    Ok(())
}

/// Reads an FW3D volume file. Round-trips bit-exactly with [`save_volume`].
pub fn load_volume(path: &Path) -> Result<Volume3D> {
    let mut r = BufReader::new(File::open(path)?);
    let (dtype, dims, _reserved) = read_header(&mut r)?;
    if dtype != DTYPE_VOLUME {
        return Err(Error::Format(format!(
            "expected volume dtype {DTYPE_VOLUME}, found {dtype}"
        )));
    }
    let data = read_f32_payload(&mut r, dims.0 * dims.1 * dims.2)?;
    expect_eof(&mut r)?;
    let arr = Array3::from_shape_vec(dims, data)
        .map_err(|e| Error::Format(e.to_string()))?;
    // Bypass the finite check: load must round-trip whatever save wrote, and
    // save already rejects non-finite data.
    Ok(Volume3D { data: arr })
}

// ---------------------------------------------------------------------------
// shared FW3D framing, also used by the wavelet coefficient serializer
// ---------------------------------------------------------------------------

pub(crate) fn write_header<W: Write>(
    w: &mut W,
    dtype: u8,
    dims: (usize, usize, usize),
    reserved: [u8; 4],
) -> Result<()> {
    w.write_all(FW3D_MAGIC)?;
    w.write_all(&FW3D_VERSION.to_le_bytes())?;
    w.write_all(&[dtype, 0u8])?;
    for d in [dims.0, dims.1, dims.2] {
        let d = u32::try_from(d)
            .map_err(|_| Error::Validation(format!("dimension {d} exceeds u32 range")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&reserved)?;
    Ok(())
}

/// (dtype, dims, reserved bytes)
pub(crate) type HeaderFields = (u8, (usize, usize, usize), [u8; 4]);

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<HeaderFields> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[0..4] != FW3D_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &head[0..4],
            FW3D_MAGIC
        )));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FW3D_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FW3D_VERSION}"
        )));
    }
    let dtype = head[6];
    if dtype != DTYPE_VOLUME && dtype != DTYPE_COEFFS {
        return Err(Error::Format(format!("unknown dtype {dtype}")));
    }
    if head[7] != 0 {
        return Err(Error::Format(format!("unsupported flags {}", head[7])));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 8 + 4 * i;
        let v = u32::from_le_bytes([head[off], head[off + 1], head[off + 2], head[off + 3]]);
        if v == 0 {
            return Err(Error::Format("zero dimension in header".into()));
        }
        *d = v as usize;
    }
    let reserved = [head[20], head[21], head[22], head[23]];
    Ok((dtype, (dims[0], dims[1], dims[2]), reserved))
}

pub(crate) fn write_f32_payload<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32_payload<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "payload longer than header declares",
        ))),
    }
}

fn ensure_standard_layout(data: Array3<f32>) -> Array3<f32> {
    if data.is_standard_layout() {
        data
    } else {
        data.as_standard_layout().into_owned()
    }
}

/// Nearest-rank quantile: rank = ceil(p * n) clamped to [1, n].
fn nearest_rank(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}
