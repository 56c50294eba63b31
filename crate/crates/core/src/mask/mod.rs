//! Motion-vector pseudo-masks: GOP accumulation, Gaussian smoothing,
//! amplitude/angle binarization and morphological refinement.

pub mod morph;
mod sidecar;

use serde::{Deserialize, Serialize};

pub use sidecar::{
    decode_mv_sidecar, decode_pgm, encode_mv_sidecar, encode_pgm, parse_mv_sidecar, read_pgm,
    write_mv_sidecar, write_pgm, Sidecar, MV_MAGIC,
};

use crate::error::{Error, Result};

/// Norm below which a vector has no usable direction.
pub const VEC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameGeometry {
    pub height: usize,
    pub width: usize,
    pub block_size: usize,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self {
            height: 96,
            width: 128,
            block_size: 16,
        }
    }
}

impl FrameGeometry {
    pub fn new(height: usize, width: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension("frame and block sizes must be positive".into()));
        }
        if height % block_size != 0 || width % block_size != 0 {
            return Err(Error::Dimension(format!(
                "{height}x{width} frame is not tiled by {block_size}px blocks"
            )));
        }
        Ok(Self {
            height,
            width,
            block_size,
        })
    }

    pub fn blocks_h(&self) -> usize {
        self.height / self.block_size
    }

    pub fn blocks_w(&self) -> usize {
        self.width / self.block_size
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Block motion vectors of one frame, `(dx, dy)` per block in row-major
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub frame_index: usize,
    pub gop_index: usize,
    pub geometry: FrameGeometry,
    pub vectors: Vec<[f32; 2]>,
}

impl MotionField {
    pub fn new(
        frame_index: usize,
        gop_index: usize,
        geometry: FrameGeometry,
        blocks_h: usize,
        blocks_w: usize,
        vectors: Vec<[f32; 2]>,
    ) -> Result<Self> {
        if blocks_h != geometry.blocks_h() || blocks_w != geometry.blocks_w() {
            return Err(Error::Dimension(format!(
                "{blocks_h}x{blocks_w} block grid does not cover a {}x{} frame with {}px blocks",
                geometry.height, geometry.width, geometry.block_size
            )));
        }
        if vectors.len() != blocks_h * blocks_w {
            return Err(Error::Dimension(format!(
                "expected {} vectors, got {}",
                blocks_h * blocks_w,
                vectors.len()
            )));
        }
        Ok(Self {
            frame_index,
            gop_index,
            geometry,
            vectors,
        })
    }

    pub fn zeros(frame_index: usize, gop_index: usize, geometry: FrameGeometry) -> Self {
        Self {
            frame_index,
            gop_index,
            geometry,
            vectors: vec![[0.0; 2]; geometry.blocks_h() * geometry.blocks_w()],
        }
    }
}

/// Dense two-component field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 2]>,
}

impl VecField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![[0.0; 2]; height * width],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> [f64; 2] {
        self.data[r * self.width + c]
    }

    pub fn component_sums(&self) -> [f64; 2] {
        self.data
            .iter()
            .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]])
    }
}

/// Separable `[1,2,1] x [1,2,1] / 16` smoothing with half-sample symmetric
/// borders (`x[-1] = x[0]`).
pub fn gaussian_smooth3(field: &VecField) -> VecField {
    const TAPS: [f64; 3] = [1.0, 2.0, 1.0];
    let (h, w) = (field.height, field.width);
    let reflect = |i: i64, n: usize| -> usize {
        if i < 0 {
            (-i - 1) as usize
        } else if i as usize >= n {
            2 * n - 1 - i as usize
        } else {
            i as usize
        }
    };
    let mut tmp = VecField::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 2];
            for (t, tap) in TAPS.iter().enumerate() {
                let v = field.at(r, reflect(c as i64 + t as i64 - 1, w));
                acc[0] += tap * v[0];
                acc[1] += tap * v[1];
            }
            tmp.data[r * w + c] = acc;
        }
    }
    let mut out = VecField::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 2];
            for (t, tap) in TAPS.iter().enumerate() {
                let v = tmp.at(reflect(r as i64 + t as i64 - 1, h), c);
                acc[0] += tap * v[0];
                acc[1] += tap * v[1];
            }
            out.data[r * w + c] = [acc[0] / 16.0, acc[1] / 16.0];
        }
    }
    out
}

/// GOP-summed motion (`raw_sum`) and its 3x3 Gaussian smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedField {
    pub raw_sum: VecField,
    pub smoothed: VecField,
}

impl AccumulatedField {
    pub fn from_raw(raw_sum: VecField) -> Self {
        let smoothed = gaussian_smooth3(&raw_sum);
        Self { raw_sum, smoothed }
    }
}

/// Sums the block vectors of one GOP, replicates each block over its pixels
/// and smooths the result.
pub fn accumulate_gop(fields: &[MotionField]) -> Result<AccumulatedField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Grouping("a GOP needs at least one motion field".into()))?;
    let geometry = first.geometry;
    let mut block_sum = vec![[0.0f64; 2]; first.vectors.len()];
    for f in fields {
        if f.gop_index != first.gop_index {
            return Err(Error::Grouping(format!(
                "frame {} belongs to GOP {}, expected {}",
                f.frame_index, f.gop_index, first.gop_index
            )));
        }
        if f.geometry != geometry {
            return Err(Error::Dimension("motion fields of one GOP differ in geometry".into()));
        }
        for (acc, v) in block_sum.iter_mut().zip(&f.vectors) {
            acc[0] += v[0] as f64;
            acc[1] += v[1] as f64;
        }
    }
    let (h, w, bs, bw) = (geometry.height, geometry.width, geometry.block_size, geometry.blocks_w());
    let mut raw = VecField::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            raw.data[r * w + c] = block_sum[(r / bs) * bw + c / bs];
        }
    }
    Ok(AccumulatedField::from_raw(raw))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub frame_index: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize, frame_index: usize) -> Self {
        Self {
            height,
            width,
            frame_index,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    /// `(row, col)` centroid of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        centroid_of(self.bits.iter().copied(), self.width)
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as u8 as f32).collect()
    }

    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count();
        let union = self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a || b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

pub fn centroid_of(bits: impl Iterator<Item = bool>, width: usize) -> Option<(f64, f64)> {
    let (mut n, mut sr, mut sc) = (0usize, 0.0, 0.0);
    for (i, b) in bits.enumerate() {
        if b {
            n += 1;
            sr += (i / width) as f64;
            sc += (i % width) as f64;
        }
    }
    (n > 0).then(|| (sr / n as f64, sc / n as f64))
}

/// Amplitude-plus-direction test per pixel:
/// `|M| + lambda * cos(smoothed, M) >= tau`, where `M` is the raw GOP sum.
///
/// The cosine counts as 0 when either vector is shorter than [`VEC_EPS`],
/// and a pixel with no motion at all never fires.
pub fn binarize(acc: &AccumulatedField, lambda: f64, tau: f64) -> BinaryMask {
    let raw = &acc.raw_sum;
    let bits = raw
        .data
        .iter()
        .zip(&acc.smoothed.data)
        .map(|(m, s)| {
            let n_raw = m[0].hypot(m[1]);
            if n_raw == 0.0 {
                return false;
            }
            let n_smooth = s[0].hypot(s[1]);
            let cos = if n_raw < VEC_EPS || n_smooth < VEC_EPS {
                0.0
            } else {
                (m[0] * s[0] + m[1] * s[1]) / (n_raw * n_smooth)
            };
            n_raw + lambda * cos >= tau
        })
        .collect();
    BinaryMask {
        height: raw.height,
        width: raw.width,
        frame_index: 0,
        bits,
    }
}

/// Median 3x3, closing, opening, then removal of 4-connected components
/// smaller than `min_area_frac * H * W`.
pub fn refine(mask: &BinaryMask, min_area_frac: f64) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    let bits = morph::median3(&mask.bits, h, w);
    let bits = morph::close(&bits, h, w);
    let bits = morph::open(&bits, h, w);
    let bits = morph::remove_small_components(&bits, h, w, min_area_frac * (h * w) as f64);
    BinaryMask {
        bits,
        ..mask.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskParams {
    pub lambda: f64,
    pub tau: f64,
    pub min_area_frac: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.5,
            min_area_frac: 0.001,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || !self.tau.is_finite() {
            return Err(Error::Parameter("lambda and tau must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.min_area_frac) {
            return Err(Error::Parameter(format!(
                "min_area_frac must lie in [0, 1), got {}",
                self.min_area_frac
            )));
        }
        Ok(())
    }
}

/// One refined mask per GOP, replicated to every frame of that GOP.
pub fn masks_for_video(fields: &[MotionField], params: &MaskParams) -> Result<Vec<BinaryMask>> {
    params.validate()?;
    let mut out = Vec::with_capacity(fields.len());
    for gop in fields.chunk_by(|a, b| a.gop_index == b.gop_index) {
        let acc = accumulate_gop(gop)?;
        let mask = refine(&binarize(&acc, params.lambda, params.tau), params.min_area_frac);
        for f in gop {
            out.push(BinaryMask {
                frame_index: f.frame_index,
                ..mask.clone()
            });
        }
    }
    Ok(out)
}
