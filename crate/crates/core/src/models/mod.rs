//! The three networks: human detector, human segmentor and forgery detector.

mod checkpoint;
mod detector;
mod forgery;
pub mod loss;
mod segmentor;

pub use checkpoint::{Checkpoint, Fingerprint, ModuleKind};
pub use detector::{DetectorArch, DetectorNet};
pub use forgery::{ForgeryArch, ForgeryNet};
pub use loss::{bce_with_logits, dice_loss, segmentor_loss, segmentor_loss_grad};
pub use segmentor::{SegmentorArch, SegmentorNet};

use serde::{Deserialize, Serialize};

use crate::csi::{CsiDims, CsiWindow};
use crate::error::{Error, Result};
use crate::nn::Feature;

/// Input geometry shared by all three networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dims: CsiDims,
    pub m: usize,
    pub g: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.g == 0 {
            return Err(Error::Config(format!("m and g must be positive (m={}, g={})", self.m, self.g)));
        }
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::Config(format!(
                "working size {}x{} must be a positive multiple of 16",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self, module: ModuleKind, epoch: usize, seed: u64) -> Fingerprint {
        Fingerprint {
            module,
            m: self.m,
            g: self.g,
            k: self.dims.k,
            n_tx: self.dims.n_tx,
            n_rx: self.dims.n_rx,
            height: self.height,
            width: self.width,
            epoch,
            seed,
        }
    }

    fn check_window(&self, w: &CsiWindow) -> Result<()> {
        if w.dims != self.dims || w.m != self.m || w.amps_concat.len() != self.m * self.dims.len() {
            return Err(Error::Dimension(format!(
                "window is m={} {}x{}x{}, network expects m={} {}x{}x{}",
                w.m, w.dims.k, w.dims.n_tx, w.dims.n_rx, self.m, self.dims.k, self.dims.n_tx, self.dims.n_rx
            )));
        }
        Ok(())
    }
}

/// Per-entry amplitude standardisation, fitted on training windows.
/// Statistics are kept per `(subcarrier, tx, rx)` and shared across the m
/// stacked measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    const STD_FLOOR: f64 = 1e-6;

    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a CsiWindow>, dims: CsiDims) -> Self {
        let n = dims.len();
        let mut sum = vec![0.0f64; n];
        let mut sq = vec![0.0f64; n];
        let mut count = 0usize;
        for w in windows {
            for j in 0..w.m {
                for (i, &v) in w.measurement(j).iter().enumerate() {
                    sum[i] += v as f64;
                    sq[i] += (v as f64) * (v as f64);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / c) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| {
                let mu = s / c;
                ((q / c - mu * mu).max(0.0).sqrt().max(Self::STD_FLOOR)) as f32
            })
            .collect();
        Self { mean, std }
    }

    #[inline]
    pub fn apply(&self, i: usize, v: f32) -> f32 {
        (v - self.mean[i]) / self.std[i]
    }

    fn to_flat(&self) -> Vec<f32> {
        self.mean.iter().chain(&self.std).copied().collect()
    }

    fn from_flat(flat: &[f32], n: usize) -> Result<Self> {
        if flat.len() != 2 * n {
            return Err(Error::Checkpoint(format!(
                "standardiser has {} values, expected {}",
                flat.len(),
                2 * n
            )));
        }
        Ok(Self {
            mean: flat[..n].to_vec(),
            std: flat[n..].to_vec(),
        })
    }
}

/// Standardised window as a `(m*K) x N_tx x N_rx` feature.
pub fn window_tensor(w: &CsiWindow, norm: &Standardizer) -> Feature {
    let n = w.dims.len();
    let data = w
        .amps_concat
        .iter()
        .enumerate()
        .map(|(i, &v)| norm.apply(i % n, v))
        .collect();
    Feature::new(w.m * w.dims.k, w.dims.n_tx, w.dims.n_rx, data)
}

/// Nearest-neighbour replication of each grid cell into a block of
/// `ceil(H'/rows) x ceil(W'/cols)` pixels, cropped to `H' x W'`.
pub fn tile_to_working_size(x: &Feature, height: usize, width: usize) -> Feature {
    let bh = height.div_ceil(x.h);
    let bw = width.div_ceil(x.w);
    let mut out = Feature::zeros(x.c, height, width);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * height * width..(c + 1) * height * width];
        for y in 0..height {
            let row = &src[(y / bh) * x.w..(y / bh + 1) * x.w];
            for (xx, d) in dst[y * width..(y + 1) * width].iter_mut().enumerate() {
                *d = row[xx / bw];
            }
        }
    }
    out
}

/// Inverse of [`tile_to_working_size`]: reads one pixel per grid block.
pub fn untile(x: &Feature, rows: usize, cols: usize) -> Feature {
    let bh = x.h.div_ceil(rows);
    let bw = x.w.div_ceil(cols);
    let mut out = Feature::zeros(x.c, rows, cols);
    for c in 0..x.c {
        for r in 0..rows {
            for q in 0..cols {
                out.data[(c * rows + r) * cols + q] = x.data[(c * x.h + r * bh) * x.w + q * bw];
            }
        }
    }
    out
}


/// Two fully connected layers ending in a single logit.
#[derive(Debug, Clone)]
pub(crate) struct Head {
    pub fc1: crate::nn::Linear,
    pub fc2: crate::nn::Linear,
}

impl Head {
    pub fn new(inp: usize, hidden: usize, init: &mut crate::nn::Init) -> Self {
        Self {
            fc1: crate::nn::Linear::new(inp, hidden, init),
            fc2: crate::nn::Linear::new(hidden, 1, init),
        }
    }

    /// Returns the hidden activation (after ReLU) and the logit.
    pub fn forward(&self, x: &[f32]) -> (Vec<f32>, f32) {
        let mut h = self.fc1.forward(x);
        crate::nn::relu_in_place(&mut h);
        let z = self.fc2.forward(&h)[0];
        (h, z)
    }

    pub fn backward(&mut self, x: &[f32], h: &[f32], dz: f32) -> Vec<f32> {
        let mut dh = self.fc2.backward(h, &[dz], true).expect("dx requested");
        crate::nn::relu_backward(h, &mut dh);
        self.fc1.backward(x, &dh, true).expect("dx requested")
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        vec![&mut self.fc1.weight, &mut self.fc1.bias, &mut self.fc2.weight, &mut self.fc2.bias]
    }

    pub fn params(&self) -> Vec<&crate::nn::Param> {
        vec![&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]
    }
}

/// Gradient of the mean BCE for one sample in a batch of `1/scale` samples.
#[inline]
pub(crate) fn bce_logit_grad(z: f32, target: f32, scale: f32) -> (f64, f32) {
    let loss = loss::bce_with_logits(&[z as f64], &[target as f64]).unwrap_or(f64::NAN);
    (loss, (crate::nn::sigmoid(z) - target) * scale)
}

fn check_target(t: f32) -> Result<()> {
    if t != 0.0 && t != 1.0 {
        return Err(Error::Validation(format!("target {t} is not binary")));
    }
    Ok(())
}
