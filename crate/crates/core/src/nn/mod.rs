//! Minimal CPU neural-network layers with hand-written backward passes.
//!
//! Every layer processes one sample at a time. `forward` returns the output
//! together with whatever the backward pass needs; `backward` accumulates
//! parameter gradients into [`Param::grad`] and returns the input gradient.

mod layers;
mod lstm;
mod optim;

pub use layers::{relu_backward, relu_in_place, Conv2d, ConvCache, ConvTranspose2x2, Linear};
pub use lstm::{Lstm, LstmTape};
pub use optim::{Adam, Optimizer, RmsProp};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn uniform(n: usize, bound: f32, init: &mut Init) -> Self {
        let mut p = Self::zeros(n);
        if let Init::Random(rng) = init {
            for v in p.value.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Weight initialisation source.
pub enum Init {
    /// All parameters zero.
    Zeros,
    Random(ChaCha8Rng),
}

impl Init {
    pub fn seeded(seed: u64) -> Self {
        use rand::SeedableRng;
        Init::Random(ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Anything that owns parameters. Visiting order must be stable: optimizers
/// and checkpoints rely on it.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Flattened parameter values in visiting order.
    fn export_weights(&self) -> Vec<f32> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    fn import_weights(&mut self, flat: &[f32]) -> Result<(), String> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(format!("expected {total} weights, got {}", flat.len()));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Channel-major feature map `(c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Feature {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature data does not match its shape");
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Stacks two maps of equal spatial size along the channel axis.
    pub fn concat(a: &Feature, b: &Feature) -> Feature {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Feature::new(a.c + b.c, a.h, a.w, data)
    }

    /// Splits a channel-stacked gradient back into its two parts.
    pub fn split(&self, first_c: usize) -> (Feature, Feature) {
        let cut = first_c * self.plane();
        (
            Feature::new(first_c, self.h, self.w, self.data[..cut].to_vec()),
            Feature::new(self.c - first_c, self.h, self.w, self.data[cut..].to_vec()),
        )
    }

    pub fn add_assign(&mut self, other: &Feature) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `C = A * B (+ C)` for row-major matrices, with optional transposition of
/// either operand. `A` is `m x k` after transposition, `B` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the debug assertion above documents the required extents; the
    // strides describe exactly those row-major (or transposed) buffers.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Central-difference derivative of `f` with respect to `x[i]`.
    pub fn numeric_grad(x: &mut [f32], i: usize, eps: f32, mut f: impl FnMut(&[f32]) -> f64) -> f64 {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(x);
        x[i] = orig - eps;
        let minus = f(x);
        x[i] = orig;
        (plus - minus) / (2.0 * eps as f64)
    }

    pub fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-2);
        assert!(
            (analytic - numeric).abs() / scale < tol,
            "{what}: analytic {analytic} vs numeric {numeric}"
        );
    }
}
