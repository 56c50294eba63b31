use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consistency constant turning a median absolute deviation into a
/// standard-deviation estimate for Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;

/// Absolute deviation floor used when a window's MAD collapses to zero.
pub const MAD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HampelParams {
    pub window: usize,
    pub n_sigmas: f64,
}

impl Default for HampelParams {
    fn default() -> Self {
        Self {
            window: 5,
            n_sigmas: 3.0,
        }
    }
}

impl HampelParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Parameter(format!(
                "hampel window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.n_sigmas > 0.0) || !self.n_sigmas.is_finite() {
            return Err(Error::Parameter(format!(
                "hampel n_sigmas must be positive, got {}",
                self.n_sigmas
            )));
        }
        Ok(())
    }
}

/// Median of a scratch buffer. Even-length buffers average the two middle
/// elements. The buffer is reordered.
pub(crate) fn median_in_place(buf: &mut [f64]) -> f64 {
    debug_assert!(!buf.is_empty());
    buf.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Local window statistics `(median, MAD)` around `center`, truncated at the
/// sequence ends.
pub fn local_stats(series: &[f64], center: usize, window: usize) -> (f64, f64) {
    let half = window / 2;
    let lo = center.saturating_sub(half);
    let hi = (center + half + 1).min(series.len());
    let mut buf: Vec<f64> = series[lo..hi].to_vec();
    let med = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - med).abs();
    }
    let mad = median_in_place(&mut buf);
    (med, mad)
}

/// One-pass Hampel identifier.
///
/// Each sample is compared against the median of its (truncated) window in
/// the *input* series; if it deviates by more than
/// `n_sigmas * 1.4826 * MAD` (and by more than [`MAD_FLOOR`]) it is replaced
/// by that median. All decisions read the unmodified input.
pub fn hampel_filter(series: &[f64], window: usize, n_sigmas: f64) -> Result<Vec<f64>> {
    HampelParams { window, n_sigmas }.validate()?;
    let mut out = series.to_vec();
    for (i, slot) in out.iter_mut().enumerate() {
        let (med, mad) = local_stats(series, i, window);
        let threshold = (n_sigmas * MAD_SCALE * mad).max(MAD_FLOOR);
        if (series[i] - med).abs() > threshold {
            *slot = med;
        }
    }
    Ok(out)
}
