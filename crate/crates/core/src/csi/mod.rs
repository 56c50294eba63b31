//! CSI ingestion: parsing, amplitude extraction, Hampel denoising and
//! per-frame windowing.

mod format;
mod hampel;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

pub use format::{
    encode_csi_binary, parse_csi_bytes, parse_csi_stream, write_csi_binary, write_csi_jsonl,
    CSI_MAGIC,
};
pub use hampel::{hampel_filter, local_stats, HampelParams, MAD_FLOOR, MAD_SCALE};

use crate::error::{Error, Result};

/// Shape of one CSI measurement: subcarriers x transmit x receive antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsiDims {
    pub k: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl Default for CsiDims {
    fn default() -> Self {
        Self {
            k: 30,
            n_tx: 3,
            n_rx: 3,
        }
    }
}

impl CsiDims {
    pub fn new(k: usize, n_tx: usize, n_rx: usize) -> Result<Self> {
        if k == 0 || n_tx == 0 || n_rx == 0 {
            return Err(Error::Dimension(format!(
                "CSI dims must be positive, got {k}x{n_tx}x{n_rx}"
            )));
        }
        Ok(Self { k, n_tx, n_rx })
    }

    /// Number of antenna pairs.
    pub fn pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Number of entries in one measurement.
    pub fn len(&self) -> usize {
        self.k * self.pairs()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(subcarrier, tx, rx)`.
    #[inline]
    pub fn index(&self, k: usize, tx: usize, rx: usize) -> usize {
        (k * self.n_tx + tx) * self.n_rx + rx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub timestamp_us: u64,
    pub dims: CsiDims,
    pub values: Vec<Complex32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeRecord {
    pub timestamp_us: u64,
    pub dims: CsiDims,
    pub amps: Vec<f32>,
}

/// `m` consecutive amplitude records stacked along the subcarrier axis,
/// giving a `(m*K) x N_tx x N_rx` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiWindow {
    pub frame_index: usize,
    pub dims: CsiDims,
    pub m: usize,
    pub amps_concat: Vec<f32>,
    pub source_timestamps: Vec<u64>,
}

impl CsiWindow {
    /// Amplitudes of the `j`-th stacked measurement.
    pub fn measurement(&self, j: usize) -> &[f32] {
        let n = self.dims.len();
        &self.amps_concat[j * n..(j + 1) * n]
    }
}

pub fn amplitude(record: &CsiRecord) -> AmplitudeRecord {
    AmplitudeRecord {
        timestamp_us: record.timestamp_us,
        dims: record.dims,
        amps: record.values.iter().map(|v| v.norm()).collect(),
    }
}

/// Runs the Hampel identifier over every `(subcarrier, tx, rx)` amplitude
/// series of a stream, in place.
pub fn denoise_stream(records: &mut [AmplitudeRecord], params: HampelParams) -> Result<usize> {
    params.validate()?;
    let Some(first) = records.first() else {
        return Ok(0);
    };
    let n = first.dims.len();
    let mut series = vec![0.0f64; records.len()];
    let mut replaced = 0;
    for e in 0..n {
        for (s, r) in series.iter_mut().zip(records.iter()) {
            *s = r.amps[e] as f64;
        }
        let filtered = hampel_filter(&series, params.window, params.n_sigmas)?;
        for (r, (&f, &orig)) in records.iter_mut().zip(filtered.iter().zip(series.iter())) {
            if f != orig {
                replaced += 1;
                r.amps[e] = f as f32;
            }
        }
    }
    Ok(replaced)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Windowing {
    pub windows: Vec<CsiWindow>,
    /// Frames that had fewer than `m` measurements inside their interval.
    pub dropped_frames: Vec<usize>,
}

/// Uniform subsample of `m` out of `available` positions.
pub fn subsample_positions(available: usize, m: usize) -> Vec<usize> {
    debug_assert!(available >= m);
    (0..m).map(|j| j * available / m).collect()
}

/// Assigns amplitude records to video frames.
///
/// Frame `f` owns the half-open interval `[t_f, t_{f+1})`; the last frame
/// reuses the preceding frame period (or is unbounded when only one frame
/// exists). Frames with fewer than `m` records are dropped and reported.
pub fn window_csi(amps: &[AmplitudeRecord], frame_times_us: &[u64], m: usize) -> Result<Windowing> {
    if m == 0 {
        return Err(Error::Parameter("m must be at least 1".into()));
    }
    if frame_times_us.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Ordering("frame times must strictly increase".into()));
    }
    if amps.windows(2).any(|w| w[1].timestamp_us <= w[0].timestamp_us) {
        return Err(Error::Ordering("amplitude records must strictly increase".into()));
    }
    let mut out = Windowing::default();
    if amps.is_empty() {
        out.dropped_frames = (0..frame_times_us.len()).collect();
        if !frame_times_us.is_empty() {
            log::warn!("no CSI records; dropping all {} frames", frame_times_us.len());
        }
        return Ok(out);
    }
    let dims = amps[0].dims;
    for (f, &start) in frame_times_us.iter().enumerate() {
        let end = match frame_times_us.get(f + 1) {
            Some(&next) => next,
            None if f > 0 => start + (start - frame_times_us[f - 1]),
            None => u64::MAX,
        };
        let lo = amps.partition_point(|r| r.timestamp_us < start);
        let hi = amps.partition_point(|r| r.timestamp_us < end);
        let available = hi - lo;
        if available < m {
            out.dropped_frames.push(f);
            continue;
        }
        let mut amps_concat = Vec::with_capacity(m * dims.len());
        let mut source_timestamps = Vec::with_capacity(m);
        for p in subsample_positions(available, m) {
            let r = &amps[lo + p];
            amps_concat.extend_from_slice(&r.amps);
            source_timestamps.push(r.timestamp_us);
        }
        out.windows.push(CsiWindow {
            frame_index: f,
            dims,
            m,
            amps_concat,
            source_timestamps,
        });
    }
    if !out.dropped_frames.is_empty() {
        log::warn!("dropped {} frames with fewer than {m} CSI records", out.dropped_frames.len());
    }
    Ok(out)
}
