//! Recording directory: `csi.bin`, `mv.bin`, `gt_masks/`, `masks/`,
//! `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{synchronize, SyncedSample};
use crate::csi::{amplitude, denoise_stream, parse_csi_stream, window_csi, CsiDims, HampelParams};
use crate::error::{Error, Result};
use crate::mask::{masks_for_video, parse_mv_sidecar, read_pgm, BinaryMask, MaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Interval of frames whose visual side was replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeryAnnotation {
    pub mode: String,
    pub offset_frames: usize,
    /// First and one-past-last forged frame.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingManifest {
    pub frame_count: usize,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub block_size: usize,
    pub gop_length: usize,
    pub dims: CsiDims,
    pub csi_rate_hz: f64,
    pub seed: u64,
    pub persons: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Vec<SplitTag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgery: Option<ForgeryAnnotation>,
}

impl RecordingManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn frame_times_us(&self) -> Vec<u64> {
        (0..self.frame_count).map(|f| frame_time_us(f, self.fps)).collect()
    }
}

/// Presentation time of frame `f`.
pub fn frame_time_us(f: usize, fps: f64) -> u64 {
    (f as f64 * 1e6 / fps).round() as u64
}

/// A recording turned into synchronized samples.
#[derive(Debug, Clone)]
pub struct LoadedRecording {
    pub manifest: RecordingManifest,
    pub samples: Vec<SyncedSample>,
    /// Pseudo-masks for every frame that has motion vectors.
    pub masks: Vec<BinaryMask>,
    pub dropped_frames: Vec<usize>,
    pub outliers_replaced: usize,
}

/// Parses, denoises and windows the CSI stream, derives pseudo-masks from
/// the motion vectors and joins the two by frame index.
pub fn load_recording(
    dir: &Path,
    id: usize,
    m: usize,
    eta: f64,
    hampel: HampelParams,
    mask_params: &MaskParams,
) -> Result<LoadedRecording> {
    let manifest = RecordingManifest::load(dir)?;
    let records = parse_csi_stream(&dir.join("csi.bin"), Some(manifest.dims))?;
    let mut amps: Vec<_> = records.iter().map(amplitude).collect();
    drop(records);
    let outliers_replaced = denoise_stream(&mut amps, hampel)?;
    let windowing = window_csi(&amps, &manifest.frame_times_us(), m)?;
    let masks = match parse_mv_sidecar(&dir.join("mv.bin"))? {
        Some(sc) => {
            if (sc.geometry.height, sc.geometry.width) != (manifest.height, manifest.width) {
                return Err(Error::Dimension(format!(
                    "sidecar frames are {}x{}, manifest says {}x{}",
                    sc.geometry.height, sc.geometry.width, manifest.height, manifest.width
                )));
            }
            masks_for_video(&sc.fields, mask_params)?
        }
        None => Vec::new(),
    };
    let samples = synchronize(id, windowing.windows, &masks, eta);
    Ok(LoadedRecording {
        manifest,
        samples,
        masks,
        dropped_frames: windowing.dropped_frames,
        outliers_replaced,
    })
}

/// Ground-truth masks written by the simulator.
pub fn load_gt_masks(dir: &Path, frame_count: usize) -> Result<Vec<BinaryMask>> {
    (0..frame_count)
        .map(|f| read_pgm(&dir.join("gt_masks").join(format!("{f:06}.pgm")), f))
        .collect()
}
