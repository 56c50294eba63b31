//! Aligns CSI windows with pseudo-masks and builds the three training sets.

mod recording;

pub use recording::{
    frame_time_us, load_gt_masks, load_recording, ForgeryAnnotation, LoadedRecording, RecordingManifest, SplitTag,
};

use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::Feature;

/// One video frame with its m CSI measurements and derived labels.
#[derive(Debug, Clone)]
pub struct SyncedSample {
    pub recording: usize,
    pub frame_index: usize,
    pub csi: CsiWindow,
    pub pseudo_mask: BinaryMask,
    pub motion_label: bool,
}

/// Returns true iff the set fraction of the mask exceeds `eta` (strictly).
pub fn motion_criterion(mask: &BinaryMask, eta: f64) -> bool {
    debug_assert!((0.0..1.0).contains(&eta), "eta {eta} outside [0, 1)");
    mask.fraction() > eta
}

/// Joins windows and masks on frame index. Frames missing on either side
/// are skipped.
pub fn synchronize(recording: usize, windows: Vec<CsiWindow>, masks: &[BinaryMask], eta: f64) -> Vec<SyncedSample> {
    let mut out = Vec::with_capacity(windows.len());
    for csi in windows {
        let Some(mask) = masks.iter().find(|m| m.frame_index == csi.frame_index) else {
            continue;
        };
        out.push(SyncedSample {
            recording,
            frame_index: csi.frame_index,
            motion_label: motion_criterion(mask, eta),
            pseudo_mask: mask.clone(),
            csi,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    AllFrames,
    MovingFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitMode {
    /// Seeded shuffle of the items.
    Random,
    /// Contiguous runs of `block_len` frames per recording go to one side.
    /// Test blocks are evenly spaced with a seeded phase, so the decision
    /// depends only on (recording, frame index) and survives filtering.
    Blocks { block_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub seed: u64,
    pub selector: Selector,
    pub mode: SplitMode,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Parameter(format!("train_frac {} outside (0, 1)", self.train_frac)));
        }
        if let SplitMode::Blocks { block_len: 0 } = self.mode {
            return Err(Error::Parameter("block_len must be positive".into()));
        }
        Ok(())
    }

    pub fn with_selector(self, selector: Selector) -> Self {
        Self { selector, ..self }
    }

    /// Whether a frame lands in the training side under block mode.
    pub fn block_is_train(&self, recording: usize, frame_index: usize, block_len: usize) -> bool {
        let q = 1.0 - self.train_frac;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (recording as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let phase: f64 = rng.gen_range(0.0..1.0);
        let b = (frame_index / block_len) as f64;
        // Block b is a test block when floor(b * q + phase) steps up, i.e.
        // once every 1/q blocks at a seeded position within the period.
        (b * q + q + phase).floor() == (b * q + phase).floor()
    }

    /// Partitions item positions `0..keys.len()`; `keys` are
    /// (recording, frame index).
    pub fn partition(&self, keys: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        match self.mode {
            SplitMode::Random => {
                let mut idx: Vec<usize> = (0..keys.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
                let n_train = (keys.len() as f64 * self.train_frac).round() as usize;
                let mut train = idx[..n_train].to_vec();
                let mut test = idx[n_train..].to_vec();
                train.sort_unstable();
                test.sort_unstable();
                Ok((train, test))
            }
            SplitMode::Blocks { block_len } => Ok((0..keys.len())
                .partition(|&i| self.block_is_train(keys[i].0, keys[i].1, block_len))),
        }
    }
}

fn split_samples(samples: Vec<SyncedSample>, split: &SplitSpec) -> Result<(Vec<SyncedSample>, Vec<SyncedSample>)> {
    let keys: Vec<(usize, usize)> = samples.iter().map(|s| (s.recording, s.frame_index)).collect();
    let (train_idx, _) = split.partition(&keys)?;
    let mut is_train = vec![false; samples.len()];
    for i in train_idx {
        is_train[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, t) in samples.into_iter().zip(is_train) {
        if t {
            train.push(s)
        } else {
            test.push(s)
        }
    }
    Ok((train, test))
}

pub fn build_detector_dataset(
    samples: &[SyncedSample],
    split: &SplitSpec,
) -> Result<(Vec<SyncedSample>, Vec<SyncedSample>)> {
    if split.selector != Selector::AllFrames {
        return Err(Error::Parameter("detector dataset uses selector all_frames".into()));
    }
    if samples.is_empty() {
        warn!("detector dataset: no samples");
    }
    split_samples(samples.to_vec(), split)
}

pub fn build_segmentor_dataset(
    samples: &[SyncedSample],
    split: &SplitSpec,
) -> Result<(Vec<SyncedSample>, Vec<SyncedSample>)> {
    if split.selector != Selector::MovingFrames {
        return Err(Error::Parameter("segmentor dataset uses selector moving_frames".into()));
    }
    let moving: Vec<SyncedSample> = samples.iter().filter(|s| s.motion_label).cloned().collect();
    if moving.is_empty() {
        warn!("segmentor dataset: no moving frames among {} samples", samples.len());
    }
    split_samples(moving, split)
}

/// A segmentor output kept at working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessMask {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f32>,
}

/// Index-aligned visual and wireless masks of consecutive frames from one
/// recording.
#[derive(Debug, Clone)]
pub struct Track {
    pub recording: usize,
    pub visual: Vec<Arc<BinaryMask>>,
    pub wireless: Vec<Arc<WirelessMask>>,
}

impl Track {
    pub fn new(recording: usize, visual: Vec<BinaryMask>, wireless: Vec<WirelessMask>) -> Result<Self> {
        if visual.len() != wireless.len() {
            return Err(Error::Validation(format!(
                "{} visual masks vs {} wireless masks",
                visual.len(),
                wireless.len()
            )));
        }
        if let Some((v, w)) = visual.iter().zip(&wireless).find(|(v, w)| v.frame_index != w.frame_index) {
            return Err(Error::Validation(format!(
                "visual frame {} aligned with wireless frame {}",
                v.frame_index, w.frame_index
            )));
        }
        Ok(Self {
            recording,
            visual: visual.into_iter().map(Arc::new).collect(),
            wireless: wireless.into_iter().map(Arc::new).collect(),
        })
    }

    fn len(&self) -> usize {
        self.visual.len()
    }
}

/// Splits frame-ordered masks into tracks of consecutive frame indices.
pub fn consecutive_tracks(recording: usize, visual: Vec<BinaryMask>, wireless: Vec<WirelessMask>) -> Result<Vec<Track>> {
    let whole = Track::new(recording, visual, wireless)?;
    let mut tracks = Vec::new();
    let mut start = 0;
    for i in 1..=whole.len() {
        if i == whole.len() || whole.visual[i].frame_index != whole.visual[i - 1].frame_index + 1 {
            if i > start {
                tracks.push(Track {
                    recording,
                    visual: whole.visual[start..i].to_vec(),
                    wireless: whole.wireless[start..i].to_vec(),
                });
            }
            start = i;
        }
    }
    Ok(tracks)
}

/// g visual masks paired with g wireless masks. Label 0 means the two
/// sides come from the same frames; 1 means forged.
#[derive(Debug, Clone)]
pub struct ClipPair {
    pub visual_recording: usize,
    pub wireless_recording: usize,
    pub visual_masks: Vec<Arc<BinaryMask>>,
    pub wireless_masks: Vec<Arc<WirelessMask>>,
    pub label: bool,
}

impl ClipPair {
    pub fn visual_start(&self) -> usize {
        self.visual_masks[0].frame_index
    }

    pub fn wireless_start(&self) -> usize {
        self.wireless_masks[0].frame_index
    }

    /// Network input: per step, channel 0 is the visual mask and channel 1
    /// the wireless probability map.
    pub fn tensor(&self) -> Vec<Feature> {
        clip_tensor(
            self.visual_masks.iter().map(|m| m.as_ref()),
            self.wireless_masks.iter().map(|w| w.as_ref()),
        )
    }

    /// Mean per-pixel |visual - wireless| over the clip.
    pub fn mean_abs_diff(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, w) in self.visual_masks.iter().zip(&self.wireless_masks) {
            for (&b, &p) in v.bits.iter().zip(&w.probs) {
                sum += (b as u8 as f64 - p as f64).abs();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}

pub fn clip_tensor<'a>(
    visual: impl Iterator<Item = &'a BinaryMask>,
    wireless: impl Iterator<Item = &'a WirelessMask>,
) -> Vec<Feature> {
    visual
        .zip(wireless)
        .map(|(v, w)| {
            let mut data = v.as_f32();
            data.extend_from_slice(&w.probs);
            Feature::new(2, v.height, v.width, data)
        })
        .collect()
}

/// Single-sequence form: index-aligned visual and wireless masks.
pub fn build_forgery_dataset(
    visual: &[BinaryMask],
    wireless: &[WirelessMask],
    g: usize,
    forgery_frac: f64,
    min_offset: usize,
    seed: u64,
) -> Result<Vec<ClipPair>> {
    let track = Track::new(0, visual.to_vec(), wireless.to_vec())?;
    build_forgery_clips(&[track], g, forgery_frac, min_offset, seed)
}

/// Sliding windows (stride 1) over every track; a seeded `forgery_frac` of
/// them get their wireless side replaced by a window at least `min_offset`
/// frames away, or from another recording.
pub fn build_forgery_clips(
    tracks: &[Track],
    g: usize,
    forgery_frac: f64,
    min_offset: usize,
    seed: u64,
) -> Result<Vec<ClipPair>> {
    if g == 0 {
        return Err(Error::Parameter("g must be positive".into()));
    }
    if !(forgery_frac > 0.0 && forgery_frac < 1.0) {
        return Err(Error::Parameter(format!("forgery_frac {forgery_frac} outside (0, 1)")));
    }
    if min_offset < g {
        return Err(Error::Parameter(format!("min_offset {min_offset} must be at least g={g}")));
    }
    // (track, start) of every candidate window.
    let windows: Vec<(usize, usize)> = tracks
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| (0..(tr.len() + 1).saturating_sub(g)).map(move |s| (t, s)))
        .collect();
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let key = |&(t, s): &(usize, usize)| (tracks[t].recording, tracks[t].visual[s].frame_index);
    let compatible = |a: &(usize, usize), b: &(usize, usize)| {
        let (ra, fa) = key(a);
        let (rb, fb) = key(b);
        ra != rb || fa.abs_diff(fb) >= min_offset
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut rng);
    let target = (windows.len() as f64 * forgery_frac).round() as usize;
    let mut forged_with: Vec<Option<usize>> = vec![None; windows.len()];
    let mut n_forged = 0;
    for &i in &order {
        if n_forged == target {
            break;
        }
        let partners: Vec<usize> = (0..windows.len()).filter(|&j| compatible(&windows[i], &windows[j])).collect();
        if let Some(&j) = partners.choose(&mut rng) {
            forged_with[i] = Some(j);
            n_forged += 1;
        }
    }
    if n_forged < target {
        warn!("forgery dataset: only {n_forged} of {target} clips have a valid partner");
    }

    Ok(windows
        .iter()
        .zip(&forged_with)
        .map(|(&(t, s), partner)| {
            let (wt, ws) = partner.map(|j| windows[j]).unwrap_or((t, s));
            ClipPair {
                visual_recording: tracks[t].recording,
                wireless_recording: tracks[wt].recording,
                visual_masks: tracks[t].visual[s..s + g].to_vec(),
                wireless_masks: tracks[wt].wireless[ws..ws + g].to_vec(),
                label: partner.is_some(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(frame: usize, set: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(4, 4, frame);
        for b in m.bits.iter_mut().take(set) {
            *b = true;
        }
        m
    }

    #[test]
    fn criterion_examples() {
        assert!(!motion_criterion(&mask(0, 0), 0.0));
        assert!(motion_criterion(&mask(0, 1), 0.0));
        assert!(!motion_criterion(&mask(0, 8), 0.6));
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let keys: Vec<(usize, usize)> = (0..1000).map(|i| (0, i)).collect();
        let spec = SplitSpec {
            train_frac: 0.9,
            seed: 7,
            selector: Selector::AllFrames,
            mode: SplitMode::Random,
        };
        let (a, b) = spec.partition(&keys).unwrap();
        assert_eq!((a.len(), b.len()), (900, 100));
        assert_eq!(spec.partition(&keys).unwrap(), (a, b));
    }

    #[test]
    fn block_split_is_contiguous_and_near_fraction() {
        let keys: Vec<(usize, usize)> = (0..400).map(|i| (3, i)).collect();
        let spec = SplitSpec {
            train_frac: 0.8,
            seed: 1,
            selector: Selector::AllFrames,
            mode: SplitMode::Blocks { block_len: 20 },
        };
        let (train, test) = spec.partition(&keys).unwrap();
        assert_eq!(test.len(), 80);
        assert_eq!(train.len() + test.len(), 400);
        for b in 0..20 {
            let side: Vec<bool> = (b * 20..(b + 1) * 20).map(|i| train.contains(&i)).collect();
            assert!(side.iter().all(|&s| s == side[0]));
        }
    }

    fn wmask(frame: usize) -> WirelessMask {
        WirelessMask {
            frame_index: frame,
            height: 4,
            width: 4,
            probs: vec![0.5; 16],
        }
    }

    #[test]
    fn clip_counts_and_labels() {
        let v: Vec<BinaryMask> = (0..10).map(|f| mask(f, 1)).collect();
        let w: Vec<WirelessMask> = (0..10).map(wmask).collect();
        let clips = build_forgery_dataset(&v, &w, 7, 0.5, 7, 1).unwrap();
        assert_eq!(clips.len(), 4);
        // starts 0..=3 are never 7 apart, so every clip stays genuine
        for c in &clips {
            if c.label {
                assert!(c.visual_start().abs_diff(c.wireless_start()) >= 7);
            } else {
                assert_eq!(c.visual_start(), c.wireless_start());
            }
        }
        assert!(build_forgery_dataset(&v[..5], &w[..5], 7, 0.5, 7, 1).unwrap().is_empty());
        assert!(build_forgery_dataset(&v, &w, 7, 0.5, 3, 1).is_err());
    }

    #[test]
    fn balance_over_a_long_track() {
        let v: Vec<BinaryMask> = (0..106).map(|f| mask(f, 1)).collect();
        let w: Vec<WirelessMask> = (0..106).map(wmask).collect();
        let clips = build_forgery_dataset(&v, &w, 7, 0.5, 7, 3).unwrap();
        assert_eq!(clips.len(), 100);
        let forged = clips.iter().filter(|c| c.label).count();
        assert!((49..=51).contains(&forged));
    }

    #[test]
    fn tracks_break_at_gaps() {
        let frames = [0, 1, 2, 5, 6, 9];
        let v: Vec<BinaryMask> = frames.iter().map(|&f| mask(f, 1)).collect();
        let w: Vec<WirelessMask> = frames.iter().map(|&f| wmask(f)).collect();
        let t = consecutive_tracks(0, v, w).unwrap();
        assert_eq!(t.iter().map(|t| t.len()).collect::<Vec<_>>(), vec![3, 2, 1]);
    }
}
