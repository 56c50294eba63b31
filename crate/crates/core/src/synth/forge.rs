//! Visual-side forgeries of a simulated recording.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_gt_masks, ForgeryAnnotation, RecordingManifest};
use crate::error::{Error, Result};
use crate::mask::{parse_mv_sidecar, write_mv_sidecar, write_pgm, BinaryMask, Sidecar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgeMode {
    /// Frames in the interval show the recording's own content from
    /// `offset_frames` earlier.
    Shift,
    /// Frames in the interval show a donor recording, starting at donor
    /// frame `offset_frames`.
    Splice,
}

impl std::str::FromStr for ForgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" => Ok(Self::Shift),
            "splice" => Ok(Self::Splice),
            _ => Err(Error::Parameter(format!("unknown forge mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeSpec {
    pub mode: ForgeMode,
    pub offset_frames: usize,
    /// Forged interval `[start, end)`; defaults to `[offset, frame_count)`.
    pub interval: Option<(usize, usize)>,
    pub donor: Option<PathBuf>,
}

fn load_visual(dir: &Path, manifest: &RecordingManifest) -> Result<(Sidecar, Vec<BinaryMask>)> {
    let sidecar = parse_mv_sidecar(&dir.join("mv.bin"))?
        .ok_or_else(|| Error::Parameter(format!("{} has no motion vectors", dir.display())))?;
    let gt = load_gt_masks(dir, manifest.frame_count)?;
    Ok((sidecar, gt))
}

/// Copies `src` to `out` with the visual side (motion vectors and
/// ground-truth masks) replaced over the forged interval. CSI is untouched.
/// `g` is the clip length the shift must exceed.
pub fn forge(src: &Path, out: &Path, spec: &ForgeSpec, g: usize) -> Result<RecordingManifest> {
    let mut manifest = RecordingManifest::load(src)?;
    let n = manifest.frame_count;
    let (start, end) = spec.interval.unwrap_or((spec.offset_frames, n));
    if start >= end || end > n {
        return Err(Error::Parameter(format!("forged interval [{start}, {end}) outside 0..{n}")));
    }
    let (mut sidecar, mut gt) = load_visual(src, &manifest)?;
    let (donor_fields, donor_gt, first) = match spec.mode {
        ForgeMode::Shift => {
            if spec.offset_frames == 0 {
                return Err(Error::Parameter("a shift of 0 frames is not a forgery".into()));
            }
            if spec.offset_frames < g {
                return Err(Error::Parameter(format!(
                    "shift of {} frames is shorter than the clip length {g}",
                    spec.offset_frames
                )));
            }
            if start < spec.offset_frames {
                return Err(Error::Parameter(format!(
                    "interval starts at {start}, before the shift of {}",
                    spec.offset_frames
                )));
            }
            (sidecar.fields.clone(), gt.clone(), start - spec.offset_frames)
        }
        ForgeMode::Splice => {
            let donor = spec
                .donor
                .as_deref()
                .ok_or_else(|| Error::Parameter("splice needs a donor recording".into()))?;
            let dm = RecordingManifest::load(donor)?;
            if (dm.height, dm.width, dm.block_size) != (manifest.height, manifest.width, manifest.block_size) {
                return Err(Error::Dimension("donor frame geometry differs".into()));
            }
            if spec.offset_frames + (end - start) > dm.frame_count {
                return Err(Error::Parameter(format!(
                    "donor has {} frames, splice needs {}",
                    dm.frame_count,
                    spec.offset_frames + (end - start)
                )));
            }
            let (ds, dgt) = load_visual(donor, &dm)?;
            (ds.fields, dgt, spec.offset_frames)
        }
    };
    for (i, f) in (start..end).enumerate() {
        sidecar.fields[f].vectors = donor_fields[first + i].vectors.clone();
        gt[f] = BinaryMask {
            frame_index: f,
            ..donor_gt[first + i].clone()
        };
    }

    std::fs::create_dir_all(out.join("gt_masks")).map_err(|e| Error::io(out, e))?;
    std::fs::copy(src.join("csi.bin"), out.join("csi.bin")).map_err(|e| Error::io(src.join("csi.bin"), e))?;
    write_mv_sidecar(&out.join("mv.bin"), &sidecar)?;
    for m in &gt {
        write_pgm(&out.join("gt_masks").join(format!("{:06}.pgm", m.frame_index)), m)?;
    }
    manifest.forgery = Some(ForgeryAnnotation {
        mode: match spec.mode {
            ForgeMode::Shift => "shift".into(),
            ForgeMode::Splice => "splice".into(),
        },
        offset_frames: spec.offset_frames,
        start,
        end,
    });
    manifest.split = None;
    manifest.save(out)?;
    Ok(manifest)
}
