//! Deterministic scene simulator: moving ellipses, their block motion
//! vectors, ground-truth masks and a CSI stream whose amplitudes respond to
//! actor position and speed.
//!
//! The CSI response is deliberately simple and not physical. Each antenna
//! pair owns one cell of an `n_tx x n_rx` grid laid over the frame (the same
//! grid the segmentor tiles its input onto); a moving actor raises the
//! amplitude of a pair by a Gaussian of its distance to that cell, times its
//! speed, times a Gaussian bump over subcarriers centred at an index that
//! tracks the actor's horizontal position.

mod forge;

pub use forge::{forge, ForgeMode, ForgeSpec};

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csi::{write_csi_binary, CsiDims, CsiRecord};
use crate::dataset::{frame_time_us, RecordingManifest};
use crate::error::{Error, Result};
use crate::mask::{write_mv_sidecar, write_pgm, BinaryMask, FrameGeometry, MotionField, Sidecar};

/// An ellipse following piecewise-linear waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub radius_y: f64,
    pub radius_x: f64,
    /// Centre positions `(y, x)` in pixels; the actor starts at the first.
    pub waypoints: Vec<[f64; 2]>,
    /// Pixels per frame while moving.
    pub speed: f64,
    /// One flag per GOP; the actor only advances during moving GOPs.
    pub moving_gops: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub geometry: FrameGeometry,
    pub gop_length: usize,
    pub fps: f64,
    pub frames: usize,
    pub actors: Vec<ActorSpec>,
    pub seed: u64,
}

/// Knobs for [`SceneSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub radius_y: [f64; 2],
    pub radius_x: [f64; 2],
    pub speed: [f64; 2],
    /// Probability that a GOP is a pause.
    pub pause_prob: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            radius_y: [7.0, 10.0],
            radius_x: [5.0, 7.0],
            speed: [1.5, 3.0],
            pause_prob: 0.2,
        }
    }
}

impl SceneSpec {
    pub const MAX_PERSONS: usize = 3;

    /// Random scene with `persons` actors.
    pub fn random(
        persons: usize,
        frames: usize,
        geometry: FrameGeometry,
        gop_length: usize,
        fps: f64,
        params: &SceneParams,
        seed: u64,
    ) -> Result<Self> {
        if persons > Self::MAX_PERSONS {
            return Err(Error::Scene(format!("at most {} persons, got {persons}", Self::MAX_PERSONS)));
        }
        if gop_length == 0 {
            return Err(Error::Scene("gop_length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (geometry.height as f64, geometry.width as f64);
        let gops = frames.div_ceil(gop_length);
        let actors = (0..persons)
            .map(|_| {
                let radius_y = rng.gen_range(params.radius_y[0]..=params.radius_y[1]);
                let radius_x = rng.gen_range(params.radius_x[0]..=params.radius_x[1]);
                let speed = rng.gen_range(params.speed[0]..=params.speed[1]);
                let point = |rng: &mut ChaCha8Rng| {
                    [
                        rng.gen_range(radius_y..=h - radius_y),
                        rng.gen_range(radius_x..=w - radius_x),
                    ]
                };
                // Enough path for the whole recording at full speed.
                let needed = speed * frames as f64 + 1.0;
                let mut waypoints = vec![point(&mut rng)];
                let mut length = 0.0;
                while length < needed {
                    let p = point(&mut rng);
                    let q = waypoints.last().unwrap();
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                    if d < 0.25 * h {
                        continue;
                    }
                    length += d;
                    waypoints.push(p);
                }
                let moving_gops = (0..gops).map(|_| !rng.gen_bool(params.pause_prob)).collect();
                ActorSpec {
                    radius_y,
                    radius_x,
                    waypoints,
                    speed,
                    moving_gops,
                }
            })
            .collect();
        let spec = Self {
            geometry,
            gop_length,
            fps,
            frames,
            actors,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn persons(&self) -> usize {
        self.actors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.actors.len() > Self::MAX_PERSONS {
            return Err(Error::Scene(format!("{} actors, at most {}", self.actors.len(), Self::MAX_PERSONS)));
        }
        if !(self.fps > 0.0) || self.gop_length == 0 {
            return Err(Error::Scene("fps and gop_length must be positive".into()));
        }
        let (h, w) = (self.geometry.height as f64, self.geometry.width as f64);
        let gops = self.frames.div_ceil(self.gop_length);
        for (i, a) in self.actors.iter().enumerate() {
            if !(a.radius_y > 0.0 && a.radius_x > 0.0 && a.speed >= 0.0) {
                return Err(Error::Scene(format!("actor {i}: radii must be positive, speed non-negative")));
            }
            if a.waypoints.is_empty() {
                return Err(Error::Scene(format!("actor {i} has no waypoints")));
            }
            for p in &a.waypoints {
                if p[0] < a.radius_y || p[0] > h - a.radius_y || p[1] < a.radius_x || p[1] > w - a.radius_x {
                    return Err(Error::Scene(format!(
                        "actor {i}: waypoint ({:.1}, {:.1}) leaves the {}x{} frame",
                        p[0], p[1], self.geometry.height, self.geometry.width
                    )));
                }
            }
            if a.moving_gops.len() < gops {
                return Err(Error::Scene(format!(
                    "actor {i}: {} GOP flags for {gops} GOPs",
                    a.moving_gops.len()
                )));
            }
        }
        Ok(())
    }

    fn gop(&self, frame: usize) -> usize {
        frame / self.gop_length
    }

    /// Centre `(y, x)` of every actor at every frame. Paths are convex
    /// combinations of in-frame waypoints, so they stay inside the frame.
    pub fn positions(&self) -> Vec<Vec<[f64; 2]>> {
        self.actors
            .iter()
            .map(|a| {
                let mut pos = a.waypoints[0];
                let mut next = 1;
                let mut out = Vec::with_capacity(self.frames);
                for f in 0..self.frames {
                    if f > 0 && a.moving_gops[self.gop(f)] {
                        let mut budget = a.speed;
                        while budget > 0.0 && next < a.waypoints.len() {
                            let t = a.waypoints[next];
                            let d = ((t[0] - pos[0]).powi(2) + (t[1] - pos[1]).powi(2)).sqrt();
                            if d <= budget {
                                pos = t;
                                budget -= d;
                                next += 1;
                            } else {
                                pos = [pos[0] + (t[0] - pos[0]) * budget / d, pos[1] + (t[1] - pos[1]) * budget / d];
                                budget = 0.0;
                            }
                        }
                    }
                    out.push(pos);
                }
                out
            })
            .collect()
    }
}

fn inside(a: &ActorSpec, c: [f64; 2], y: usize, x: usize) -> bool {
    let dy = (y as f64 + 0.5 - c[0]) / a.radius_y;
    let dx = (x as f64 + 0.5 - c[1]) / a.radius_x;
    dy * dy + dx * dx <= 1.0
}

/// Rasterised union of all actors at one frame.
pub fn rasterize(scene: &SceneSpec, positions: &[Vec<[f64; 2]>], frame: usize) -> BinaryMask {
    let g = scene.geometry;
    let mut m = BinaryMask::empty(g.height, g.width, frame);
    for (a, pos) in scene.actors.iter().zip(positions) {
        let c = pos[frame];
        let y0 = (c[0] - a.radius_y).floor().max(0.0) as usize;
        let y1 = ((c[0] + a.radius_y).ceil() as usize).min(g.height);
        let x0 = (c[1] - a.radius_x).floor().max(0.0) as usize;
        let x1 = ((c[1] + a.radius_x).ceil() as usize).min(g.width);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(a, c, y, x) {
                    m.bits[y * g.width + x] = true;
                }
            }
        }
    }
    m
}

/// Fraction of a block an actor must cover before the block inherits the
/// actor's displacement.
pub const MV_COVERAGE: f64 = 0.3;

/// Block motion vectors for one frame: the displacement of the actor that
/// covers most of the block, when it covers at least [`MV_COVERAGE`] of it.
/// Frame 0 has no reference and carries zero vectors.
pub fn motion_field(scene: &SceneSpec, positions: &[Vec<[f64; 2]>], frame: usize) -> MotionField {
    let g = scene.geometry;
    let gop = scene.gop(frame);
    let mut field = MotionField::zeros(frame, gop, g);
    if frame == 0 {
        return field;
    }
    let bs = g.block_size;
    let need = MV_COVERAGE * (bs * bs) as f64;
    for by in 0..g.blocks_h() {
        for bx in 0..g.blocks_w() {
            let mut best: Option<(usize, usize)> = None;
            for (i, (a, pos)) in scene.actors.iter().zip(positions).enumerate() {
                let c = pos[frame];
                let cover = (by * bs..(by + 1) * bs)
                    .flat_map(|y| (bx * bs..(bx + 1) * bs).map(move |x| (y, x)))
                    .filter(|&(y, x)| inside(a, c, y, x))
                    .count();
                if cover as f64 >= need && best.is_none_or(|(_, b)| cover > b) {
                    best = Some((i, cover));
                }
            }
            if let Some((i, _)) = best {
                let (now, before) = (positions[i][frame], positions[i][frame - 1]);
                field.vectors[by * g.blocks_w() + bx] = [(now[1] - before[1]) as f32, (now[0] - before[0]) as f32];
            }
        }
    }
    field
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsiModel {
    /// Taken from the data section of a run configuration.
    #[serde(skip)]
    pub dims: CsiDims,
    /// Per-entry baseline amplitude is drawn uniformly from this range.
    pub baseline: [f64; 2],
    /// Seeds the baseline draw. The baseline belongs to the room, so every
    /// recording simulated with one model shares it.
    pub environment_seed: u64,
    /// Response per pixel-per-frame of actor speed.
    pub response_gain: f64,
    /// Spatial spread of a pair's sensitivity, as a fraction of the smaller
    /// grid-cell side.
    pub spatial_sigma: f64,
    /// Spread of the response over subcarriers, in subcarriers.
    pub subcarrier_sigma: f64,
    pub noise_sigma: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude: f64,
}

impl Default for CsiModel {
    fn default() -> Self {
        Self {
            dims: CsiDims::default(),
            baseline: [0.8, 1.2],
            environment_seed: 0,
            response_gain: 0.25,
            spatial_sigma: 0.8,
            subcarrier_sigma: 3.0,
            noise_sigma: 0.05,
            outlier_rate: 0.01,
            outlier_magnitude: 3.0,
        }
    }
}

impl CsiModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.baseline[0] >= 0.0
            && self.baseline[1] >= self.baseline[0]
            && self.response_gain >= 0.0
            && self.spatial_sigma > 0.0
            && self.subcarrier_sigma > 0.0
            && self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.outlier_rate)
            && self.outlier_magnitude >= 0.0;
        if !ok {
            return Err(Error::Scene(format!("invalid CSI model {self:?}")));
        }
        Ok(())
    }
}

/// Noise-free amplitude response of every `(k, tx, rx)` entry to the actors
/// at the given centres and speeds.
pub fn csi_response(model: &CsiModel, geometry: FrameGeometry, actors: &[([f64; 2], f64)]) -> Vec<f64> {
    let d = model.dims;
    let (h, w) = (geometry.height as f64, geometry.width as f64);
    let (ch, cw) = (h / d.n_tx as f64, w / d.n_rx as f64);
    let sigma_s = model.spatial_sigma * ch.min(cw);
    let mut out = vec![0.0; d.len()];
    for &(c, speed) in actors {
        if speed <= 0.0 {
            continue;
        }
        let kc = c[1] / w * (d.k as f64 - 1.0);
        for tx in 0..d.n_tx {
            for rx in 0..d.n_rx {
                let (cy, cx) = ((tx as f64 + 0.5) * ch, (rx as f64 + 0.5) * cw);
                let dist2 = (c[0] - cy).powi(2) + (c[1] - cx).powi(2);
                let spatial = (-dist2 / (2.0 * sigma_s * sigma_s)).exp();
                for k in 0..d.k {
                    let bump = (-(k as f64 - kc).powi(2) / (2.0 * model.subcarrier_sigma.powi(2))).exp();
                    out[d.index(k, tx, rx)] += model.response_gain * speed * spatial * bump;
                }
            }
        }
    }
    out
}

/// Output of [`simulate_scene`] before it is written to disk.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<CsiRecord>,
    /// The same stream with outliers left out, for checking the denoiser.
    pub clean_amplitudes: Vec<Vec<f32>>,
    pub fields: Vec<MotionField>,
    pub gt_masks: Vec<BinaryMask>,
}

pub fn simulate_scene(scene: &SceneSpec, model: &CsiModel, csi_rate_hz: f64) -> Result<Simulation> {
    scene.validate()?;
    model.validate()?;
    if !(csi_rate_hz >= scene.fps) {
        return Err(Error::Scene(format!(
            "CSI rate {csi_rate_hz} Hz is below the frame rate {}",
            scene.fps
        )));
    }
    let positions = scene.positions();
    let fields: Vec<MotionField> = (0..scene.frames).map(|f| motion_field(scene, &positions, f)).collect();
    let gt_masks: Vec<BinaryMask> = (0..scene.frames).map(|f| rasterize(scene, &positions, f)).collect();

    // Speed an actor shows at each frame: its displacement into the frame,
    // and for frame 0 the displacement of frame 1 within the same GOP.
    let speed_at = |a: usize, f: usize| -> f64 {
        let p = &positions[a];
        let step = |f: usize| ((p[f][0] - p[f - 1][0]).powi(2) + (p[f][1] - p[f - 1][1]).powi(2)).sqrt();
        if f > 0 {
            step(f)
        } else if scene.frames > 1 && scene.gop_length > 1 {
            step(1)
        } else {
            0.0
        }
    };

    let d = model.dims;
    let mut env_rng = ChaCha8Rng::seed_from_u64(model.environment_seed ^ 0xBA5E);
    let baseline: Vec<f64> = (0..d.len())
        .map(|_| env_rng.gen_range(model.baseline[0]..=model.baseline[1]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0xC51_C51);
    let phase: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-PI..PI)).collect();
    let noise = Normal::new(0.0, model.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let duration_s = scene.frames as f64 / scene.fps;
    let n_records = (duration_s * csi_rate_hz).round() as usize;
    let mut records = Vec::with_capacity(n_records);
    let mut clean_amplitudes = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let t_us = (i as f64 * 1e6 / csi_rate_hz).round() as u64;
        let fr = t_us as f64 * scene.fps / 1e6;
        let f = (fr.floor() as usize).min(scene.frames - 1);
        let phi = (fr - f as f64).clamp(0.0, 1.0);
        let states: Vec<([f64; 2], f64)> = (0..scene.actors.len())
            .map(|a| {
                let p = &positions[a];
                let c = match p.get(f + 1) {
                    Some(n) => [p[f][0] + phi * (n[0] - p[f][0]), p[f][1] + phi * (n[1] - p[f][1])],
                    None => p[f],
                };
                (c, speed_at(a, f))
            })
            .collect();
        let response = csi_response(model, scene.geometry, &states);
        let mut values = Vec::with_capacity(d.len());
        let mut clean = Vec::with_capacity(d.len());
        for e in 0..d.len() {
            let mut amp = baseline[e] + response[e];
            if model.noise_sigma > 0.0 {
                amp += noise.sample(&mut rng);
            }
            let amp = amp.abs();
            clean.push(amp as f32);
            let mut out = amp;
            if model.outlier_rate > 0.0 && rng.gen_bool(model.outlier_rate) {
                out += model.outlier_magnitude;
            }
            values.push(Complex32::from_polar(out as f32, phase[e] as f32));
        }
        records.push(CsiRecord {
            timestamp_us: t_us,
            dims: d,
            values,
        });
        clean_amplitudes.push(clean);
    }
    Ok(Simulation {
        records,
        clean_amplitudes,
        fields,
        gt_masks,
    })
}

/// Writes a recording directory: `csi.bin`, `mv.bin`, `gt_masks/`,
/// `manifest.json`.
pub fn simulate(scene: &SceneSpec, model: &CsiModel, csi_rate_hz: f64, out: &Path) -> Result<RecordingManifest> {
    let sim = simulate_scene(scene, model, csi_rate_hz)?;
    std::fs::create_dir_all(out.join("gt_masks")).map_err(|e| Error::io(out, e))?;
    write_csi_binary(&out.join("csi.bin"), model.dims, &sim.records)?;
    write_mv_sidecar(
        &out.join("mv.bin"),
        &Sidecar {
            geometry: scene.geometry,
            gop_length: scene.gop_length,
            fields: sim.fields,
        },
    )?;
    for m in &sim.gt_masks {
        write_pgm(&out.join("gt_masks").join(format!("{:06}.pgm", m.frame_index)), m)?;
    }
    let manifest = RecordingManifest {
        frame_count: scene.frames,
        fps: scene.fps,
        height: scene.geometry.height,
        width: scene.geometry.width,
        block_size: scene.geometry.block_size,
        gop_length: scene.gop_length,
        dims: model.dims,
        csi_rate_hz,
        seed: scene.seed,
        persons: scene.persons(),
        split: None,
        forgery: None,
    };
    manifest.save(out)?;
    std::fs::write(out.join("scene.json"), serde_json::to_string_pretty(scene)? + "\n")
        .map_err(|e| Error::io(out, e))?;
    Ok(manifest)
}

/// Frame timestamps shared with the dataset loader.
pub fn frame_times(scene: &SceneSpec) -> Vec<u64> {
    (0..scene.frames).map(|f| frame_time_us(f, scene.fps)).collect()
}
