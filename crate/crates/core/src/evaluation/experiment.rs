//! Simulate, load, split and train all three networks on the synthetic
//! benchmark, then score them on the held-out side.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{confusion, MetricsReport, Rate};
use crate::config::{ClipSide, RunConfig, SeedStream};
use crate::dataset::{build_detector_dataset, build_segmentor_dataset, load_gt_masks, load_recording, ClipPair, LoadedRecording, Selector, SyncedSample};
use crate::error::{Error, Result};
use crate::mask::{centroid_of, BinaryMask};
use crate::models::{DetectorNet, ForgeryNet, ModuleKind, SegmentorNet};
use crate::nn::sigmoid;
use crate::synth::{simulate, SceneSpec};
use crate::training::{evaluate, generate_labels, save_outputs, train_detector, train_forgery, train_segmentor, SegmentorTask, Trained};

/// Writes one recording per entry of `simulate.persons` as `rec<i>` under
/// `data_dir` and returns their directories.
pub fn simulate_benchmark(cfg: &RunConfig, data_dir: &Path) -> Result<Vec<PathBuf>> {
    let geom = cfg.geometry();
    let model = cfg.csi_model();
    let mut dirs = Vec::new();
    for (i, &persons) in cfg.simulate.persons.iter().enumerate() {
        let scene = SceneSpec::random(
            persons,
            cfg.simulate.frames,
            geom,
            cfg.data.gop_length,
            cfg.data.fps,
            &cfg.simulate.scene,
            cfg.seed_for(SeedStream::Scene(i)),
        )?;
        let dir = data_dir.join(format!("rec{i}"));
        simulate(&scene, &model, cfg.data.csi_rate_hz, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Loaded recordings plus ground truth for single-actor scenes.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub dirs: Vec<PathBuf>,
    pub recordings: Vec<LoadedRecording>,
    /// Ground-truth masks, present for recordings with exactly one actor.
    pub single_actor_gt: Vec<Option<Vec<BinaryMask>>>,
}

impl Benchmark {
    pub fn load(cfg: &RunConfig, dirs: &[PathBuf]) -> Result<Self> {
        let p = &cfg.preprocess;
        let mut recordings = Vec::new();
        let mut single_actor_gt = Vec::new();
        for (i, dir) in dirs.iter().enumerate() {
            let rec = load_recording(dir, i, p.m, p.eta, p.hampel, &p.mask)?;
            let (h, w) = (rec.manifest.height, rec.manifest.width);
            if (h, w) != (cfg.data.height, cfg.data.width) {
                return Err(Error::Dimension(format!(
                    "{} holds {h}x{w} frames, configuration expects {}x{}",
                    dir.display(),
                    cfg.data.height,
                    cfg.data.width
                )));
            }
            let gt = if rec.manifest.persons == 1 && dir.join("gt_masks").is_dir() {
                Some(load_gt_masks(dir, rec.manifest.frame_count)?)
            } else {
                None
            };
            single_actor_gt.push(gt);
            recordings.push(rec);
        }
        Ok(Self {
            dirs: dirs.to_vec(),
            recordings,
            single_actor_gt,
        })
    }

    pub fn samples(&self) -> Vec<SyncedSample> {
        self.recordings.iter().flat_map(|r| r.samples.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub detector_train: Vec<SyncedSample>,
    pub detector_val: Vec<SyncedSample>,
    pub detector_test: Vec<SyncedSample>,
    pub segmentor_train: Vec<SyncedSample>,
    pub segmentor_val: Vec<SyncedSample>,
    pub segmentor_test: Vec<SyncedSample>,
}

impl Splits {
    pub fn new(cfg: &RunConfig, bench: &Benchmark) -> Result<Self> {
        let samples = bench.samples();
        let (det_fit, detector_test) = build_detector_dataset(&samples, &cfg.split_spec(Selector::AllFrames))?;
        let (seg_fit, segmentor_test) = build_segmentor_dataset(&samples, &cfg.split_spec(Selector::MovingFrames))?;
        let (detector_train, detector_val) = match cfg.val_spec(Selector::AllFrames) {
            Some(spec) => build_detector_dataset(&det_fit, &spec)?,
            None => (det_fit, Vec::new()),
        };
        let (segmentor_train, segmentor_val) = match cfg.val_spec(Selector::MovingFrames) {
            Some(spec) => build_segmentor_dataset(&seg_fit, &spec)?,
            None => (seg_fit, Vec::new()),
        };
        Ok(Self {
            detector_train,
            detector_val,
            detector_test,
            segmentor_train,
            segmentor_val,
            segmentor_test,
        })
    }
}

/// Detector and segmentor, which do not depend on g.
pub struct FrontEnd {
    pub detector: Trained<DetectorNet>,
    pub segmentor: Trained<SegmentorNet>,
}

pub fn train_front(cfg: &RunConfig, splits: &Splits) -> Result<FrontEnd> {
    let shape = cfg.shape();
    let detector = train_detector(
        &cfg.train_config(ModuleKind::Detector),
        cfg.models.detector,
        shape,
        &splits.detector_train,
        &splits.detector_val,
    )?;
    let segmentor = train_segmentor(
        &cfg.train_config(ModuleKind::Segmentor),
        cfg.models.segmentor,
        cfg.models.segmentor_loss,
        shape,
        &splits.segmentor_train,
        &splits.segmentor_val,
    )?;
    Ok(FrontEnd { detector, segmentor })
}

pub struct BackEnd {
    pub forgery: Trained<ForgeryNet>,
    pub train_clips: Vec<ClipPair>,
    pub val_clips: Vec<ClipPair>,
    pub test_clips: Vec<ClipPair>,
}

/// Builds forgery clips from the segmentor's predictions on each part of
/// the split and trains the forgery detector on the training clips.
pub fn train_back(cfg: &RunConfig, segmentor: &SegmentorNet, splits: &Splits) -> Result<BackEnd> {
    let train_clips = generate_labels(segmentor, &splits.detector_train, &cfg.clip_params(ClipSide::Train))?;
    let val_clips = generate_labels(segmentor, &splits.detector_val, &cfg.clip_params(ClipSide::Val))?;
    let test_clips = generate_labels(segmentor, &splits.detector_test, &cfg.clip_params(ClipSide::Test))?;
    let forgery = train_forgery(
        &cfg.train_config(ModuleKind::Forgery),
        cfg.models.forgery,
        cfg.shape(),
        &train_clips,
        &val_clips,
    )?;
    Ok(BackEnd {
        forgery,
        train_clips,
        val_clips,
        test_clips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentorMetrics {
    pub test_frames: usize,
    pub test_loss: f64,
    pub pixel_acc: f64,
    /// Moving test frames of single-actor recordings that were scored.
    pub centroid_frames: usize,
    pub centroid_hits: usize,
    /// Share of those frames whose predicted centroid lies within
    /// `centroid_radius` pixels of the ground-truth centroid. A frame with
    /// an empty prediction counts as a miss.
    pub centroid_hit_rate: Rate,
    pub centroid_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSeparation {
    /// Mean per-pixel |visual - wireless| of genuine test clips.
    pub genuine: Option<f64>,
    pub forged: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub detector_train: usize,
    pub detector_val: usize,
    pub detector_test: usize,
    pub segmentor_train: usize,
    pub segmentor_val: usize,
    pub segmentor_test: usize,
    pub forgery_train: usize,
    pub forgery_val: usize,
    pub forgery_test: usize,
    pub forgery_test_forged: usize,
}

/// Held-out scores of one run. Contains no timings, so equal seeds give
/// byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub seed: u64,
    pub m: usize,
    pub g: usize,
    pub sizes: DatasetSizes,
    pub detector: MetricsReport,
    pub segmentor: SegmentorMetrics,
    pub forgery: MetricsReport,
    pub clip_separation: ClipSeparation,
    pub best_epochs: [usize; 3],
}

impl ExperimentMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise") + "\n"
    }
}

/// Counts of zero with undefined rates, for a held-out side that came out
/// empty (small recordings can leave no test clips).
fn empty_report(what: &str) -> MetricsReport {
    log::warn!("no {what} to score; rates are undefined");
    MetricsReport::from_counts(0, 0, 0, 0)
}

pub fn score_detector(net: &DetectorNet, test: &[SyncedSample], gate: f64) -> Result<MetricsReport> {
    if test.is_empty() {
        return Ok(empty_report("detector test frames"));
    }
    let mut preds = Vec::with_capacity(test.len());
    for s in test {
        preds.push(sigmoid(net.forward(&s.csi)?) as f64 > gate);
    }
    let labels: Vec<bool> = test.iter().map(|s| s.motion_label).collect();
    confusion(&preds, &labels)
}

pub fn score_forgery(net: &ForgeryNet, clips: &[ClipPair], threshold: f64) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Ok(empty_report("forgery test clips"));
    }
    let mut preds = Vec::with_capacity(clips.len());
    for c in clips {
        preds.push(sigmoid(net.forward(&c.tensor())?) as f64 >= threshold);
    }
    let labels: Vec<bool> = clips.iter().map(|c| c.label).collect();
    confusion(&preds, &labels)
}

pub fn score_segmentor(cfg: &RunConfig, net: &SegmentorNet, bench: &Benchmark, test: &[SyncedSample]) -> Result<SegmentorMetrics> {
    let (test_loss, pixel_acc) = evaluate(&SegmentorTask(cfg.models.segmentor_loss), net, test)?;
    let radius = 2.0 * cfg.data.block_size as f64;
    let mut frames = 0;
    let mut hits = 0;
    for s in test {
        let Some(gt) = bench.single_actor_gt.get(s.recording).and_then(|g| g.as_ref()) else {
            continue;
        };
        let Some(truth) = gt.get(s.frame_index).and_then(|m| m.centroid()) else {
            continue;
        };
        frames += 1;
        let probs = net.predict(&s.csi)?;
        if let Some(c) = centroid_of(probs.iter().map(|&p| p > 0.5), net.shape.width) {
            if ((c.0 - truth.0).powi(2) + (c.1 - truth.1).powi(2)).sqrt() <= radius {
                hits += 1;
            }
        }
    }
    Ok(SegmentorMetrics {
        test_frames: test.len(),
        test_loss,
        pixel_acc,
        centroid_frames: frames,
        centroid_hits: hits,
        centroid_hit_rate: Rate::ratio(hits as u64, frames as u64),
        centroid_radius: radius,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub struct Experiment {
    pub splits: Splits,
    pub front: FrontEnd,
    pub back: BackEnd,
    pub metrics: ExperimentMetrics,
}

/// Scores a trained front end and back end on the held-out side.
pub fn score(cfg: &RunConfig, bench: &Benchmark, splits: &Splits, front: &FrontEnd, back: &BackEnd) -> Result<ExperimentMetrics> {
    let th = cfg.pipeline;
    let detector = score_detector(&front.detector.best, &splits.detector_test, th.gate_threshold)?;
    let segmentor = score_segmentor(cfg, &front.segmentor.best, bench, &splits.segmentor_test)?;
    let forgery = if back.test_clips.is_empty() {
        return Err(Error::Validation("no forgery test clips could be built".into()));
    } else {
        score_forgery(&back.forgery.best, &back.test_clips, th.verdict_threshold)?
    };
    Ok(ExperimentMetrics {
        seed: cfg.seed,
        m: cfg.preprocess.m,
        g: cfg.forgery.g,
        sizes: DatasetSizes {
            detector_train: splits.detector_train.len(),
            detector_val: splits.detector_val.len(),
            detector_test: splits.detector_test.len(),
            segmentor_train: splits.segmentor_train.len(),
            segmentor_val: splits.segmentor_val.len(),
            segmentor_test: splits.segmentor_test.len(),
            forgery_train: back.train_clips.len(),
            forgery_val: back.val_clips.len(),
            forgery_test: back.test_clips.len(),
            forgery_test_forged: back.test_clips.iter().filter(|c| c.label).count(),
        },
        detector,
        segmentor,
        forgery,
        clip_separation: ClipSeparation {
            genuine: mean(back.test_clips.iter().filter(|c| !c.label).map(|c| c.mean_abs_diff())),
            forged: mean(back.test_clips.iter().filter(|c| c.label).map(|c| c.mean_abs_diff())),
        },
        best_epochs: [front.detector.best_epoch, front.segmentor.best_epoch, back.forgery.best_epoch],
    })
}

/// Splits, trains all three networks and scores them.
pub fn run_experiment(cfg: &RunConfig, bench: &Benchmark) -> Result<Experiment> {
    let splits = Splits::new(cfg, bench)?;
    log::info!(
        "training detector on {} frames, segmentor on {} moving frames",
        splits.detector_train.len(),
        splits.segmentor_train.len()
    );
    let front = train_front(cfg, &splits)?;
    let back = train_back(cfg, &front.segmentor.best, &splits)?;
    let metrics = score(cfg, bench, &splits, &front, &back)?;
    Ok(Experiment {
        splits,
        front,
        back,
        metrics,
    })
}

/// Checkpoints, training logs and `metrics/metrics.json` under `run_dir`.
pub fn write_experiment(cfg: &RunConfig, run_dir: &Path, exp: &Experiment) -> Result<PathBuf> {
    let seed = |m| cfg.checkpoint_seed(m);
    let d = &exp.front.detector;
    save_outputs(
        run_dir,
        ModuleKind::Detector,
        d.best.to_checkpoint(d.best_epoch, seed(ModuleKind::Detector)),
        d.last.to_checkpoint(d.log.len().saturating_sub(1), seed(ModuleKind::Detector)),
        &d.log,
    )?;
    let s = &exp.front.segmentor;
    save_outputs(
        run_dir,
        ModuleKind::Segmentor,
        s.best.to_checkpoint(s.best_epoch, seed(ModuleKind::Segmentor)),
        s.last.to_checkpoint(s.log.len().saturating_sub(1), seed(ModuleKind::Segmentor)),
        &s.log,
    )?;
    let f = &exp.back.forgery;
    save_outputs(
        run_dir,
        ModuleKind::Forgery,
        f.best.to_checkpoint(f.best_epoch, seed(ModuleKind::Forgery)),
        f.last.to_checkpoint(f.log.len().saturating_sub(1), seed(ModuleKind::Forgery)),
        &f.log,
    )?;
    write_metrics(run_dir, &exp.metrics)
}

pub fn write_metrics(run_dir: &Path, metrics: &ExperimentMetrics) -> Result<PathBuf> {
    let dir = run_dir.join("metrics");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("metrics.json");
    std::fs::write(&path, metrics.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
