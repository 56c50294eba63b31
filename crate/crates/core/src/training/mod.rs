//! Training loops, schedules and label generation for the three networks.

use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_forgery_clips, consecutive_tracks, ClipPair, SyncedSample, WirelessMask};
use crate::error::{Error, Result};
use crate::models::{
    Checkpoint, DetectorArch, DetectorNet, ForgeryArch, ForgeryNet, ModelShape, ModuleKind, SegmentorArch,
    SegmentorNet, Standardizer,
};
use crate::nn::{sigmoid, Adam, Init, Module, Optimizer, RmsProp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub module: ModuleKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Optimiser settings reported for each network.
    pub fn reported_default(module: ModuleKind) -> Self {
        let base = Self {
            module,
            epochs: 20,
            batch_size: 32,
            lr0: 1e-3,
            lr_decay: 10.0,
            lr_step_epochs: 5,
            optimizer: OptimizerKind::Adam,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            seed: 0,
        };
        match module {
            ModuleKind::Detector => Self {
                optimizer: OptimizerKind::Rmsprop,
                lr0: 1e-6,
                batch_size: 16,
                weight_decay: 1e-8,
                momentum: 0.9,
                ..base
            },
            ModuleKind::Segmentor => Self {
                weight_decay: 1e-5,
                ..base
            },
            ModuleKind::Forgery => Self {
                weight_decay: 2e-5,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{} training: {what}", self.module)));
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 {
            return bad("epochs, batch_size and lr_step_epochs must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr_decay >= 1.0) {
            return bad("lr0 must be positive and lr_decay at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("momentum and betas must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Rmsprop => Box::new(RmsProp::new(self.momentum as f32, self.weight_decay as f32)),
            OptimizerKind::Adam => Box::new(Adam::new(self.beta1 as f32, self.beta2 as f32, self.weight_decay as f32)),
        }
    }
}

/// Step schedule: `lr0 / lr_decay^floor(epoch / lr_step_epochs)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 / cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// One network's training problem.
pub trait Task {
    type Net: Module + Clone;
    type Item;
    /// Model selection: true picks the highest validation accuracy, false
    /// the lowest validation loss.
    const SELECT_BY_ACC: bool;

    /// Forward and backward for one item; returns its loss.
    fn step(&self, net: &mut Self::Net, item: &Self::Item, scale: f32) -> Result<f64>;
    /// Loss and accuracy in `[0, 1]` for one item.
    fn eval(&self, net: &Self::Net, item: &Self::Item) -> Result<(f64, f64)>;
}

pub struct DetectorTask;

impl Task for DetectorTask {
    type Net = DetectorNet;
    type Item = SyncedSample;
    const SELECT_BY_ACC: bool = true;

    fn step(&self, net: &mut DetectorNet, s: &SyncedSample, scale: f32) -> Result<f64> {
        Ok(net.accumulate(&s.csi, s.motion_label as u8 as f32, scale)?.1)
    }

    fn eval(&self, net: &DetectorNet, s: &SyncedSample) -> Result<(f64, f64)> {
        let z = net.forward(&s.csi)?;
        let t = s.motion_label as u8 as f64;
        let loss = crate::models::bce_with_logits(&[z as f64], &[t])?;
        Ok((loss, ((sigmoid(z) > 0.5) == s.motion_label) as u8 as f64))
    }
}

/// Segmentor hyper-parameters that are not optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegLoss {
    pub lambda_b: f64,
    pub smooth: f64,
}

impl Default for SegLoss {
    fn default() -> Self {
        Self {
            lambda_b: 1.0,
            smooth: 1.0,
        }
    }
}

pub struct SegmentorTask(pub SegLoss);

impl Task for SegmentorTask {
    type Net = SegmentorNet;
    type Item = SyncedSample;
    const SELECT_BY_ACC: bool = false;

    fn step(&self, net: &mut SegmentorNet, s: &SyncedSample, scale: f32) -> Result<f64> {
        let l = self.0;
        Ok(net.accumulate(&s.csi, &s.pseudo_mask.as_f32(), l.lambda_b, l.smooth, scale)?.0)
    }

    fn eval(&self, net: &SegmentorNet, s: &SyncedSample) -> Result<(f64, f64)> {
        let l = self.0;
        let x = net.prepare(&s.csi)?;
        let z: Vec<f64> = net.logits(&x)?.data.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = s.pseudo_mask.as_f32().iter().map(|&v| v as f64).collect();
        let loss = crate::models::segmentor_loss(&z, &t, l.lambda_b, l.smooth)?;
        let correct = z.iter().zip(&t).filter(|(z, t)| ((**z > 0.0) as u8 as f64) == **t).count();
        Ok((loss, correct as f64 / t.len() as f64))
    }
}

pub struct ForgeryTask;

impl Task for ForgeryTask {
    type Net = ForgeryNet;
    type Item = ClipPair;
    const SELECT_BY_ACC: bool = true;

    fn step(&self, net: &mut ForgeryNet, c: &ClipPair, scale: f32) -> Result<f64> {
        Ok(net.accumulate(&c.tensor(), c.label as u8 as f32, scale)?.1)
    }

    fn eval(&self, net: &ForgeryNet, c: &ClipPair) -> Result<(f64, f64)> {
        let z = net.forward(&c.tensor())?;
        let loss = crate::models::bce_with_logits(&[z as f64], &[c.label as u8 as f64])?;
        Ok((loss, ((sigmoid(z) >= 0.5) == c.label) as u8 as f64))
    }
}

pub struct Trained<N> {
    pub best: N,
    pub best_epoch: usize,
    pub last: N,
    pub log: Vec<EpochLog>,
}

/// Mean loss and accuracy of a net over a dataset.
pub fn evaluate<T: Task>(task: &T, net: &T::Net, items: &[T::Item]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for it in items {
        let (l, a) = task.eval(net, it)?;
        loss += l;
        acc += a;
    }
    let n = items.len().max(1) as f64;
    Ok((loss / n, acc / n))
}

/// Checkpoint selection key, higher is better and compared
/// lexicographically. Accuracy ties go to the lower validation loss; without
/// a validation set the latest epoch wins.
pub fn selection_score(by_acc: bool, val_acc: Option<f64>, val_loss: Option<f64>, epoch: usize) -> (f64, f64) {
    match (by_acc, val_acc, val_loss) {
        (true, Some(a), l) => (a, l.map_or(0.0, |l| -l)),
        (false, _, Some(l)) => (-l, 0.0),
        _ => (epoch as f64, 0.0),
    }
}

/// Mini-batch training with a fixed per-epoch shuffle derived from the
/// seed. Gradients of a batch are averaged before each optimiser step.
pub fn train_loop<T: Task>(
    task: &T,
    mut net: T::Net,
    cfg: &TrainConfig,
    train: &[T::Item],
    val: &[T::Item],
) -> Result<Trained<T::Net>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config(format!("{} training set is empty", cfg.module)));
    }
    let mut opt = cfg.optimizer();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<((f64, f64), usize, T::Net)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 * 0x1000_0001)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let l = task.step(&mut net, &train[i], scale)?;
                if !l.is_finite() {
                    return Err(Error::Diverged(format!(
                        "{} loss became {l} in epoch {epoch} at sample {i}",
                        cfg.module
                    )));
                }
                total += l;
            }
            opt.step(net.params_mut(), lr);
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(task, &net, val)?;
            (Some(l), Some(a))
        };
        info!(
            "{} epoch {epoch}: lr {lr:.1e} train_loss {train_loss:.4} val_loss {} val_acc {}",
            cfg.module,
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_acc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
        });
        let score = selection_score(T::SELECT_BY_ACC, val_acc, val_loss, epoch);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, net.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(Trained {
        best,
        best_epoch,
        last: net,
        log,
    })
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    let mut text = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
    for r in log {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_acc)
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `checkpoints/<module>_{best,final}.ckpt` and `logs/<module>.csv`
/// under `run_dir`.
pub fn save_outputs(run_dir: &Path, module: ModuleKind, best: Checkpoint, last: Checkpoint, log: &[EpochLog]) -> Result<()> {
    best.save(&run_dir.join("checkpoints").join(format!("{module}_best.ckpt")))?;
    last.save(&run_dir.join("checkpoints").join(format!("{module}_final.ckpt")))?;
    write_log_csv(&run_dir.join("logs").join(format!("{module}.csv")), log)
}

pub fn train_detector(
    cfg: &TrainConfig,
    arch: DetectorArch,
    shape: ModelShape,
    train: &[SyncedSample],
    val: &[SyncedSample],
) -> Result<Trained<DetectorNet>> {
    let mut net = DetectorNet::new(arch, shape, &mut Init::seeded(cfg.seed))?;
    net.norm = Standardizer::fit(train.iter().map(|s| &s.csi), shape.dims);
    train_loop(&DetectorTask, net, cfg, train, val)
}

pub fn train_segmentor(
    cfg: &TrainConfig,
    arch: SegmentorArch,
    loss: SegLoss,
    shape: ModelShape,
    train: &[SyncedSample],
    val: &[SyncedSample],
) -> Result<Trained<SegmentorNet>> {
    if let Some(s) = train.first() {
        if (s.pseudo_mask.height, s.pseudo_mask.width) != (shape.height, shape.width) {
            return Err(Error::Dimension(format!(
                "pseudo-masks are {}x{}, segmentor works at {}x{}",
                s.pseudo_mask.height, s.pseudo_mask.width, shape.height, shape.width
            )));
        }
    }
    let mut net = SegmentorNet::new(arch, shape, &mut Init::seeded(cfg.seed))?;
    net.norm = Standardizer::fit(train.iter().map(|s| &s.csi), shape.dims);
    train_loop(&SegmentorTask(loss), net, cfg, train, val)
}

pub fn train_forgery(
    cfg: &TrainConfig,
    arch: ForgeryArch,
    shape: ModelShape,
    train: &[ClipPair],
    val: &[ClipPair],
) -> Result<Trained<ForgeryNet>> {
    let net = ForgeryNet::new(arch, shape, &mut Init::seeded(cfg.seed))?;
    train_loop(&ForgeryTask, net, cfg, train, val)
}

/// Settings for turning segmentor predictions into forgery clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    pub g: usize,
    pub forgery_frac: f64,
    pub min_offset: usize,
    pub seed: u64,
}

/// Wireless masks for every sample, in input order.
pub fn predict_masks(seg: &SegmentorNet, samples: &[SyncedSample]) -> Result<Vec<WirelessMask>> {
    samples
        .iter()
        .map(|s| {
            Ok(WirelessMask {
                frame_index: s.frame_index,
                height: seg.shape.height,
                width: seg.shape.width,
                probs: seg.predict(&s.csi)?,
            })
        })
        .collect()
}

/// Forgery clips from the moving frames among `samples`: each recording's
/// runs of consecutive moving frames pair their pseudo-masks with the
/// segmentor's predictions.
pub fn generate_labels(seg: &SegmentorNet, samples: &[SyncedSample], params: &ClipParams) -> Result<Vec<ClipPair>> {
    let moving: Vec<&SyncedSample> = samples.iter().filter(|s| s.motion_label).collect();
    let mut recordings: Vec<usize> = moving.iter().map(|s| s.recording).collect();
    recordings.sort_unstable();
    recordings.dedup();
    let mut tracks = Vec::new();
    for r in recordings {
        let mut own: Vec<&SyncedSample> = moving.iter().copied().filter(|s| s.recording == r).collect();
        own.sort_by_key(|s| s.frame_index);
        let visual = own.iter().map(|s| s.pseudo_mask.clone()).collect();
        let owned: Vec<SyncedSample> = own.into_iter().cloned().collect();
        let wireless = predict_masks(seg, &owned)?;
        tracks.extend(consecutive_tracks(r, visual, wireless)?);
    }
    build_forgery_clips(&tracks, params.g, params.forgery_frac, params.min_offset, params.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let mut cfg = TrainConfig::reported_default(ModuleKind::Segmentor);
        assert_eq!(lr_at(&cfg, 0), 1e-3);
        assert!((lr_at(&cfg, 5) - 1e-4).abs() < 1e-18);
        cfg.lr0 = 1e-6;
        assert!((lr_at(&cfg, 19) - 1e-9).abs() < 1e-22);
    }

    #[test]
    fn accuracy_ties_prefer_lower_loss() {
        let early = selection_score(true, Some(0.99), Some(0.6), 1);
        let late = selection_score(true, Some(0.99), Some(0.4), 19);
        let worse = selection_score(true, Some(0.98), Some(0.1), 5);
        assert!(late > early && early > worse);
        assert!(selection_score(false, Some(0.5), Some(0.2), 0) > selection_score(false, Some(0.9), Some(0.3), 1));
        assert!(selection_score(true, None, None, 3) > selection_score(true, None, None, 2));
    }

    #[test]
    fn defaults_follow_the_reported_settings() {
        let d = TrainConfig::reported_default(ModuleKind::Detector);
        assert_eq!((d.optimizer, d.lr0, d.batch_size, d.momentum), (OptimizerKind::Rmsprop, 1e-6, 16, 0.9));
        assert_eq!(d.weight_decay, 1e-8);
        let s = TrainConfig::reported_default(ModuleKind::Segmentor);
        assert_eq!((s.optimizer, s.lr0, s.batch_size, s.weight_decay), (OptimizerKind::Adam, 1e-3, 32, 1e-5));
        assert_eq!((s.beta1, s.beta2), (0.9, 0.999));
        let f = TrainConfig::reported_default(ModuleKind::Forgery);
        assert_eq!((f.optimizer, f.lr0, f.batch_size, f.weight_decay), (OptimizerKind::Adam, 1e-3, 32, 2e-5));
        for c in [d, s, f] {
            assert_eq!((c.epochs, c.lr_decay, c.lr_step_epochs), (20, 10.0, 5));
        }
    }
}
