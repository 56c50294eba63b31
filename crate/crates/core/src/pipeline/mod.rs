//! Gated inference: detector, then segmentor, then the forgery judge over
//! sliding g-frame clips.

mod stream;

pub use stream::{clip_label, load_stream, run_stream, write_verdict_log, StreamFrame, StreamReport};

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::csi::CsiWindow;
use crate::dataset::{clip_tensor, WirelessMask};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::models::{Checkpoint, DetectorNet, ForgeryNet, ModelShape, ModuleKind, SegmentorNet};
use crate::nn::sigmoid;

/// The three trained networks.
#[derive(Debug, Clone)]
pub struct Models {
    pub detector: DetectorNet,
    pub segmentor: SegmentorNet,
    pub forgery: ForgeryNet,
}

impl Models {
    /// Loads `<module>_best.ckpt` for each module from `dir`, rejecting
    /// checkpoints whose fingerprint disagrees with `shape` or the seeds.
    pub fn load(dir: &Path, shape: ModelShape, seed_of: impl Fn(ModuleKind) -> u64) -> Result<Self> {
        let ck = |m: ModuleKind| Checkpoint::load(&dir.join(format!("{m}_best.ckpt")));
        Ok(Self {
            detector: DetectorNet::from_checkpoint(&ck(ModuleKind::Detector)?, shape, seed_of(ModuleKind::Detector))?,
            segmentor: SegmentorNet::from_checkpoint(&ck(ModuleKind::Segmentor)?, shape, seed_of(ModuleKind::Segmentor))?,
            forgery: ForgeryNet::from_checkpoint(&ck(ModuleKind::Forgery)?, shape, seed_of(ModuleKind::Forgery))?,
        })
    }

    pub fn g(&self) -> usize {
        self.forgery.shape.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// The gate opens when the detector's probability exceeds this.
    pub gate: f64,
    /// A clip is flagged when its score reaches this.
    pub verdict: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { gate: 0.5, verdict: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub clip_start: usize,
    pub score: f64,
    pub forged: bool,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub frames: u64,
    pub detector_calls: u64,
    pub segmentor_calls: u64,
    pub forgery_calls: u64,
    pub clips: u64,
    pub alerts: u64,
}

/// Time spent inside each network's forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BusyTime {
    pub detector: Duration,
    pub segmentor: Duration,
    pub forgery: Duration,
}

/// Detector output handed downstream.
#[derive(Debug)]
pub(crate) struct Gated {
    pub index: usize,
    pub arrived: Instant,
    pub window: CsiWindow,
    pub visual: Option<BinaryMask>,
    pub open: bool,
}

/// Segmentor output handed downstream; `pair` is `None` when the clip
/// buffers must be reset.
#[derive(Debug)]
pub(crate) struct Segmented {
    pub index: usize,
    pub arrived: Instant,
    pub pair: Option<(BinaryMask, WirelessMask)>,
}

#[derive(Debug, Default)]
pub(crate) struct GateStage {
    last_index: Option<usize>,
    pub calls: u64,
    pub busy: Duration,
}

impl GateStage {
    pub fn run(
        &mut self,
        det: &DetectorNet,
        th: f64,
        index: usize,
        arrived: Instant,
        window: CsiWindow,
        visual: Option<BinaryMask>,
    ) -> Result<Gated> {
        if let Some(last) = self.last_index {
            if index <= last {
                return Err(Error::Ordering(format!("frame {index} arrived after frame {last}")));
            }
        }
        if window.frame_index != index || visual.as_ref().is_some_and(|v| v.frame_index != index) {
            return Err(Error::Validation(format!("inputs for frame {index} are not aligned")));
        }
        self.last_index = Some(index);
        let t = Instant::now();
        let p = sigmoid(det.forward(&window)?) as f64;
        self.busy += t.elapsed();
        self.calls += 1;
        Ok(Gated {
            index,
            arrived,
            window,
            visual,
            open: p > th,
        })
    }
}

#[derive(Debug, Default)]
pub(crate) struct SegmentStage {
    pub calls: u64,
    pub busy: Duration,
}

impl SegmentStage {
    pub fn run(&mut self, seg: &SegmentorNet, x: Gated) -> Result<Segmented> {
        let pair = match (x.open, x.visual) {
            (true, Some(visual)) => {
                let t = Instant::now();
                let probs = seg.predict(&x.window)?;
                self.busy += t.elapsed();
                self.calls += 1;
                let wireless = WirelessMask {
                    frame_index: x.index,
                    height: seg.shape.height,
                    width: seg.shape.width,
                    probs,
                };
                Some((visual, wireless))
            }
            _ => None,
        };
        Ok(Segmented {
            index: x.index,
            arrived: x.arrived,
            pair,
        })
    }
}

/// Ring buffers of the last g aligned visual and wireless masks.
#[derive(Debug)]
pub(crate) struct JudgeStage {
    g: usize,
    visual: VecDeque<Arc<BinaryMask>>,
    wireless: VecDeque<Arc<WirelessMask>>,
    pub calls: u64,
    pub alerts: u64,
    pub busy: Duration,
}

impl JudgeStage {
    pub fn new(g: usize) -> Self {
        Self {
            g,
            visual: VecDeque::with_capacity(g),
            wireless: VecDeque::with_capacity(g),
            calls: 0,
            alerts: 0,
            busy: Duration::ZERO,
        }
    }

    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn reset(&mut self) {
        self.visual.clear();
        self.wireless.clear();
    }

    pub fn run(&mut self, net: &ForgeryNet, th: f64, x: Segmented) -> Result<Option<Verdict>> {
        let Some((visual, wireless)) = x.pair else {
            self.reset();
            return Ok(None);
        };
        // A gap in frame indices breaks the clip.
        if self.visual.back().is_some_and(|v| v.frame_index + 1 != x.index) {
            self.reset();
        }
        if self.visual.len() == self.g {
            self.visual.pop_front();
            self.wireless.pop_front();
        }
        self.visual.push_back(Arc::new(visual));
        self.wireless.push_back(Arc::new(wireless));
        if self.visual.len() < self.g {
            return Ok(None);
        }
        let clip = clip_tensor(
            self.visual.iter().map(|m| m.as_ref()),
            self.wireless.iter().map(|w| w.as_ref()),
        );
        let t = Instant::now();
        let score = sigmoid(net.forward(&clip)?) as f64;
        self.busy += t.elapsed();
        self.calls += 1;
        let forged = score >= th;
        self.alerts += forged as u64;
        Ok(Some(Verdict {
            clip_start: self.visual[0].frame_index,
            score,
            forged,
            latency_us: x.arrived.elapsed().as_micros() as u64,
        }))
    }
}

/// Synchronous pipeline: one call per frame.
#[derive(Debug)]
pub struct PipelineState {
    pub thresholds: Thresholds,
    gate: GateStage,
    seg: SegmentStage,
    judge: JudgeStage,
    gate_open: bool,
    frames: u64,
}

impl PipelineState {
    pub fn new(g: usize, thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            gate: GateStage::default(),
            seg: SegmentStage::default(),
            judge: JudgeStage::new(g),
            gate_open: false,
            frames: 0,
        }
    }

    pub fn gate_open(&self) -> bool {
        self.gate_open
    }

    /// Frames currently held in the clip buffers.
    pub fn buffered(&self) -> usize {
        self.judge.len()
    }

    pub fn counters(&self) -> Counters {
        Counters {
            frames: self.frames,
            detector_calls: self.gate.calls,
            segmentor_calls: self.seg.calls,
            forgery_calls: self.judge.calls,
            clips: self.judge.calls,
            alerts: self.judge.alerts,
        }
    }

    pub fn busy(&self) -> BusyTime {
        BusyTime {
            detector: self.gate.busy,
            segmentor: self.seg.busy,
            forgery: self.judge.busy,
        }
    }

    /// Processes one frame. Without a visual mask the buffers are reset,
    /// since no aligned clip can include this frame.
    pub fn step(&mut self, models: &Models, window: &CsiWindow, visual: Option<&BinaryMask>) -> Result<Option<Verdict>> {
        let arrived = Instant::now();
        let gated = self.gate.run(
            &models.detector,
            self.thresholds.gate,
            window.frame_index,
            arrived,
            window.clone(),
            visual.cloned(),
        )?;
        self.frames += 1;
        self.gate_open = gated.open;
        let seg = self.seg.run(&models.segmentor, gated)?;
        self.judge.run(&models.forgery, self.thresholds.verdict, seg)
    }
}
