use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use super::{BusyTime, Counters, GateStage, JudgeStage, Models, SegmentStage, Thresholds, Verdict};
use crate::csi::{CsiWindow, HampelParams};
use crate::dataset::{load_recording, ForgeryAnnotation, RecordingManifest};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, MetricsReport};
use crate::mask::{BinaryMask, MaskParams};

#[derive(Debug, Clone)]
pub struct StreamFrame {
    pub window: CsiWindow,
    pub visual: Option<BinaryMask>,
}

/// Frames of a recording directory in index order.
pub fn load_stream(
    dir: &Path,
    m: usize,
    hampel: HampelParams,
    mask: &MaskParams,
) -> Result<(RecordingManifest, Vec<StreamFrame>)> {
    let rec = load_recording(dir, 0, m, 0.0, hampel, mask)?;
    let frames = rec
        .samples
        .into_iter()
        .map(|s| StreamFrame {
            window: s.csi,
            visual: Some(s.pseudo_mask),
        })
        .collect();
    Ok((rec.manifest, frames))
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    pub verdicts: Vec<Verdict>,
    pub counters: Counters,
    pub busy: BusyTime,
    pub wall: Duration,
    /// Scored against the recording's forgery annotation: clips entirely
    /// inside the interval are positives, clips entirely outside negatives,
    /// straddling clips are left out. `None` when no clip qualifies.
    pub metrics: Option<MetricsReport>,
}

impl StreamReport {
    /// Per-module throughput over time spent in that module, plus
    /// end-to-end frames over wall time.
    pub fn fps(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let c = &self.counters;
        for (name, calls, busy) in [
            ("detector", c.detector_calls, self.busy.detector),
            ("segmentor", c.segmentor_calls, self.busy.segmentor),
            ("forgery", c.forgery_calls, self.busy.forgery),
        ] {
            if calls > 0 && !busy.is_zero() {
                out.insert(name.to_string(), calls as f64 / busy.as_secs_f64());
            }
        }
        if c.frames > 0 && !self.wall.is_zero() {
            out.insert("pipeline".to_string(), c.frames as f64 / self.wall.as_secs_f64());
        }
        out
    }

    /// Fraction of fully forged clips that raised an alert.
    pub fn alert_rate_in(&self, ann: &ForgeryAnnotation, g: usize) -> Option<f64> {
        let inside: Vec<&Verdict> = self
            .verdicts
            .iter()
            .filter(|v| v.clip_start >= ann.start && v.clip_start + g <= ann.end)
            .collect();
        (!inside.is_empty()).then(|| inside.iter().filter(|v| v.forged).count() as f64 / inside.len() as f64)
    }
}

/// Ground truth of the clip `[start, start + g)`: forged when it lies
/// inside the annotated interval, genuine when it does not touch it, `None`
/// when it straddles a boundary. Recordings without an annotation are
/// genuine throughout.
pub fn clip_label(start: usize, g: usize, ann: Option<&ForgeryAnnotation>) -> Option<bool> {
    let Some(a) = ann else {
        return Some(false);
    };
    if start >= a.start && start + g <= a.end {
        Some(true)
    } else if start + g <= a.start || start >= a.end {
        Some(false)
    } else {
        None
    }
}

fn send<T>(tx: &SyncSender<T>, v: T) -> Result<()> {
    tx.send(v)
        .map_err(|_| Error::Validation("pipeline stage stopped early".into()))
}

/// Runs the gated pipeline over a stream with one thread per stage,
/// connected by bounded queues of `queue_depth`.
pub fn run_stream(
    frames: Vec<StreamFrame>,
    models: &Models,
    thresholds: Thresholds,
    queue_depth: usize,
    annotation: Option<&ForgeryAnnotation>,
) -> Result<StreamReport> {
    let depth = queue_depth.max(1);
    let g = models.g();
    let n = frames.len() as u64;
    let t0 = Instant::now();
    let (tx_in, rx_in) = sync_channel::<(Instant, StreamFrame)>(depth);
    let (tx_gate, rx_gate) = sync_channel(depth);
    let (tx_seg, rx_seg) = sync_channel(depth);

    let (gate, seg, judge, verdicts) = thread::scope(|s| -> Result<_> {
        let feeder = s.spawn(move || -> Result<()> {
            for f in frames {
                if tx_in.send((Instant::now(), f)).is_err() {
                    break;
                }
            }
            Ok(())
        });
        let gate = s.spawn(move || -> Result<GateStage> {
            let mut st = GateStage::default();
            let rx: Receiver<(Instant, StreamFrame)> = rx_in;
            for (arrived, f) in rx {
                let idx = f.window.frame_index;
                let out = st.run(&models.detector, thresholds.gate, idx, arrived, f.window, f.visual)?;
                send(&tx_gate, out)?;
            }
            Ok(st)
        });
        let seg = s.spawn(move || -> Result<SegmentStage> {
            let mut st = SegmentStage::default();
            for x in rx_gate {
                send(&tx_seg, st.run(&models.segmentor, x)?)?;
            }
            Ok(st)
        });
        let mut judge = JudgeStage::new(g);
        let mut verdicts = Vec::new();
        let mut failed = None;
        for x in rx_seg {
            match judge.run(&models.forgery, thresholds.verdict, x) {
                Ok(Some(v)) => verdicts.push(v),
                Ok(None) => {}
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        // Upstream errors take precedence: they explain a short stream.
        let gate = gate.join().expect("gate stage panicked");
        let seg = seg.join().expect("segmentor stage panicked");
        feeder.join().expect("feeder panicked")?;
        let gate = gate?;
        let seg = seg?;
        if let Some(e) = failed {
            return Err(e);
        }
        Ok((gate, seg, judge, verdicts))
    })?;
    let wall = t0.elapsed();

    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for v in &verdicts {
        if let Some(l) = clip_label(v.clip_start, g, annotation) {
            preds.push(v.forged);
            labels.push(l);
        }
    }
    let metrics = if preds.is_empty() { None } else { Some(confusion(&preds, &labels)?) };
    let report = StreamReport {
        counters: Counters {
            frames: n,
            detector_calls: gate.calls,
            segmentor_calls: seg.calls,
            forgery_calls: judge.calls,
            clips: judge.calls,
            alerts: judge.alerts,
        },
        busy: BusyTime {
            detector: gate.busy,
            segmentor: seg.busy,
            forgery: judge.busy,
        },
        wall,
        verdicts,
        metrics: None,
    };
    let fps = report.fps();
    Ok(StreamReport {
        metrics: metrics.map(|mut m| {
            m.fps = fps;
            m
        }),
        ..report
    })
}

/// One JSON object per line: `clip_start`, `score`, `forged`, `latency_us`.
pub fn write_verdict_log(path: &Path, verdicts: &[Verdict]) -> Result<()> {
    let mut out = Vec::new();
    for v in verdicts {
        serde_json::to_writer(&mut out, v).map_err(|e| Error::Validation(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
