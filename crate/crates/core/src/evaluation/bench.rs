use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{clip_tensor, WirelessMask};
use crate::error::{Error, Result};
use crate::pipeline::{Models, StreamFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Median frames (clips for the forgery detector) per second.
    pub fps: BTreeMap<String, f64>,
    pub hardware: String,
}

pub fn hardware_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!(
        "{} ({}-{}, {} logical cpus, single-threaded kernels)",
        model,
        std::env::consts::ARCH,
        std::env::consts::OS,
        cpus
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed(warmup: usize, iters: usize, items: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut rates = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        rates.push(items as f64 / t.elapsed().as_secs_f64().max(1e-9));
    }
    Ok(median(rates))
}

/// Throughput of each network on its own, over every frame of `frames`.
/// The forgery detector runs on all stride-1 clips of its visual masks and
/// the segmentor's predictions.
pub fn bench(models: &Models, frames: &[StreamFrame], warmup: usize, iters: usize) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::Config("bench needs at least one timed iteration".into()));
    }
    let g = models.g();
    if frames.len() < g {
        return Err(Error::Validation(format!("bench needs at least g={g} frames, got {}", frames.len())));
    }
    let mut visual = Vec::with_capacity(frames.len());
    for f in frames {
        match &f.visual {
            Some(v) => visual.push(v.clone()),
            None => return Err(Error::Validation(format!("frame {} has no visual mask", f.window.frame_index))),
        }
    }
    let mut fps = BTreeMap::new();
    let det = timed(warmup, iters, frames.len(), || {
        for f in frames {
            std::hint::black_box(models.detector.forward(&f.window)?);
        }
        Ok(())
    })?;
    fps.insert("detector".to_string(), det);
    let mut wireless = Vec::with_capacity(frames.len());
    let seg = timed(warmup, iters, frames.len(), || {
        wireless.clear();
        for f in frames {
            wireless.push(WirelessMask {
                frame_index: f.window.frame_index,
                height: models.segmentor.shape.height,
                width: models.segmentor.shape.width,
                probs: models.segmentor.predict(&f.window)?,
            });
        }
        Ok(())
    })?;
    fps.insert("segmentor".to_string(), seg);
    let clips: Vec<_> = (0..=frames.len() - g)
        .map(|s| clip_tensor(visual[s..s + g].iter(), wireless[s..s + g].iter()))
        .collect();
    let fg = timed(warmup, iters, clips.len(), || {
        for c in &clips {
            std::hint::black_box(models.forgery.forward(c)?);
        }
        Ok(())
    })?;
    fps.insert("forgery".to_string(), fg);
    Ok(BenchReport {
        frames: frames.len(),
        warmup,
        iters,
        fps,
        hardware: hardware_descriptor(),
    })
}
