use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, score, train_back, train_front, Benchmark, Experiment, FrontEnd, Splits};
use super::MetricsReport;
use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationParam {
    /// CSI measurements per frame; retrains every network.
    M,
    /// Clip length; retrains the forgery detector only.
    G,
}

impl fmt::Display for AblationParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationParam::M => "m",
            AblationParam::G => "g",
        })
    }
}

impl FromStr for AblationParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(AblationParam::M),
            "g" => Ok(AblationParam::G),
            _ => Err(Error::Config(format!("unknown ablation parameter {s:?}, expected m or g"))),
        }
    }
}

/// Forgery-detection accuracies reported for the original private dataset.
pub fn reported_acc(param: AblationParam, value: usize) -> Option<f64> {
    match (param, value) {
        (AblationParam::M, 1) => Some(0.9025),
        (AblationParam::M, 3) => Some(0.9125),
        (AblationParam::M, 5) => Some(0.9438),
        (AblationParam::G, 3) => Some(0.8717),
        (AblationParam::G, 5) => Some(0.9201),
        (AblationParam::G, 7) => Some(0.9438),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: AblationParam,
    pub value: usize,
    /// Forgery detection on the held-out clips.
    pub metrics: MetricsReport,
}

pub fn with_param(base: &RunConfig, param: AblationParam, value: usize) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match param {
        AblationParam::M => cfg.preprocess.m = value,
        AblationParam::G => {
            cfg.forgery.g = value;
            cfg.forgery.min_offset = cfg.forgery.min_offset.map(|o| o.max(value));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One retrained run per value; everything else, seeds included, stays as
/// in `base`. A finished run of `base` can be passed as `cached` and is
/// reused for the row matching the base value, and for its detector and
/// segmentor when sweeping g.
pub fn ablate(
    param: AblationParam,
    values: &[usize],
    base: &RunConfig,
    dirs: &[PathBuf],
    cached: Option<&Experiment>,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let base_value = match param {
        AblationParam::M => base.preprocess.m,
        AblationParam::G => base.forgery.g,
    };
    let mut rows = Vec::new();
    let mut base_bench: Option<Benchmark> = None;
    let mut owned_front: Option<(Splits, FrontEnd)> = None;
    for &value in values {
        let cfg = with_param(base, param, value)?;
        log::info!("ablation {param}={value}");
        if let (Some(exp), true) = (cached, value == base_value) {
            rows.push(AblationRow {
                param,
                value,
                metrics: exp.metrics.forgery.clone(),
            });
            continue;
        }
        let metrics = match param {
            AblationParam::M => {
                let bench = Benchmark::load(&cfg, dirs)?;
                run_experiment(&cfg, &bench)?.metrics.forgery
            }
            AblationParam::G => {
                if base_bench.is_none() {
                    base_bench = Some(Benchmark::load(base, dirs)?);
                }
                let bench = base_bench.as_ref().expect("loaded above");
                let (splits, front) = match cached {
                    Some(exp) => (&exp.splits, &exp.front),
                    None => {
                        if owned_front.is_none() {
                            let splits = Splits::new(base, bench)?;
                            let front = train_front(base, &splits)?;
                            owned_front = Some((splits, front));
                        }
                        let (s, f) = owned_front.as_ref().expect("trained above");
                        (s, f)
                    }
                };
                let back = train_back(&cfg, &front.segmentor.best, splits)?;
                score(&cfg, bench, splits, front, &back)?.forgery
            }
        };
        rows.push(AblationRow { param, value, metrics });
    }
    Ok(rows)
}

/// Columns `param,value,acc,fpr,tpr`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("param,value,acc,fpr,tpr\n");
    let cell = |r: super::Rate| r.value().map_or("undefined".to_string(), |v| format!("{v}"));
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.param,
            r.value,
            cell(r.metrics.acc),
            cell(r.metrics.fpr),
            cell(r.metrics.tpr)
        ));
    }
    out
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ablation_csv(rows)).map_err(|e| Error::io(path, e))
}

/// True when accuracy never drops as the parameter grows.
pub fn trend_holds(rows: &[AblationRow]) -> bool {
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.value);
    sorted
        .windows(2)
        .all(|w| w[1].metrics.acc.value().unwrap_or(0.0) >= w[0].metrics.acc.value().unwrap_or(0.0))
}

/// Human-readable table with the reported accuracies alongside.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<6}{:>8}{:>10}{:>10}{:>10}{:>12}\n", "param", "value", "acc", "fpr", "tpr", "reported");
    for r in rows {
        let rep = reported_acc(r.param, r.value).map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
        out.push_str(&format!(
            "{:<6}{:>8}{:>10}{:>10}{:>10}{:>12}\n",
            r.param.to_string(),
            r.value,
            r.metrics.acc.to_string(),
            r.metrics.fpr.to_string(),
            r.metrics.tpr.to_string(),
            rep
        ));
    }
    out.push_str(&format!(
        "accuracy non-decreasing in {}: {}\n",
        rows.first().map_or("-".to_string(), |r| r.param.to_string()),
        if trend_holds(rows) { "yes" } else { "no" }
    ));
    out
}
