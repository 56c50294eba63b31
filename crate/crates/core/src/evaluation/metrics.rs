use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A rate whose denominator may be zero. Serialised as a number or the
/// string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate(pub Option<f64>);

impl Rate {
    pub fn ratio(num: u64, den: u64) -> Self {
        Rate((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{:.2}%", 100.0 * v),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rate(Some(v))),
            Raw::Str(s) if s == "undefined" => Ok(Rate(None)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

/// Binary classification counts with "forged" (or "moving") as the
/// positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub acc: Rate,
    pub fpr: Rate,
    pub tpr: Rate,
    /// Frames per second keyed by module name; empty when not measured.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fps: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// Accuracy is computed as `1 - (fp + fn) / total` so that identity
    /// holds exactly in floating point.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = tp + fp + tn + fn_;
        Self {
            tp,
            fp,
            tn,
            fn_,
            acc: Rate(Rate::ratio(fp + fn_, total).value().map(|e| 1.0 - e)),
            fpr: Rate::ratio(fp, fp + tn),
            tpr: Rate::ratio(tp, tp + fn_),
            fps: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "  TP {:>6}  FP {:>6}", self.tp, self.fp)?;
        writeln!(f, "  FN {:>6}  TN {:>6}", self.fn_, self.tn)?;
        writeln!(f, "  Acc {}  FPR {}  TPR {}", self.acc, self.fpr, self.tpr)?;
        for (module, fps) in &self.fps {
            writeln!(f, "  FPS {module:<10} {fps:.1}")?;
        }
        Ok(())
    }
}

/// Exact confusion counts of `preds` against `labels`.
pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}
