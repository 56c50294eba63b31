//! Run configuration: one TOML file with a section per stage. Unknown keys
//! are rejected; missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csi::{CsiDims, HampelParams};
use crate::dataset::{Selector, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::mask::{FrameGeometry, MaskParams};
use crate::models::{DetectorArch, ForgeryArch, ModelShape, ModuleKind, SegmentorArch};
use crate::synth::{CsiModel, SceneParams};
use crate::training::{ClipParams, OptimizerKind, SegLoss, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub height: usize,
    pub width: usize,
    pub block_size: usize,
    pub gop_length: usize,
    pub fps: f64,
    pub csi_rate_hz: f64,
    pub k: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            height: 96,
            width: 128,
            block_size: 16,
            gop_length: 4,
            fps: 7.5,
            csi_rate_hz: 37.5,
            k: 30,
            n_tx: 3,
            n_rx: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Concurrent actors in each simulated recording.
    pub persons: Vec<usize>,
    pub frames: usize,
    pub scene: SceneParams,
    pub csi: CsiModel,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            persons: vec![0, 1, 2, 0, 1, 2],
            frames: 200,
            scene: SceneParams::default(),
            csi: CsiModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub m: usize,
    pub eta: f64,
    pub hampel: HampelParams,
    pub mask: MaskParams,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            m: 5,
            eta: 0.0,
            hampel: HampelParams::default(),
            mask: MaskParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_frac: f64,
    /// Share of the training side held out for model selection.
    pub val_frac: f64,
    pub mode: SplitMode,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.15,
            mode: SplitMode::Blocks { block_len: 40 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub detector: DetectorArch,
    pub segmentor: SegmentorArch,
    pub forgery: ForgeryArch,
    pub segmentor_loss: SegLoss,
}

/// Per-module optimiser settings; anything left out takes the module's
/// reported default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_step_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr0: self.lr0.unwrap_or(base.lr0),
            lr_decay: self.lr_decay.unwrap_or(base.lr_decay),
            lr_step_epochs: self.lr_step_epochs.unwrap_or(base.lr_step_epochs),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            momentum: self.momentum.unwrap_or(base.momentum),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            seed: self.seed.unwrap_or(base.seed),
            module: base.module,
        }
    }

    fn full(c: &TrainConfig) -> Self {
        Self {
            epochs: Some(c.epochs),
            batch_size: Some(c.batch_size),
            lr0: Some(c.lr0),
            lr_decay: Some(c.lr_decay),
            lr_step_epochs: Some(c.lr_step_epochs),
            optimizer: Some(c.optimizer),
            momentum: Some(c.momentum),
            beta1: Some(c.beta1),
            beta2: Some(c.beta2),
            weight_decay: Some(c.weight_decay),
            seed: Some(c.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSections {
    pub detector: TrainOverrides,
    pub segmentor: TrainOverrides,
    pub forgery: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgerySection {
    pub g: usize,
    pub forgery_frac: f64,
    /// Defaults to `g`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_offset: Option<usize>,
}

impl Default for ForgerySection {
    fn default() -> Self {
        Self {
            g: 7,
            forgery_frac: 0.5,
            min_offset: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub gate_threshold: f64,
    pub verdict_threshold: f64,
    pub queue_depth: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            gate_threshold: 0.5,
            verdict_threshold: 0.5,
            queue_depth: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub warmup: usize,
    pub iters: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { warmup: 2, iters: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub simulate: SimulateSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
    pub models: ModelsSection,
    pub train: TrainSections,
    pub forgery: ForgerySection,
    pub pipeline: PipelineSection,
    pub bench: BenchSection,
}

/// Seed streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Scene(usize),
    Split,
    Train(ModuleKind),
    Clips,
    TestClips,
    Val,
    ValClips,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipSide {
    Train,
    Val,
    Test,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The synthetic benchmark shipped in `configs/benchmark.toml`.
pub const BENCHMARK_TOML: &str = include_str!("../../../configs/benchmark.toml");

impl RunConfig {
    pub fn benchmark() -> Self {
        Self::from_toml(BENCHMARK_TOML).expect("shipped benchmark config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }

    /// The configuration with every default written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.train.detector = TrainOverrides::full(&self.train_config(ModuleKind::Detector));
        r.train.segmentor = TrainOverrides::full(&self.train_config(ModuleKind::Segmentor));
        r.train.forgery = TrainOverrides::full(&self.train_config(ModuleKind::Forgery));
        r.forgery.min_offset = Some(self.min_offset());
        r
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("{name}: {msg}")));
        let d = &self.data;
        if let Err(e) = FrameGeometry::new(d.height, d.width, d.block_size) {
            return field("data", e.to_string());
        }
        if d.height % 16 != 0 || d.width % 16 != 0 {
            return field("data.height/width", format!("{}x{} must be multiples of 16", d.height, d.width));
        }
        if d.gop_length == 0 {
            return field("data.gop_length", "must be at least 1".into());
        }
        if !(d.fps > 0.0) {
            return field("data.fps", format!("must be positive, got {}", d.fps));
        }
        if let Err(e) = CsiDims::new(d.k, d.n_tx, d.n_rx) {
            return field("data.k/n_tx/n_rx", e.to_string());
        }
        let p = &self.preprocess;
        if p.m == 0 {
            return field("preprocess.m", "must be at least 1".into());
        }
        if !(d.csi_rate_hz >= p.m as f64 * d.fps) {
            return field(
                "data.csi_rate_hz",
                format!("{} Hz cannot supply m={} measurements per frame at {} fps", d.csi_rate_hz, p.m, d.fps),
            );
        }
        if !(0.0..1.0).contains(&p.eta) {
            return field("preprocess.eta", format!("must lie in [0, 1), got {}", p.eta));
        }
        if let Err(e) = p.hampel.validate() {
            return field("preprocess.hampel", e.to_string());
        }
        if let Err(e) = p.mask.validate() {
            return field("preprocess.mask", e.to_string());
        }
        if let Err(e) = self.split_spec(Selector::AllFrames).validate() {
            return field("split", e.to_string());
        }
        if !(0.0..0.5).contains(&self.split.val_frac) {
            return field("split.val_frac", format!("must lie in [0, 0.5), got {}", self.split.val_frac));
        }
        if let Some(&n) = self.simulate.persons.iter().find(|&&n| n > crate::synth::SceneSpec::MAX_PERSONS) {
            return field("simulate.persons", format!("{n} exceeds the maximum of 3"));
        }
        if let Err(e) = self.csi_model().validate() {
            return field("simulate.csi", e.to_string());
        }
        let f = &self.forgery;
        if f.g == 0 {
            return field("forgery.g", "must be at least 1".into());
        }
        if !(f.forgery_frac > 0.0 && f.forgery_frac < 1.0) {
            return field("forgery.forgery_frac", format!("must lie in (0, 1), got {}", f.forgery_frac));
        }
        if self.min_offset() < f.g {
            return field("forgery.min_offset", format!("{} is below g={}", self.min_offset(), f.g));
        }
        let l = &self.models.segmentor_loss;
        if !(l.smooth > 0.0) || !(l.lambda_b >= 0.0) {
            return field("models.segmentor_loss", "smooth must be positive and lambda_b non-negative".into());
        }
        for module in ModuleKind::ALL {
            if let Err(e) = self.train_config(module).validate() {
                return field(&format!("train.{module}"), e.to_string());
            }
        }
        let pl = &self.pipeline;
        if !(0.0..=1.0).contains(&pl.gate_threshold) || !(0.0..=1.0).contains(&pl.verdict_threshold) {
            return field("pipeline", "thresholds must lie in [0, 1]".into());
        }
        if pl.queue_depth == 0 {
            return field("pipeline.queue_depth", "must be at least 1".into());
        }
        if self.bench.iters == 0 {
            return field("bench.iters", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn seed_for(&self, stream: SeedStream) -> u64 {
        let tag = match stream {
            SeedStream::Scene(i) => 0x100 + i as u64,
            SeedStream::Split => 1,
            SeedStream::Train(ModuleKind::Detector) => 2,
            SeedStream::Train(ModuleKind::Segmentor) => 3,
            SeedStream::Train(ModuleKind::Forgery) => 4,
            SeedStream::Clips => 5,
            SeedStream::TestClips => 6,
            SeedStream::Val => 7,
            SeedStream::ValClips => 8,
        };
        // Kept below 2^63 so resolved configs stay representable in TOML.
        splitmix(self.seed ^ splitmix(tag)) >> 1
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry::new(self.data.height, self.data.width, self.data.block_size).expect("validated geometry")
    }

    pub fn dims(&self) -> CsiDims {
        CsiDims {
            k: self.data.k,
            n_tx: self.data.n_tx,
            n_rx: self.data.n_rx,
        }
    }

    pub fn csi_model(&self) -> CsiModel {
        CsiModel {
            dims: self.dims(),
            ..self.simulate.csi
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            dims: self.dims(),
            m: self.preprocess.m,
            g: self.forgery.g,
            height: self.data.height,
            width: self.data.width,
        }
    }

    pub fn min_offset(&self) -> usize {
        self.forgery.min_offset.unwrap_or(self.forgery.g)
    }

    pub fn split_spec(&self, selector: Selector) -> SplitSpec {
        SplitSpec {
            train_frac: self.split.train_frac,
            seed: self.seed_for(SeedStream::Split),
            selector,
            mode: self.split.mode,
        }
    }

    /// Carves the validation part out of the training side. Block mode uses
    /// half-length blocks on an independent phase.
    pub fn val_spec(&self, selector: Selector) -> Option<SplitSpec> {
        if self.split.val_frac == 0.0 {
            return None;
        }
        let mode = match self.split.mode {
            SplitMode::Blocks { block_len } => SplitMode::Blocks {
                block_len: (block_len / 2).max(1),
            },
            m => m,
        };
        Some(SplitSpec {
            train_frac: 1.0 - self.split.val_frac,
            seed: self.seed_for(SeedStream::Val),
            selector,
            mode,
        })
    }

    pub fn train_config(&self, module: ModuleKind) -> TrainConfig {
        let base = TrainConfig {
            seed: self.seed_for(SeedStream::Train(module)),
            ..TrainConfig::reported_default(module)
        };
        let o = match module {
            ModuleKind::Detector => &self.train.detector,
            ModuleKind::Segmentor => &self.train.segmentor,
            ModuleKind::Forgery => &self.train.forgery,
        };
        o.apply(base)
    }

    /// Fingerprint seed for a module's checkpoints.
    pub fn checkpoint_seed(&self, module: ModuleKind) -> u64 {
        self.train_config(module).seed
    }

    pub fn clip_params(&self, side: ClipSide) -> ClipParams {
        ClipParams {
            g: self.forgery.g,
            forgery_frac: self.forgery.forgery_frac,
            min_offset: self.min_offset(),
            seed: self.seed_for(match side {
                ClipSide::Train => SeedStream::Clips,
                ClipSide::Val => SeedStream::ValClips,
                ClipSide::Test => SeedStream::TestClips,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.preprocess.m, c.forgery.g, c.min_offset()), (5, 7, 7));
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let r = c.resolved();
        assert_eq!(RunConfig::from_toml(&r.to_toml()).unwrap(), r);
        assert_eq!(r.train_config(ModuleKind::Detector), c.train_config(ModuleKind::Detector));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let e = RunConfig::from_toml("[preprocess]\nmm = 3\n").unwrap_err().to_string();
        assert!(e.contains("mm"), "{e}");
        let e = RunConfig::from_toml("[preprocess]\nm = 0\n").unwrap_err().to_string();
        assert!(e.contains("preprocess.m"), "{e}");
        let e = RunConfig::from_toml("[forgery]\ng = 7\nmin_offset = 3\n").unwrap_err().to_string();
        assert!(e.contains("forgery.min_offset"), "{e}");
        let e = RunConfig::from_toml("[data]\nheight = 40\n").unwrap_err().to_string();
        assert!(e.contains("data"), "{e}");
    }

    #[test]
    fn benchmark_preset() {
        let b = RunConfig::benchmark();
        assert_eq!((b.data.height, b.data.width, b.data.block_size), (48, 64, 8));
        assert_eq!(b.simulate.persons.len() * b.simulate.frames, 1200);
        assert_eq!((b.preprocess.m, b.forgery.g), (5, 7));
    }

    #[test]
    fn partial_sections_keep_module_defaults() {
        let c = RunConfig::from_toml("[train.detector]\nepochs = 2\n").unwrap();
        let d = c.train_config(ModuleKind::Detector);
        assert_eq!((d.epochs, d.lr0, d.optimizer), (2, 1e-6, OptimizerKind::Rmsprop));
    }
}
