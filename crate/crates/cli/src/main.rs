mod rundir;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use securemask::config::RunConfig;
use securemask::dataset::{load_recording, RecordingManifest};
use securemask::evaluation::experiment::{
    run_experiment, score_detector, score_forgery, score_segmentor, train_back, write_experiment,
    Benchmark, Splits,
};
use securemask::evaluation::{ablate, ablation_csv, ablation_table, bench, confusion, AblationParam};
use securemask::models::{ModuleKind, SegmentorNet, Checkpoint};
use securemask::pipeline::{clip_label, load_stream, run_stream, write_verdict_log, Models, Thresholds, Verdict};
use securemask::synth::{forge, ForgeMode, ForgeSpec};
use securemask::training::{save_outputs, train_detector, train_segmentor};
use securemask::Error;

use rundir::RunDir;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    /// Invalid configuration or a missing input.
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self { code, msg: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "securemask", version, about = "Cross-modal (WiFi CSI / video motion) forgery detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every artifact of this invocation.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides the configuration's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the epoch count of every module.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic recordings described by the config.
    Simulate {
        /// Output directory; defaults to `<run-dir>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Denoise CSI, derive pseudo-masks and report per-recording statistics.
    Preprocess {
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
    },
    /// Train one module, or all of them in sequence.
    Train {
        #[arg(long)]
        module: ModuleArg,
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Segmentor checkpoint for `--module forgery`; defaults to the
        /// run directory's `checkpoints/segmentor_best.ckpt`.
        #[arg(long)]
        segmentor: Option<PathBuf>,
    },
    /// Run the gated pipeline over one recording.
    Infer {
        #[arg(long)]
        recording: PathBuf,
        /// Directory holding `<module>_best.ckpt`; defaults to the run
        /// directory's checkpoints.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Exit with status 3 if any clip is flagged.
        #[arg(long)]
        fail_on_alert: bool,
    },
    /// Score a verdict log against a recording's forgery annotation.
    Eval {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        recording: PathBuf,
    },
    /// Measure per-module throughput.
    Bench {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Retrain per value of m or g and tabulate forgery accuracy.
    Ablate {
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `3,5,7`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
    },
    /// Write a copy of a recording with a forged visual side.
    Forge {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "shift")]
        mode: String,
        #[arg(long)]
        offset: usize,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        end: Option<usize>,
        #[arg(long)]
        donor: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModuleArg {
    One(ModuleKind),
    All,
}

impl std::str::FromStr for ModuleArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(ModuleArg::All);
        }
        s.parse::<ModuleKind>().map(ModuleArg::One).map_err(|e| e.to_string())
    }
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::input(format!("config file {} not found", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(e) = c.epochs {
        cfg.train.detector.epochs = Some(e);
        cfg.train.segmentor.epochs = Some(e);
        cfg.train.forgery.epochs = Some(e);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Recording directories: each path is either a recording (it holds
/// `manifest.json`) or a directory of recordings.
fn resolve_recordings(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(CliError::input(format!("input {} not found", p.display())));
        }
        if RecordingManifest::path(p).is_file() {
            out.push(p.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| RecordingManifest::path(d).is_file())
            .collect();
        if found.is_empty() {
            return Err(CliError::input(format!("{} contains no recordings", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input(format!("input {} not found", path.display())))
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn load_models(cfg: &RunConfig, dir: &Path) -> CliResult<Models> {
    require(dir)?;
    Ok(Models::load(dir, cfg.shape(), |m| cfg.checkpoint_seed(m))?)
}

fn thresholds(cfg: &RunConfig) -> Thresholds {
    Thresholds {
        gate: cfg.pipeline.gate_threshold,
        verdict: cfg.pipeline.verdict_threshold,
    }
}

#[derive(Serialize)]
struct PreprocessSummary {
    recording: String,
    frames: usize,
    samples: usize,
    moving: usize,
    dropped_frames: usize,
    outliers_replaced: usize,
}

fn run(cli: Cli, argv: &[String]) -> CliResult<u8> {
    let cfg = load_config(&cli.common)?;
    let run = RunDir::create(&cli.common.run_dir)?;
    match cli.cmd {
        Cmd::Simulate { out } => {
            let out = out.unwrap_or_else(|| run.root.join("data"));
            let dirs = securemask::evaluation::experiment::simulate_benchmark(&cfg, &out)?;
            run.record(&cfg, argv, &[])?;
            for d in &dirs {
                println!("{}", d.display());
            }
        }
        Cmd::Preprocess { data } => {
            let dirs = resolve_recordings(&data)?;
            run.record(&cfg, argv, &dirs)?;
            let p = &cfg.preprocess;
            let mut summary = Vec::new();
            for (i, d) in dirs.iter().enumerate() {
                let rec = load_recording(d, i, p.m, p.eta, p.hampel, &p.mask)?;
                let name = d.file_name().map_or(format!("rec{i}"), |n| n.to_string_lossy().into_owned());
                let mask_dir = run.root.join("preprocess").join(&name).join("masks");
                std::fs::create_dir_all(&mask_dir).map_err(|e| CliError::runtime(format!("{}: {e}", mask_dir.display())))?;
                for m in &rec.masks {
                    securemask::mask::write_pgm(&mask_dir.join(format!("{:06}.pgm", m.frame_index)), m)?;
                }
                summary.push(PreprocessSummary {
                    recording: d.display().to_string(),
                    frames: rec.manifest.frame_count,
                    samples: rec.samples.len(),
                    moving: rec.samples.iter().filter(|s| s.motion_label).count(),
                    dropped_frames: rec.dropped_frames.len(),
                    outliers_replaced: rec.outliers_replaced,
                });
                println!(
                    "{name}: {} frames, {} moving, {} outliers replaced",
                    rec.samples.len(),
                    summary.last().map_or(0, |s| s.moving),
                    rec.outliers_replaced
                );
            }
            run.write("metrics/preprocess.json", &to_json(&summary))?;
        }
        Cmd::Train { module, data, segmentor } => {
            let dirs = resolve_recordings(&data)?;
            let mut inputs = dirs.clone();
            let seg_ckpt = segmentor.unwrap_or_else(|| run.checkpoints().join("segmentor_best.ckpt"));
            if module == ModuleArg::One(ModuleKind::Forgery) {
                require(&seg_ckpt)?;
                inputs.push(seg_ckpt.clone());
            }
            run.record(&cfg, argv, &inputs)?;
            let bench = Benchmark::load(&cfg, &dirs)?;
            train(&cfg, &run, module, &bench, &seg_ckpt)?;
        }
        Cmd::Infer {
            recording,
            checkpoints,
            fail_on_alert,
        } => {
            require(&recording)?;
            let ck = checkpoints.unwrap_or_else(|| run.checkpoints());
            run.record(&cfg, argv, &[recording.clone(), ck.clone()])?;
            let models = load_models(&cfg, &ck)?;
            let p = &cfg.preprocess;
            let (manifest, frames) = load_stream(&recording, p.m, p.hampel, &p.mask)?;
            let report = run_stream(frames, &models, thresholds(&cfg), cfg.pipeline.queue_depth, manifest.forgery.as_ref())?;
            write_verdict_log(&run.logs().join("verdicts.jsonl"), &report.verdicts)?;
            #[derive(Serialize)]
            struct StreamSummary {
                counters: securemask::pipeline::Counters,
                fps: std::collections::BTreeMap<String, f64>,
                metrics: Option<securemask::evaluation::MetricsReport>,
                alert_rate_in_forged_interval: Option<f64>,
            }
            let s = StreamSummary {
                counters: report.counters,
                fps: report.fps(),
                metrics: report.metrics.clone(),
                alert_rate_in_forged_interval: manifest.forgery.as_ref().and_then(|a| report.alert_rate_in(a, models.g())),
            };
            run.write("metrics/stream.json", &to_json(&s))?;
            let c = report.counters;
            println!(
                "{} frames, {} clips judged, {} alerts (detector {}, segmentor {}, forgery {} calls)",
                c.frames, c.clips, c.alerts, c.detector_calls, c.segmentor_calls, c.forgery_calls
            );
            if let Some(m) = &report.metrics {
                print!("{m}");
            }
            if fail_on_alert && c.alerts > 0 {
                eprintln!("alert: {} clip(s) flagged as forged", c.alerts);
                return Ok(3);
            }
        }
        Cmd::Eval { verdicts, recording } => {
            require(&verdicts)?;
            require(&recording)?;
            run.record(&cfg, argv, &[verdicts.clone(), RecordingManifest::path(&recording)])?;
            let manifest = RecordingManifest::load(&recording)?;
            let text = std::fs::read_to_string(&verdicts).map_err(|e| CliError::input(format!("{}: {e}", verdicts.display())))?;
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: Verdict = serde_json::from_str(line)
                    .map_err(|e| CliError::input(format!("{} line {}: {e}", verdicts.display(), i + 1)))?;
                if let Some(l) = clip_label(v.clip_start, cfg.forgery.g, manifest.forgery.as_ref()) {
                    preds.push(v.forged);
                    labels.push(l);
                }
            }
            let report = confusion(&preds, &labels)?;
            print!("{report}");
            run.write("metrics/eval.json", &to_json(&report))?;
        }
        Cmd::Bench {
            recording,
            checkpoints,
            warmup,
            iters,
        } => {
            require(&recording)?;
            let ck = checkpoints.unwrap_or_else(|| run.checkpoints());
            run.record(&cfg, argv, &[recording.clone(), ck.clone()])?;
            let models = load_models(&cfg, &ck)?;
            let p = &cfg.preprocess;
            let (_, frames) = load_stream(&recording, p.m, p.hampel, &p.mask)?;
            let r = bench(
                &models,
                &frames,
                warmup.unwrap_or(cfg.bench.warmup),
                iters.unwrap_or(cfg.bench.iters),
            )?;
            println!("{}", r.hardware);
            for (m, fps) in &r.fps {
                println!("  {m:<10} {fps:>10.1} fps");
            }
            run.write("metrics/bench.json", &to_json(&r))?;
        }
        Cmd::Ablate { param, values, data } => {
            let param: AblationParam = param.parse()?;
            let dirs = resolve_recordings(&data)?;
            run.record(&cfg, argv, &dirs)?;
            let rows = ablate(param, &values, &cfg, &dirs, None)?;
            print!("{}", ablation_table(&rows));
            run.write(format!("metrics/ablation_{param}.csv"), &ablation_csv(&rows))?;
            run.write(format!("metrics/ablation_{param}.json"), &to_json(&rows))?;
        }
        Cmd::Forge {
            recording,
            out,
            mode,
            offset,
            start,
            end,
            donor,
        } => {
            require(&recording)?;
            if let Some(d) = &donor {
                require(d)?;
            }
            let mode: ForgeMode = mode.parse()?;
            let interval = match (start, end) {
                (None, None) => None,
                (s, e) => {
                    let n = RecordingManifest::load(&recording)?.frame_count;
                    Some((s.unwrap_or(offset), e.unwrap_or(n)))
                }
            };
            let mut inputs = vec![recording.clone()];
            inputs.extend(donor.clone());
            run.record(&cfg, argv, &inputs)?;
            let spec = ForgeSpec {
                mode,
                offset_frames: offset,
                interval,
                donor,
            };
            let m = forge(&recording, &out, &spec, cfg.forgery.g)?;
            if let Some(a) = m.forgery {
                println!("forged frames [{}, {}) of {}", a.start, a.end, out.display());
            }
        }
    }
    Ok(0)
}

fn train(cfg: &RunConfig, run: &RunDir, module: ModuleArg, bench: &Benchmark, seg_ckpt: &Path) -> CliResult {
    let shape = cfg.shape();
    let seed = |m| cfg.checkpoint_seed(m);
    if module == ModuleArg::All {
        let exp = run_experiment(cfg, bench)?;
        write_experiment(cfg, &run.root, &exp)?;
        println!("{}", exp.metrics.to_json().trim_end());
        return Ok(());
    }
    let splits = Splits::new(cfg, bench)?;
    let ModuleArg::One(kind) = module else { unreachable!() };
    let (best_epoch, json) = match kind {
        ModuleKind::Detector => {
            let t = train_detector(
                &cfg.train_config(kind),
                cfg.models.detector,
                shape,
                &splits.detector_train,
                &splits.detector_val,
            )?;
            save_outputs(
                &run.root,
                kind,
                t.best.to_checkpoint(t.best_epoch, seed(kind)),
                t.last.to_checkpoint(t.log.len().saturating_sub(1), seed(kind)),
                &t.log,
            )?;
            let m = if splits.detector_test.is_empty() {
                None
            } else {
                Some(score_detector(&t.best, &splits.detector_test, cfg.pipeline.gate_threshold)?)
            };
            (t.best_epoch, to_json(&m))
        }
        ModuleKind::Segmentor => {
            let t = train_segmentor(
                &cfg.train_config(kind),
                cfg.models.segmentor,
                cfg.models.segmentor_loss,
                shape,
                &splits.segmentor_train,
                &splits.segmentor_val,
            )?;
            save_outputs(
                &run.root,
                kind,
                t.best.to_checkpoint(t.best_epoch, seed(kind)),
                t.last.to_checkpoint(t.log.len().saturating_sub(1), seed(kind)),
                &t.log,
            )?;
            let m = score_segmentor(cfg, &t.best, bench, &splits.segmentor_test)?;
            (t.best_epoch, to_json(&m))
        }
        ModuleKind::Forgery => {
            let ck = Checkpoint::load(seg_ckpt)?;
            let seg = SegmentorNet::from_checkpoint(&ck, shape, seed(ModuleKind::Segmentor))?;
            let back = train_back(cfg, &seg, &splits)?;
            let t = &back.forgery;
            save_outputs(
                &run.root,
                kind,
                t.best.to_checkpoint(t.best_epoch, seed(kind)),
                t.last.to_checkpoint(t.log.len().saturating_sub(1), seed(kind)),
                &t.log,
            )?;
            let m = if back.test_clips.is_empty() {
                None
            } else {
                Some(score_forgery(&t.best, &back.test_clips, cfg.pipeline.verdict_threshold)?)
            };
            (t.best_epoch, to_json(&m))
        }
    };
    run.write(format!("metrics/{kind}.json"), &json)?;
    println!("{kind}: best epoch {best_epoch}, checkpoints in {}", run.checkpoints().display());
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, &argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
