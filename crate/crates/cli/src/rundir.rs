//! Run directory: `config.resolved`, `manifest.json`, `checkpoints/`,
//! `logs/`, `metrics/`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use securemask::config::RunConfig;

use crate::CliError;

#[derive(Debug, Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a [String],
    seed: u64,
    config_sha256: String,
    inputs: Vec<InputHash>,
}

pub struct RunDir {
    pub root: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Every regular file below `path`, sorted, or `path` itself.
fn files_under(path: &Path) -> Vec<PathBuf> {
    if path.is_file() {
        return vec![path.to_path_buf()];
    }
    let mut out = Vec::new();
    if let Ok(rd) = fs::read_dir(path) {
        let mut entries: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            out.extend(files_under(&p));
        }
    }
    out
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        for sub in ["checkpoints", "logs", "metrics"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| CliError::runtime(format!("{}: {e}", d.display())))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(d) = path.parent() {
            fs::create_dir_all(d).map_err(|e| CliError::runtime(format!("{}: {e}", d.display())))?;
        }
        fs::write(&path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes the resolved config and a manifest hashing every input file.
    pub fn record(&self, cfg: &RunConfig, command: &[String], inputs: &[PathBuf]) -> Result<(), CliError> {
        let resolved = cfg.resolved().to_toml();
        self.write("config.resolved", &resolved)?;
        let mut hashes = Vec::new();
        for input in inputs {
            for f in files_under(input) {
                hashes.push(InputHash {
                    path: f.display().to_string(),
                    sha256: sha256_file(&f)?,
                });
            }
        }
        let manifest = RunManifest {
            tool: "securemask",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_sha256: hex::encode(Sha256::digest(resolved.as_bytes())),
            inputs: hashes,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        self.write("manifest.json", &text)?;
        Ok(())
    }
}
