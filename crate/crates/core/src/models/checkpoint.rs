//! Weight container: magic, JSON header (fingerprint plus architecture),
//! then little-endian f32 weights and auxiliary buffers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Detector,
    Segmentor,
    Forgery,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 3] = [ModuleKind::Detector, ModuleKind::Segmentor, ModuleKind::Forgery];

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Detector => "detector",
            ModuleKind::Segmentor => "segmentor",
            ModuleKind::Forgery => "forgery",
        }
    }
}

impl std::fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown module {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fingerprint {
    pub module: ModuleKind,
    pub m: usize,
    pub g: usize,
    pub k: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub height: usize,
    pub width: usize,
    pub epoch: usize,
    pub seed: u64,
}

impl Fingerprint {
    /// Everything except the epoch must agree.
    pub fn check_compatible(&self, expected: &Fingerprint) -> Result<()> {
        let a = Fingerprint { epoch: 0, ..*self };
        let b = Fingerprint { epoch: 0, ..*expected };
        if a != b {
            return Err(Error::Checkpoint(format!(
                "fingerprint mismatch: checkpoint has {}, configuration expects {}",
                serde_json::to_string(&a).unwrap_or_default(),
                serde_json::to_string(&b).unwrap_or_default()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    fingerprint: Fingerprint,
    arch: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: Fingerprint,
    pub arch: serde_json::Value,
    pub weights: Vec<f32>,
    pub aux: Vec<f32>,
}

fn put_floats(out: &mut Vec<u8>, v: &[f32]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(self.pos as u64, format!("checkpoint truncated, wanted {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::parse(self.pos as u64, "length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            fingerprint: self.fingerprint,
            arch: self.arch.clone(),
        })
        .expect("checkpoint header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * (self.weights.len() + self.aux.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        put_floats(&mut out, &self.weights);
        put_floats(&mut out, &self.aux);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::parse(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::parse(12, format!("bad checkpoint header: {e}")))?;
        let weights = r.floats()?;
        let aux = r.floats()?;
        if r.pos != buf.len() {
            return Err(Error::parse(r.pos as u64, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            arch: header.arch,
            weights,
            aux,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }

    /// Loads a checkpoint and rejects it unless its fingerprint matches.
    pub fn load_expecting(path: &Path, expected: &Fingerprint) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.fingerprint.check_compatible(expected)?;
        Ok(ck)
    }
}
