//! On-disk CSI streams.
//!
//! Binary layout (little-endian): magic `CSI1`, `u32 K`, `u32 N_tx`,
//! `u32 N_rx`, `u64 record_count`, then per record a `u64 timestamp_us`
//! followed by `K*N_tx*N_rx` pairs of `f32 (re, im)` in subcarrier-major,
//! then tx, then rx order. A JSON-lines mirror carries one record per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use super::{CsiDims, CsiRecord};
use crate::error::{Error, Result};

pub const CSI_MAGIC: &[u8; 4] = b"CSI1";
const HEADER_LEN: usize = 4 + 4 * 3 + 8;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    timestamp_us: u64,
    k: usize,
    n_tx: usize,
    n_rx: usize,
    values: Vec<[f32; 2]>,
}

/// Reads a CSI stream in either the binary or the JSON-lines format.
///
/// An empty file yields an empty stream. When `expected` is given every
/// record must carry exactly those dimensions.
pub fn parse_csi_stream(path: &Path, expected: Option<CsiDims>) -> Result<Vec<CsiRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = parse_csi_bytes(&bytes)?;
    if let (Some(want), Some(first)) = (expected, records.first()) {
        if first.dims != want {
            return Err(Error::Dimension(format!(
                "stream carries {:?}, expected {:?}",
                first.dims, want
            )));
        }
    }
    check_order(&records)?;
    Ok(records)
}

pub fn parse_csi_bytes(bytes: &[u8]) -> Result<Vec<CsiRecord>> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.starts_with(CSI_MAGIC) {
        parse_binary(bytes)
    } else {
        parse_jsonl(bytes)
    }
}

fn check_order(records: &[CsiRecord]) -> Result<()> {
    for (i, pair) in records.windows(2).enumerate() {
        if pair[1].timestamp_us <= pair[0].timestamp_us {
            return Err(Error::Ordering(format!(
                "record {} timestamp {} does not follow {}",
                i + 1,
                pair[1].timestamp_us,
                pair[0].timestamp_us
            )));
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<CsiRecord>> {
    let mut cur = Cursor { bytes, pos: 4 };
    let k = cur.u32("K")? as usize;
    let n_tx = cur.u32("N_tx")? as usize;
    let n_rx = cur.u32("N_rx")? as usize;
    let count = cur.u64("record_count")?;
    let dims = CsiDims::new(k, n_tx, n_rx).map_err(|e| Error::parse(4, e.to_string()))?;
    let per = dims.len();
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for r in 0..count {
        let start = cur.pos as u64;
        let timestamp_us = cur.u64("timestamp")?;
        let mut values = Vec::with_capacity(per);
        for _ in 0..per {
            let re = cur.f32("real part")
                .map_err(|_| Error::parse(start, format!("record {r} is truncated")))?;
            let im = cur.f32("imaginary part")
                .map_err(|_| Error::parse(start, format!("record {r} is truncated")))?;
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::parse(start, format!("record {r} holds a non-finite value")));
            }
            values.push(Complex32::new(re, im));
        }
        records.push(CsiRecord {
            timestamp_us,
            dims,
            values,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(
            cur.pos as u64,
            format!("{} trailing bytes after {count} records", bytes.len() - cur.pos),
        ));
    }
    Ok(records)
}

fn parse_jsonl(bytes: &[u8]) -> Result<Vec<CsiRecord>> {
    let mut records: Vec<CsiRecord> = Vec::new();
    let mut offset = 0u64;
    for line in bytes.split(|&b| b == b'\n') {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let rec: JsonRecord = serde_json::from_slice(line)
            .map_err(|e| Error::parse(line_offset, format!("bad JSON record: {e}")))?;
        let dims = CsiDims::new(rec.k, rec.n_tx, rec.n_rx)
            .map_err(|e| Error::parse(line_offset, e.to_string()))?;
        if rec.values.len() != dims.len() {
            return Err(Error::parse(
                line_offset,
                format!(
                    "record declares {}x{}x{} but carries {} entries",
                    rec.k,
                    rec.n_tx,
                    rec.n_rx,
                    rec.values.len()
                ),
            ));
        }
        if let Some(prev) = records.last() {
            if prev.dims != dims {
                return Err(Error::Dimension(format!(
                    "record at byte {line_offset} has {dims:?}, stream has {:?}",
                    prev.dims
                )));
            }
        }
        records.push(CsiRecord {
            timestamp_us: rec.timestamp_us,
            dims,
            values: rec.values.iter().map(|&[re, im]| Complex32::new(re, im)).collect(),
        });
    }
    Ok(records)
}

fn check_uniform(dims: CsiDims, records: &[CsiRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.dims != dims || r.values.len() != dims.len() {
            return Err(Error::Dimension(format!("record {i} does not match {dims:?}")));
        }
    }
    Ok(())
}

pub fn encode_csi_binary(dims: CsiDims, records: &[CsiRecord]) -> Result<Vec<u8>> {
    check_uniform(dims, records)?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (8 + dims.len() * 8));
    out.extend_from_slice(CSI_MAGIC);
    out.extend_from_slice(&(dims.k as u32).to_le_bytes());
    out.extend_from_slice(&(dims.n_tx as u32).to_le_bytes());
    out.extend_from_slice(&(dims.n_rx as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.timestamp_us.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_csi_binary(path: &Path, dims: CsiDims, records: &[CsiRecord]) -> Result<()> {
    let bytes = encode_csi_binary(dims, records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_csi_jsonl(path: &Path, records: &[CsiRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let rec = JsonRecord {
            timestamp_us: r.timestamp_us,
            k: r.dims.k,
            n_tx: r.dims.n_tx,
            n_rx: r.dims.n_rx,
            values: r.values.iter().map(|v| [v.re, v.im]).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
