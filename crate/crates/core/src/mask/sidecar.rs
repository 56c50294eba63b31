//! Motion-vector sidecar (`MVS1`) and PGM mask files.

use std::fs;
use std::path::Path;

use super::{BinaryMask, FrameGeometry, MotionField};
use crate::error::{Error, Result};

pub const MV_MAGIC: &[u8; 4] = b"MVS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub geometry: FrameGeometry,
    pub gop_length: usize,
    pub fields: Vec<MotionField>,
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(Error::parse(*pos as u64, format!("truncated while reading {what}")));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().unwrap()))
}

/// Reads a sidecar. An empty file is an empty stream with no geometry.
pub fn parse_mv_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mv_sidecar(&bytes)
}

pub fn decode_mv_sidecar(bytes: &[u8]) -> Result<Option<Sidecar>> {
    if bytes.is_empty() {
        return Ok(None);
    }
    if !bytes.starts_with(MV_MAGIC) {
        return Err(Error::parse(0, "missing MVS1 magic"));
    }
    let mut pos = 4;
    let width = u32_at(bytes, &mut pos, "frame_width")? as usize;
    let height = u32_at(bytes, &mut pos, "frame_height")? as usize;
    let block_size = u32_at(bytes, &mut pos, "block_size")? as usize;
    let gop_length = u32_at(bytes, &mut pos, "gop_length")? as usize;
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8, "frame_count")?.try_into().unwrap());
    let geometry = FrameGeometry::new(height, width, block_size)?;
    if gop_length == 0 {
        return Err(Error::parse(16, "gop_length must be positive"));
    }
    let n_blocks = geometry.blocks_h() * geometry.blocks_w();
    let mut fields = Vec::with_capacity(count.min(1 << 20) as usize);
    for f in 0..count {
        let start = pos as u64;
        let frame_index = u32_at(bytes, &mut pos, "frame_index")?;
        let gop_index = u32_at(bytes, &mut pos, "gop_index")?;
        let raw = take(bytes, &mut pos, n_blocks * 8, "motion vectors")
            .map_err(|_| Error::parse(start, format!("frame record {f} is truncated")))?;
        let vectors: Vec<[f32; 2]> = raw
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                ]
            })
            .collect();
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::parse(start, format!("frame record {f} holds a non-finite vector")));
        }
        if let Some(prev) = fields.last() {
            let prev: &MotionField = prev;
            if frame_index as usize <= prev.frame_index || (gop_index as usize) < prev.gop_index {
                return Err(Error::parse(start, format!("frame record {f} is out of order")));
            }
        }
        fields.push(MotionField::new(
            frame_index as usize,
            gop_index as usize,
            geometry,
            geometry.blocks_h(),
            geometry.blocks_w(),
            vectors,
        )?);
    }
    if pos != bytes.len() {
        return Err(Error::parse(pos as u64, "trailing bytes after last frame"));
    }
    Ok(Some(Sidecar {
        geometry,
        gop_length,
        fields,
    }))
}

pub fn encode_mv_sidecar(sidecar: &Sidecar) -> Vec<u8> {
    let g = sidecar.geometry;
    let mut out = Vec::new();
    out.extend_from_slice(MV_MAGIC);
    for v in [g.width, g.height, g.block_size, sidecar.gop_length] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(sidecar.fields.len() as u64).to_le_bytes());
    for f in &sidecar.fields {
        out.extend_from_slice(&(f.frame_index as u32).to_le_bytes());
        out.extend_from_slice(&(f.gop_index as u32).to_le_bytes());
        for [dx, dy] in &f.vectors {
            out.extend_from_slice(&dx.to_le_bytes());
            out.extend_from_slice(&dy.to_le_bytes());
        }
    }
    out
}

pub fn write_mv_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    fs::write(path, encode_mv_sidecar(sidecar)).map_err(|e| Error::io(path, e))
}

/// 8-bit binary PGM (`P5`) with values 0 and 255.
pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path, frame_index: usize) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, frame_index)
}

pub fn decode_pgm(bytes: &[u8], frame_index: usize) -> Result<BinaryMask> {
    // Header: magic, width, height, maxval, separated by single whitespace.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos as u64, "truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::parse(0, "not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(0, format!("bad PGM field {s}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 || bytes.len() != pos + width * height {
        return Err(Error::parse(pos as u64, "unexpected PGM payload"));
    }
    Ok(BinaryMask {
        height,
        width,
        frame_index,
        bits: bytes[pos..].iter().map(|&v| v >= 128).collect(),
    })
}
