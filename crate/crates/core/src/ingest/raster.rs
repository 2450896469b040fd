//! PGM (P5) masks and PFM float rasters.
//!
//! PFM scanlines are stored bottom-to-top; the in-memory rasters here are
//! always row-major top-to-bottom.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{write_atomic, IngestError};

/// Binary instance mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(width * height, bits.len(), "mask size");
        Self { width, height, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn read_token<R: BufRead>(r: &mut R) -> std::io::Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

fn parse_dim(path: &Path, tok: &str, what: &str) -> Result<usize, IngestError> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(IngestError::format(path, format!("bad {what} '{tok}'"))),
    }
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>, IngestError> {
    std::fs::File::open(path).map(BufReader::new).map_err(|e| IngestError::io(path, e))
}

/// Reads only the PGM header; returns `(width, height)`.
pub fn read_pgm_dims(path: &Path) -> Result<(usize, usize), IngestError> {
    let mut r = open(path)?;
    let (w, h, _) = pgm_header(path, &mut r)?;
    Ok((w, h))
}

fn pgm_header<R: BufRead>(path: &Path, r: &mut R) -> Result<(usize, usize, u32), IngestError> {
    let io = |e| IngestError::io(path, e);
    let magic = read_token(r).map_err(io)?;
    if magic != "P5" {
        return Err(IngestError::format(path, format!("expected P5 magic, found '{magic}'")));
    }
    let w = parse_dim(path, &read_token(r).map_err(io)?, "width")?;
    let h = parse_dim(path, &read_token(r).map_err(io)?, "height")?;
    let maxval: u32 = read_token(r)
        .map_err(io)?
        .parse()
        .map_err(|_| IngestError::format(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(IngestError::format(path, format!("maxval {maxval} out of range")));
    }
    Ok((w, h, maxval))
}

/// Loads a P5 mask; samples above the midpoint (127 for maxval 255) are set.
pub fn load_mask(path: &Path) -> Result<InstanceMask, IngestError> {
    let mut r = open(path)?;
    let (width, height, maxval) = pgm_header(path, &mut r)?;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let mut data = vec![0u8; width * height * bytes_per];
    r.read_exact(&mut data)
        .map_err(|_| IngestError::format(path, "truncated pixel data"))?;
    let half = maxval / 2;
    let bits = if bytes_per == 1 {
        data.iter().map(|&b| b as u32 > half).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32 > half).collect()
    };
    Ok(InstanceMask { width, height, bits })
}

pub fn save_mask(mask: &InstanceMask, path: &Path) -> Result<(), IngestError> {
    let mut buf = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    buf.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    write_atomic(path, &buf)
}

/// A PFM raster with 1 (`Pf`) or 3 (`PF`) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
}

struct PfmHeader {
    width: usize,
    height: usize,
    channels: usize,
    little_endian: bool,
}

fn pfm_header<R: BufRead>(path: &Path, r: &mut R) -> Result<PfmHeader, IngestError> {
    let io = |e| IngestError::io(path, e);
    let channels = match read_token(r).map_err(io)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(IngestError::format(path, format!("expected Pf/PF magic, found '{other}'"))),
    };
    let width = parse_dim(path, &read_token(r).map_err(io)?, "width")?;
    let height = parse_dim(path, &read_token(r).map_err(io)?, "height")?;
    let scale: f32 = read_token(r)
        .map_err(io)?
        .parse()
        .map_err(|_| IngestError::format(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IngestError::format(path, "bad scale"));
    }
    Ok(PfmHeader { width, height, channels, little_endian: scale < 0.0 })
}

/// Reads only the PFM header; returns `(width, height, channels)`.
pub fn read_pfm_dims(path: &Path) -> Result<(usize, usize, usize), IngestError> {
    let mut r = open(path)?;
    let h = pfm_header(path, &mut r)?;
    Ok((h.width, h.height, h.channels))
}

pub fn load_pfm(path: &Path) -> Result<PfmImage, IngestError> {
    let mut r = open(path)?;
    let h = pfm_header(path, &mut r)?;
    let row_len = h.width * h.channels;
    let mut raw = vec![0u8; row_len * h.height * 4];
    r.read_exact(&mut raw)
        .map_err(|_| IngestError::format(path, "truncated raster data"))?;
    let mut data = vec![0f32; row_len * h.height];
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let row = h.height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[row * row_len + i] = if h.little_endian { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
        }
    }
    Ok(PfmImage { width: h.width, height: h.height, channels: h.channels, data })
}

/// Writes a little-endian PFM.
pub fn save_pfm(img: &PfmImage, path: &Path) -> Result<(), IngestError> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row_len = img.width * img.channels;
    for row in (0..img.height).rev() {
        for v in &img.data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}
