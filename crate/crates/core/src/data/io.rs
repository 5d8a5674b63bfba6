//! Binary PPM (P6, maxval 255) for images and DMAP for depth maps.
//!
//! DMAP layout: the magic `DMP1`, little-endian `u32` height and width,
//! then `height·width` little-endian `f32` depths in row-major order. NaN
//! marks an invalid pixel.

use crate::error::{Error, Result};
use std::path::Path;

pub const DMAP_MAGIC: &[u8; 4] = b"DMP1";

fn format(kind: &'static str, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(height: usize, width: usize, rgb: &[f32]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * height * width || height == 0 || width == 0 {
        return Err(Error::shape("write_ppm", format!("{} values for {height}×{width}×3", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Parses a P6 file into `(height, width, rgb)` with values `k/255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    const KIND: &str = "PPM";
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(format(KIND, 0, "bad magic (expected \"P6\")"));
    }
    let mut pos = 2;
    let mut field = |name: &str| -> Result<usize> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format(KIND, pos, format!("file ends before {name}"))),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format(KIND, start, format!("expected a decimal {name}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(format(KIND, pos, format!("maxval {maxval} unsupported (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(format(KIND, pos, "zero image extent"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format(KIND, pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let need = 3 * width * height;
    if bytes.len() - pos < need {
        return Err(format(KIND, bytes.len(), format!("short pixel data: need {need} bytes, have {}", bytes.len() - pos)));
    }
    let rgb = bytes[pos..pos + need].iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok((height, width, rgb))
}

pub fn write_ppm(path: impl AsRef<Path>, height: usize, width: usize, rgb: &[f32]) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(height, width, rgb)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    decode_ppm(&read_file(path.as_ref())?)
}

/// Serializes a depth map; pixels with `mask == false` are stored as NaN.
pub fn encode_dmap(height: usize, width: usize, depth: &[f32], mask: &[bool]) -> Result<Vec<u8>> {
    let n = height * width;
    if depth.len() != n || mask.len() != n {
        return Err(Error::shape(
            "write_dmap",
            format!("{} depths and {} mask entries for {height}×{width}", depth.len(), mask.len()),
        ));
    }
    let dims = |v: usize| u32::try_from(v).map_err(|_| Error::shape("write_dmap", format!("extent {v} exceeds u32")));
    let mut out = Vec::with_capacity(12 + 4 * n);
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&dims(height)?.to_le_bytes());
    out.extend_from_slice(&dims(width)?.to_le_bytes());
    for (&d, &m) in depth.iter().zip(mask) {
        out.extend_from_slice(&(if m { d } else { f32::NAN }).to_le_bytes());
    }
    Ok(out)
}

/// Parses a DMAP into `(height, width, depth, mask)`; NaN becomes invalid.
pub fn decode_dmap(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>, Vec<bool>)> {
    const KIND: &str = "DMAP";
    if bytes.len() < 4 || &bytes[..4] != DMAP_MAGIC {
        return Err(format(KIND, 0, "bad magic (expected \"DMP1\")"));
    }
    if bytes.len() < 12 {
        return Err(format(KIND, bytes.len(), "file ends inside the header"));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")) as usize;
    let need = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format(KIND, 4, "extent overflow"))?;
    if bytes.len() - 12 < need {
        return Err(format(KIND, bytes.len(), format!("short read: need {need} data bytes, have {}", bytes.len() - 12)));
    }
    if bytes.len() - 12 > need {
        return Err(format(KIND, 12 + need, "trailing bytes after depth data"));
    }
    let mut depth = Vec::with_capacity(height * width);
    let mut mask = Vec::with_capacity(height * width);
    for chunk in bytes[12..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
        mask.push(!v.is_nan());
        depth.push(v);
    }
    Ok((height, width, depth, mask))
}

pub fn write_dmap(path: impl AsRef<Path>, height: usize, width: usize, depth: &[f32], mask: &[bool]) -> Result<()> {
    write_file(path.as_ref(), &encode_dmap(height, width, depth, mask)?)
}

pub fn read_dmap(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>, Vec<bool>)> {
    decode_dmap(&read_file(path.as_ref())?)
}
