//! Binary PGM (P5) reading and writing.

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// Writes `pixels` (rank-2, values in [0, 255]) as an 8-bit binary PGM.
/// Fractional values are rounded half away from zero. Atomic.
pub fn write_pgm(path: &Path, pixels: &Tensor) -> Result<()> {
    if pixels.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "pgm pixels must be rank 2, got {:?}",
            pixels.shape()
        )));
    }
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut bytes = format!("P5\n{} {}\n255\n", w, h).into_bytes();
    for &v in pixels.data() {
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::InvalidData(format!(
                "pixel {} outside [0, 255], cannot quantize",
                v
            )));
        }
        bytes.push(v.round() as u8);
    }
    write_atomic(path, &bytes)
}

/// Reads an 8-bit binary PGM into a rank-2 tensor of integral values.
/// Header comments (`#` to end of line) are tolerated; maxval must be
/// in [1, 255].
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|e| Error::Load(format!("{}: {}", path.display(), e)))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
    if magic != b"P5" {
        return Err(format!(
            "expected binary PGM magic P5, got {:?}",
            String::from_utf8_lossy(magic)
        ));
    }
    let width = next_usize(bytes, &mut pos, "width")?;
    let height = next_usize(bytes, &mut pos, "height")?;
    let maxval = next_usize(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {}x{}", width, height));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {} unsupported (must be 1..=255)", maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let n = width
        .checked_mul(height)
        .ok_or("image dimensions overflow")?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("raster truncated: need {} bytes, have {}", n, bytes.len() - pos))?;
    if bytes.len() - pos != n {
        return Err(format!(
            "trailing bytes after raster: expected {} raster bytes, file has {}",
            n,
            bytes.len() - pos
        ));
    }
    let data: Vec<f64> = raster.iter().map(|&b| f64::from(b)).collect();
    Tensor::from_vec(&[height, width], data).map_err(|e| e.to_string())
}

/// Advances past whitespace and `#` comments, then returns the token slice.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn next_usize(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    let tok = next_token(bytes, pos).ok_or_else(|| format!("missing {}", what))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad {}: {:?}", what, String::from_utf8_lossy(tok)))
}
