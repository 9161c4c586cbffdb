//! Portable Float Map I/O.
//!
//! Written files are always the color variant:
//!
//! | offset | content                                            |
//! |--------|----------------------------------------------------|
//! | 0      | `PF\n`                                             |
//! | 3      | `<width> <height>\n` (ASCII decimal)               |
//! | ...    | `-1.0\n` (negative scale = little-endian samples)  |
//! | ...    | `width * height * 3` IEEE-754 f32 LE, RGB interleaved, bottom row first |
//!
//! The reader also accepts the grayscale `Pf` variant (replicated to RGB) and
//! big-endian data (positive scale).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::HdrImage;

pub fn encode_pfm(img: &HdrImage<f32>) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        let row = &img.data[y * img.width * 3..(y + 1) * img.width * 3];
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<HdrImage<f32>> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        let pos_ref = pos;
        let mut pos = *pos_ref;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPfm("unexpected end of header".into()));
        }
        let t = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::MalformedPfm("non-ASCII header".into()))?
            .to_string();
        *pos_ref = pos;
        Ok(t)
    };

    let magic = token(&mut pos)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::MalformedPfm(format!("unknown magic {other:?}"))),
    };
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::MalformedPfm("bad width".into()))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::MalformedPfm("bad height".into()))?;
    let scale: f32 = token(&mut pos)?
        .parse()
        .map_err(|_| Error::MalformedPfm("bad scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedPfm("scale must be non-zero".into()));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedPfm("missing header terminator".into()));
    }
    let data_start = pos + 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::MalformedPfm("dimensions overflow".into()))?;
    let payload = &bytes[data_start..];
    if payload.len() != n * 4 {
        return Err(Error::MalformedPfm(format!(
            "expected {} data bytes for {width}x{height}x{channels}, found {}",
            n * 4,
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut img = HdrImage::<f32>::new(width, height);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let px = k / channels;
        let (file_row, x) = (px / width, px % width);
        let y = height - 1 - file_row;
        let base = (y * width + x) * 3;
        if channels == 3 {
            img.data[base + k % 3] = v;
        } else {
            img.data[base..base + 3].fill(v);
        }
    }
    Ok(img)
}

pub fn write_pfm(img: &HdrImage<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<HdrImage<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}
