//! Portable float map (PFM) rasters.
//!
//! Header: `Pf` (1 channel) or `PF` (3 channels), then `width height`, then a
//! scale whose sign gives the byte order (negative = little-endian). Rows are
//! stored bottom-to-top as in the reference format; the decoded [`Raster`] is
//! top-to-bottom.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{KeyframeError, Raster};

pub fn read_pfm(path: &Path) -> Result<Raster<f32>, KeyframeError> {
    let bytes = fs::read(path).map_err(|e| KeyframeError::io(path, e))?;
    decode_pfm(&bytes).map_err(|reason| KeyframeError::CorruptRaster {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster<f32>, String> {
    let mut pos = 0usize;
    let mut token = || -> Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        let t = std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header".to_string())?;
        Ok(t.to_string())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("bad magic {other:?}")),
    };
    let width: usize = token()?.parse().map_err(|_| "bad width".to_string())?;
    let height: usize = token()?.parse().map_err(|_| "bad height".to_string())?;
    let scale: f64 = token()?.parse().map_err(|_| "bad scale".to_string())?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("scale must be non-zero".into());
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing payload".into());
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or("raster too large")?;
    let payload = &bytes[pos..];
    if payload.len() != n * 4 {
        return Err(format!("expected {} payload bytes, found {}", n * 4, payload.len()));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0f32; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let file_row = k / row_len.max(1);
        let col = k % row_len.max(1);
        data[(height - 1 - file_row) * row_len + col] = v;
    }
    Raster::from_vec(width, height, channels, data).ok_or_else(|| "bad dimensions".into())
}

pub fn encode_pfm(raster: &Raster<f32>) -> Vec<u8> {
    let magic = match raster.channels() {
        3 => "PF",
        _ => "Pf",
    };
    let (w, h) = raster.dims();
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    let row_len = w * raster.channels();
    out.reserve(raster.data().len() * 4);
    for row in (0..h).rev() {
        for v in &raster.data()[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, raster: &Raster<f32>) -> Result<(), KeyframeError> {
    assert!(matches!(raster.channels(), 1 | 3), "PFM holds 1 or 3 channels");
    let mut f = fs::File::create(path).map_err(|e| KeyframeError::io(path, e))?;
    f.write_all(&encode_pfm(raster)).map_err(|e| KeyframeError::io(path, e))
}
