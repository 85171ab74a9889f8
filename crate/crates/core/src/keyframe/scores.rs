//! Score tensor files: one JSON header line `{"h":H,"w":W,"m":M,"layout":"hwm"}`
//! followed by `H*W*M` little-endian float32 values, class index fastest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KeyframeError;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    h: usize,
    w: usize,
    m: usize,
    layout: String,
}

/// Raw per-pixel class scores as exported by a segmentation network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ScoreTensor {
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_string(&Header {
            h: self.height,
            w: self.width,
            m: self.classes,
            layout: "hwm".into(),
        })
        .expect("header serializes");
        let mut out = header.into_bytes();
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| format!("bad header: {e}"))?;
        if header.layout != "hwm" {
            return Err(format!("unsupported layout {:?}", header.layout));
        }
        let n = header.h * header.w * header.m;
        let payload = &bytes[nl + 1..];
        if payload.len() != n * 4 {
            return Err(format!("expected {} payload bytes, found {}", n * 4, payload.len()));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self {
            height: header.h,
            width: header.w,
            classes: header.m,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self, KeyframeError> {
        let bytes = fs::read(path).map_err(|e| KeyframeError::io(path, e))?;
        Self::decode(&bytes).map_err(|reason| KeyframeError::CorruptRaster {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), KeyframeError> {
        fs::write(path, self.encode()).map_err(|e| KeyframeError::io(path, e))
    }
}

/// Per-pixel class distributions after ingestion normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    /// Normalizes every pixel's score vector to sum to one. Zero-sum pixels
    /// become uniform; negative or non-finite entries are rejected.
    pub fn from_tensor(t: &ScoreTensor) -> Result<Self, KeyframeError> {
        let m = t.classes;
        let mut data = Vec::with_capacity(t.data.len());
        for y in 0..t.height {
            for x in 0..t.width {
                let raw = t.at(x, y);
                let mut sum = 0.0f64;
                for &v in raw {
                    if !v.is_finite() {
                        return Err(KeyframeError::NonFiniteScore { x, y });
                    }
                    if v < 0.0 {
                        return Err(KeyframeError::NegativeScore { x, y, value: v });
                    }
                    sum += v as f64;
                }
                if sum > 0.0 {
                    data.extend(raw.iter().map(|&v| v as f64 / sum));
                } else {
                    data.extend(std::iter::repeat_n(1.0 / m as f64, m));
                }
            }
        }
        Ok(Self {
            height: t.height,
            width: t.width,
            classes: m,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn argmax_at(&self, x: usize, y: usize) -> usize {
        crate::fusion::argmax(self.at(x, y))
    }
}
