//! Keyframe bundles: intensity, colour, semi-dense depth and variance, class
//! scores, pose and intrinsics.

mod manifest;
mod mask;
pub mod pfm;
mod raster;
mod scores;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::{KeyframeEntry, SequenceManifest};
pub use mask::{apply_mask, semi_dense_mask, DEFAULT_GRADIENT_THRESHOLD};
pub use raster::{Mask, Raster};
pub use scores::{ScoreMap, ScoreTensor};

use crate::geometry::{Intrinsics, Sim3Pose};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: invalid manifest: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("keyframe {index}: missing file {path}")]
    MissingFile { index: usize, path: PathBuf },
    #[error("{path}: corrupt raster: {reason}")]
    CorruptRaster { path: PathBuf, reason: String },
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("negative score {value} at pixel ({x}, {y})")]
    NegativeScore { x: usize, y: usize, value: f32 },
    #[error("non-finite score at pixel ({x}, {y})")]
    NonFiniteScore { x: usize, y: usize },
    #[error("invalid depth variance {value} at pixel ({x}, {y})")]
    InvalidVariance { x: usize, y: usize, value: f32 },
    #[error("score map has {found} classes, expected {expected}")]
    ClassCount { expected: usize, found: usize },
    #[error("keyframe {index}: {source}")]
    InKeyframe {
        index: usize,
        #[source]
        source: Box<KeyframeError>,
    },
}

impl KeyframeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KeyframeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn in_keyframe(self, index: usize) -> Self {
        match self {
            e @ (KeyframeError::InKeyframe { .. } | KeyframeError::MissingFile { .. }) => e,
            e => KeyframeError::InKeyframe { index, source: Box::new(e) },
        }
    }
}

/// One keyframe. Depth values `<= 0` mark pixels outside the semi-dense
/// domain. Immutable after construction; all invariants are checked there.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    index: usize,
    intensity: Raster<f32>,
    color: Raster<f32>,
    depth: Raster<f32>,
    variance: Raster<f32>,
    scores: ScoreMap,
    pose: Sim3Pose,
    intrinsics: Intrinsics,
}

/// Unvalidated keyframe contents.
#[derive(Debug, Clone)]
pub struct KeyframeParts {
    pub index: usize,
    pub intensity: Raster<f32>,
    pub color: Raster<f32>,
    pub depth: Raster<f32>,
    pub variance: Raster<f32>,
    pub scores: ScoreTensor,
    pub pose: Sim3Pose,
    pub intrinsics: Intrinsics,
}

fn check_dims(what: &str, expected: (usize, usize), found: (usize, usize)) -> Result<(), KeyframeError> {
    if expected == found {
        Ok(())
    } else {
        Err(KeyframeError::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        })
    }
}

impl Keyframe {
    pub fn new(parts: KeyframeParts) -> Result<Self, KeyframeError> {
        let KeyframeParts {
            index,
            intensity,
            color,
            depth,
            variance,
            scores,
            pose,
            intrinsics,
        } = parts;
        let dims = (intrinsics.width, intrinsics.height);
        check_dims("intensity", dims, intensity.dims())?;
        check_dims("color", dims, color.dims())?;
        check_dims("depth", dims, depth.dims())?;
        check_dims("variance", dims, variance.dims())?;
        check_dims("scores", dims, (scores.width, scores.height))?;
        if intensity.channels() != 1 || depth.channels() != 1 || variance.channels() != 1 {
            return Err(KeyframeError::CorruptRaster {
                path: PathBuf::new(),
                reason: "intensity, depth and variance must be single-channel".into(),
            });
        }
        if color.channels() != 3 {
            return Err(KeyframeError::CorruptRaster {
                path: PathBuf::new(),
                reason: "color must have three channels".into(),
            });
        }
        if scores.classes < 2 {
            return Err(KeyframeError::ClassCount {
                expected: 2,
                found: scores.classes,
            });
        }
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                if depth.get(x, y) > 0.0 {
                    let v = variance.get(x, y);
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(KeyframeError::InvalidVariance { x, y, value: v });
                    }
                }
            }
        }
        let scores = ScoreMap::from_tensor(&scores)?;
        Ok(Self {
            index,
            intensity,
            color,
            depth,
            variance,
            scores,
            pose,
            intrinsics,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn intensity(&self) -> &Raster<f32> {
        &self.intensity
    }

    pub fn color(&self) -> &Raster<f32> {
        &self.color
    }

    pub fn depth(&self) -> &Raster<f32> {
        &self.depth
    }

    pub fn variance(&self) -> &Raster<f32> {
        &self.variance
    }

    pub fn scores(&self) -> &ScoreMap {
        &self.scores
    }

    pub fn pose(&self) -> &Sim3Pose {
        &self.pose
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn num_classes(&self) -> usize {
        self.scores.classes()
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn has_depth(&self, x: usize, y: usize) -> bool {
        self.depth.get(x, y) > 0.0
    }

    /// Semi-dense pixels in row-major order.
    pub fn semi_dense_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width();
        (0..w * self.height()).map(move |i| (i % w, i / w)).filter(|&(x, y)| self.has_depth(x, y))
    }

    pub fn semi_dense_count(&self) -> usize {
        self.depth.data().iter().filter(|&&d| d > 0.0).count()
    }

    pub(crate) fn with_depth(&self, depth: Raster<f32>) -> Self {
        Self { depth, ..self.clone() }
    }
}

pub fn read_color(path: &Path) -> Result<Raster<f32>, KeyframeError> {
    let img = image::open(path).map_err(|e| KeyframeError::CorruptRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Raster::from_vec(w as usize, h as usize, 3, data).expect("rgb buffer has 3 channels"))
}

/// Writes a colour raster as 8-bit PNG (or PPM, by extension).
pub fn write_color(path: &Path, color: &Raster<f32>) -> Result<(), KeyframeError> {
    let (w, h) = color.dims();
    let bytes: Vec<u8> = color.data().iter().map(|&v| quantize_unit(v)).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("rgb buffer size");
    img.save(path).map_err(|e| KeyframeError::CorruptRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub(crate) fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads and validates the files referenced by one manifest entry.
pub fn load_keyframe_bundle(entry: &KeyframeEntry, intrinsics: &Intrinsics) -> Result<Keyframe, KeyframeError> {
    let load = || -> Result<Keyframe, KeyframeError> {
        let parts = KeyframeParts {
            index: entry.index,
            intensity: pfm::read_pfm(&entry.intensity)?,
            color: read_color(&entry.color)?,
            depth: pfm::read_pfm(&entry.depth)?,
            variance: pfm::read_pfm(&entry.variance)?,
            scores: ScoreTensor::read(&entry.scores)?,
            pose: entry.pose,
            intrinsics: *intrinsics,
        };
        Keyframe::new(parts)
    };
    load().map_err(|e| e.in_keyframe(entry.index))
}

/// Writes `kf` as a bundle under `dir` with file names prefixed by `stem`.
pub fn write_keyframe_bundle(kf: &Keyframe, raw_scores: &ScoreTensor, dir: &Path, stem: &str) -> Result<KeyframeEntry, KeyframeError> {
    let entry = KeyframeEntry {
        index: kf.index(),
        pose: *kf.pose(),
        intensity: dir.join(format!("{stem}_intensity.pfm")),
        color: dir.join(format!("{stem}_color.png")),
        depth: dir.join(format!("{stem}_depth.pfm")),
        variance: dir.join(format!("{stem}_variance.pfm")),
        scores: dir.join(format!("{stem}_scores.bin")),
    };
    pfm::write_pfm(&entry.intensity, kf.intensity())?;
    write_color(&entry.color, kf.color())?;
    pfm::write_pfm(&entry.depth, kf.depth())?;
    pfm::write_pfm(&entry.variance, kf.variance())?;
    raw_scores.write(&entry.scores)?;
    Ok(entry)
}
