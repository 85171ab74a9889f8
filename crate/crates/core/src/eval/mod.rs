//! Scoring a labelled map against per-keyframe ground truth, and the
//! synthetic scenes that supply that ground truth in tests.
//!
//! Map labels are rendered into a keyframe with a nearest-depth z-buffer,
//! compared pixelwise against a ground-truth label image, and summarized as
//! per-class recall, their mean over classes present, and overall pixel
//! accuracy. Label images use [`VOID`] for unlabelled pixels; a pixel void in
//! either image is not counted.

mod backproject;
mod metrics;
mod synth;

pub use backproject::{backproject, backproject_labels, depth_domain, read_label_image, restrict_to_mask, write_label_image, Backprojection};
pub use metrics::{class_average, confusion_matrix, metrics, metrics_csv, write_metrics_csv, ConfusionMatrix, Metrics};
pub use synth::{look_at, synth_scene, Primitive, Quad, SceneFiles, SceneSpec, SynthFrame, SynthScene, VARIANCE_FLOOR};

use std::path::PathBuf;

use thiserror::Error;

use crate::keyframe::{KeyframeError, Raster};

/// Per-pixel class indices.
pub type LabelImage = Raster<u8>;

/// Label value for pixels without a class.
pub const VOID: u8 = 255;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label image is {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrices have {found} and {expected} classes")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("no primitive is visible from any pose")]
    DegenerateSpec,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
}
