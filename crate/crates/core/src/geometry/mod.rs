//! Scaled rigid poses, pinhole projection and point-cloud normals.

mod camera;
mod normals;
mod pose;

pub use camera::{project, project_with_inverse, unproject, Intrinsics, Projection};
pub use normals::{estimate_normals, pca_normal, NeighborGrid, Normal, DEFAULT_NORMAL_K, RANK_TOLERANCE};
pub use pose::Sim3Pose;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) is outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("normal estimation needs k >= 3, got {0}")]
    InvalidNeighborCount(usize),
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}
