//! Semantic map construction and recursive Bayesian label fusion.

mod associate;
mod distribution;
mod map;

pub use associate::{associate, AssociationGate, Correspondence, PixelAssociation};
pub use distribution::{argmax, LabelDistribution, DEFAULT_FLOOR};
pub use map::{IntegrationStats, MapPoint, Origin, SemanticMap};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("distribution has no positive entry")]
    AllZero,
    #[error("distribution entries must be finite and non-negative")]
    InvalidEntry,
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("distribution length {found} does not match {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("map has {expected} classes but keyframe has {found}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("invalid association gate {0:?}")]
    InvalidGate(AssociationGate),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
