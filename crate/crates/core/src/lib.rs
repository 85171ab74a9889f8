//! Semi-dense semantic mapping.
//!
//! Keyframes carrying a semi-dense depth map, its variance and a per-pixel
//! class score map are lifted into a world-frame point cloud. Each point
//! carries a label distribution that is updated by a recursive Bayesian
//! product whenever a later keyframe re-observes it. The finished map is
//! regularized with a fully connected CRF (Gaussian edge potentials over
//! position, normal, colour and score features) solved by mean-field
//! inference, and evaluated by rendering labels back into the keyframes.
//!
//! Module map:
//! - [`geometry`]: Sim(3) poses, pinhole projection, PCA normals
//! - [`keyframe`]: keyframe bundles, manifests, raster formats, semi-dense masking
//! - [`fusion`]: label distributions, association, map integration
//! - [`crf`]: dense CRF potentials, mean-field inference, brute-force oracle
//! - [`eval`]: backprojection, confusion matrices, synthetic scenes
//! - [`pipeline`]: batch driver, config, PLY/intermediate files

pub mod crf;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod keyframe;
pub mod pipeline;

pub use crf::{CrfParams, MarginalField};
pub use fusion::{AssociationGate, LabelDistribution, MapPoint, SemanticMap};
pub use geometry::{Intrinsics, Normal, Sim3Pose};
pub use keyframe::{Keyframe, SequenceManifest};
