use std::collections::HashMap;

use rayon::prelude::*;

use super::{FusionError, SemanticMap};
use crate::geometry::project_with_inverse;
use crate::keyframe::Keyframe;

/// Reprojection gate for matching keyframe pixels to existing map points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AssociationGate {
    /// Maximum distance in pixels between a point's projection and the pixel center.
    pub pixel_radius: f64,
    /// Allowed depth residual in units of the pixel's depth standard deviation.
    pub depth_sigma_mult: f64,
}

impl Default for AssociationGate {
    fn default() -> Self {
        Self {
            pixel_radius: 1.0,
            depth_sigma_mult: 2.0,
        }
    }
}

impl AssociationGate {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.pixel_radius > 0.0 && self.depth_sigma_mult > 0.0 && self.pixel_radius.is_finite() && self.depth_sigma_mult.is_finite() {
            Ok(())
        } else {
            Err(FusionError::InvalidGate(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correspondence {
    Existing(usize),
    New,
}

/// One entry per semi-dense pixel of the keyframe, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelAssociation {
    pub x: usize,
    pub y: usize,
    pub target: Correspondence,
}

/// Matches every semi-dense pixel of `kf` to at most one existing map point.
///
/// A candidate must project within `pixel_radius` of the pixel center and
/// have a projected depth within `depth_sigma_mult * sqrt(variance)` of the
/// pixel's depth. The closest projection wins, then the smallest depth
/// residual, then the lowest point index. A point can be claimed by only one
/// pixel per keyframe; pixels are visited in row-major order.
pub fn associate(map: &SemanticMap, kf: &Keyframe, gate: &AssociationGate) -> Result<Vec<PixelAssociation>, FusionError> {
    if map.num_classes() != kf.num_classes() {
        return Err(FusionError::ClassCountMismatch {
            expected: map.num_classes(),
            found: kf.num_classes(),
        });
    }
    gate.validate()?;
    let k = kf.intrinsics();
    let world_to_cam = kf.pose().inverse();
    let projected: Vec<Option<(f64, f64, f64)>> = map
        .points()
        .par_iter()
        .map(|p| project_with_inverse(&p.position, k, &world_to_cam).in_front())
        .collect();

    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, proj) in projected.iter().enumerate() {
        if let Some((u, v, _)) = proj {
            let key = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
            buckets.entry(key).or_default().push(i);
        }
    }

    let reach = gate.pixel_radius.ceil() as i64;
    let r2 = gate.pixel_radius * gate.pixel_radius;
    let mut claimed = vec![false; map.len()];
    let mut out = Vec::with_capacity(kf.semi_dense_count());
    for (x, y) in kf.semi_dense_pixels() {
        let depth = kf.depth().get(x, y) as f64;
        let tol = gate.depth_sigma_mult * (kf.variance().get(x, y) as f64).sqrt();
        let mut best: Option<(f64, f64, usize)> = None;
        for by in (y as i64 - reach)..=(y as i64 + reach) {
            for bx in (x as i64 - reach)..=(x as i64 + reach) {
                let Some(bucket) = buckets.get(&(bx, by)) else { continue };
                for &i in bucket {
                    if claimed[i] {
                        continue;
                    }
                    let (u, v, d) = projected[i].expect("bucketed points are in front");
                    let pd2 = (u - x as f64).powi(2) + (v - y as f64).powi(2);
                    let residual = (d - depth).abs();
                    if pd2 > r2 || residual > tol {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bp, br, bi)) => (pd2, residual, i) < (bp, br, bi),
                    };
                    if better {
                        best = Some((pd2, residual, i));
                    }
                }
            }
        }
        let target = match best {
            Some((_, _, i)) => {
                claimed[i] = true;
                Correspondence::Existing(i)
            }
            None => Correspondence::New,
        };
        out.push(PixelAssociation { x, y, target });
    }
    Ok(out)
}
