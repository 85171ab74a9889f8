use nalgebra::Vector3;

use super::{associate, AssociationGate, Correspondence, FusionError, LabelDistribution};
use crate::geometry::{estimate_normals, unproject, Normal};
use crate::keyframe::Keyframe;

/// Keyframe and pixel that created a map point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Origin {
    pub keyframe: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub normal: Normal,
    /// RGB in `[0, 1]`.
    pub color: Vector3<f64>,
    pub dist: LabelDistribution,
    pub origin: Origin,
    /// Camera center of the creating keyframe; normals are oriented toward it.
    pub viewpoint: Vector3<f64>,
    pub observations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegrationStats {
    pub associated: usize,
    pub created: usize,
}

/// Append-only semi-dense point cloud with per-point label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    classes: usize,
    points: Vec<MapPoint>,
    normals_stale: bool,
}

impl SemanticMap {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            points: Vec::new(),
            normals_stale: false,
        }
    }

    /// Builds a map from decoded points; every distribution must have
    /// `classes` entries.
    pub fn from_points(classes: usize, points: Vec<MapPoint>) -> Result<Self, FusionError> {
        if let Some(p) = points.iter().find(|p| p.dist.len() != classes) {
            return Err(FusionError::ClassCountMismatch {
                expected: classes,
                found: p.dist.len(),
            });
        }
        Ok(Self {
            classes,
            points,
            normals_stale: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn normals_stale(&self) -> bool {
        self.normals_stale
    }

    /// Per-point argmax of the fused distributions.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.dist.argmax()).collect()
    }

    /// Fuses one keyframe into the map.
    ///
    /// Associated pixels multiply their score vector into the matched point's
    /// distribution; the rest create new points at the unprojected depth.
    /// Association is computed against the map as it was before this call.
    pub fn integrate_keyframe(&mut self, kf: &Keyframe, gate: &AssociationGate) -> Result<IntegrationStats, FusionError> {
        let assoc = associate(self, kf, gate)?;
        let mut stats = IntegrationStats::default();
        let viewpoint = kf.pose().center();
        for a in assoc {
            let likelihood = LabelDistribution::normalize(kf.scores().at(a.x, a.y))?;
            match a.target {
                Correspondence::Existing(i) => {
                    let p = &mut self.points[i];
                    p.dist = p.dist.fuse(&likelihood)?;
                    p.observations += 1;
                    stats.associated += 1;
                }
                Correspondence::New => {
                    let depth = kf.depth().get(a.x, a.y) as f64;
                    let position = unproject(a.x as f64, a.y as f64, depth, kf.intrinsics(), kf.pose())?;
                    let c = kf.color().pixel(a.x, a.y);
                    self.points.push(MapPoint {
                        position,
                        normal: Normal::Invalid,
                        color: Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64),
                        dist: likelihood,
                        origin: super::Origin {
                            keyframe: kf.index(),
                            x: a.x,
                            y: a.y,
                        },
                        viewpoint,
                        observations: 1,
                    });
                    stats.created += 1;
                }
            }
        }
        if stats.created > 0 {
            self.normals_stale = true;
        }
        Ok(stats)
    }

    /// Recomputes normals if points were added since the last refresh.
    pub fn ensure_normals(&mut self, k: usize) -> Result<(), FusionError> {
        if self.normals_stale {
            self.refresh_normals(k)?;
        }
        Ok(())
    }

    pub fn refresh_normals(&mut self, k: usize) -> Result<(), FusionError> {
        self.normals_stale = false;
        if self.points.is_empty() {
            return Ok(());
        }
        let positions = self.positions();
        let views: Vec<Vector3<f64>> = self.points.iter().map(|p| p.viewpoint).collect();
        let normals = estimate_normals(&positions, k, &views)?;
        for (p, n) in self.points.iter_mut().zip(normals) {
            p.normal = n;
        }
        Ok(())
    }
}
