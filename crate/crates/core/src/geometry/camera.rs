use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Sim3Pose};

/// Pinhole intrinsics. Pixel `(c, r)` has its center at `(u, v) = (c, r)`,
/// so the image covers `u ∈ [-0.5, width - 0.5)`, `v ∈ [-0.5, height - 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    /// Integer pixel that a continuous coordinate falls into, if any.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if self.contains(u, v) {
            let c = (u + 0.5).floor() as usize;
            let r = (v + 0.5).floor() as usize;
            Some((c.min(self.width - 1), r.min(self.height - 1)))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible {
        u: f64,
        v: f64,
        depth: f64,
    },
    /// In front of the camera but outside the image; coordinates are kept
    /// for callers that search a neighbourhood around the image border.
    OutOfFrame {
        u: f64,
        v: f64,
        depth: f64,
    },
    BehindCamera,
}

impl Projection {
    pub fn visible(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Projection::Visible { u, v, depth } => Some((u, v, depth)),
            _ => None,
        }
    }

    /// Pixel coordinates and depth whenever the point is in front of the camera.
    pub fn in_front(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Projection::Visible { u, v, depth } | Projection::OutOfFrame { u, v, depth } => Some((u, v, depth)),
            Projection::BehindCamera => None,
        }
    }
}

/// Back-projects a pixel with z-depth `depth` (camera-frame z, not ray
/// length) and maps it into the world with the camera-to-world `pose`.
pub fn unproject(u: f64, v: f64, depth: f64, k: &Intrinsics, pose: &Sim3Pose) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v });
    }
    let cam = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    Ok(pose.transform_point(&cam))
}

/// Projects a world point through the inverse of the camera-to-world `pose`.
pub fn project(world: &Vector3<f64>, k: &Intrinsics, pose: &Sim3Pose) -> Projection {
    project_with_inverse(world, k, &pose.inverse())
}

/// Same as [`project`] with a precomputed world-to-camera transform.
pub fn project_with_inverse(world: &Vector3<f64>, k: &Intrinsics, world_to_cam: &Sim3Pose) -> Projection {
    let cam = world_to_cam.transform_point(world);
    if !(cam.z > 0.0) {
        return Projection::BehindCamera;
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    if k.contains(u, v) {
        Projection::Visible { u, v, depth: cam.z }
    } else {
        Projection::OutOfFrame { u, v, depth: cam.z }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vga() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray() {
        let k = vga();
        let p = unproject(k.cx, k.cy, 1.0, &k, &Sim3Pose::identity()).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
        match project(&p, &k, &Sim3Pose::identity()) {
            Projection::Visible { u, v, depth } => {
                assert_eq!((u, v, depth), (320.0, 240.0, 1.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hand_evaluated_pinhole() {
        // widened so that u = 820 is inside the image
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 1280, 480).unwrap();
        let p = unproject(820.0, 240.0, 2.0, &k, &Sim3Pose::identity()).unwrap();
        assert!((p - Vector3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_and_out_of_frame() {
        let k = vga();
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, -1.0), &k, &Sim3Pose::identity()),
            Projection::BehindCamera
        );
        assert_eq!(project(&Vector3::new(0.0, 0.0, 0.0), &k, &Sim3Pose::identity()), Projection::BehindCamera);
        let p = project(&Vector3::new(10.0, 0.0, 1.0), &k, &Sim3Pose::identity());
        assert!(matches!(p, Projection::OutOfFrame { .. }));
    }

    #[test]
    fn unproject_errors() {
        let k = vga();
        let id = Sim3Pose::identity();
        assert!(matches!(unproject(1.0, 1.0, 0.0, &k, &id), Err(GeometryError::NonPositiveDepth(_))));
        assert!(matches!(unproject(1.0, 1.0, -2.0, &k, &id), Err(GeometryError::NonPositiveDepth(_))));
        assert!(matches!(unproject(640.0, 1.0, 1.0, &k, &id), Err(GeometryError::PixelOutOfBounds { .. })));
        assert!(matches!(unproject(1.0, -0.6, 1.0, &k, &id), Err(GeometryError::PixelOutOfBounds { .. })));
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 1.0, -0.1, 4, 4).is_err());
    }

    #[test]
    fn random_round_trips_under_pose() {
        let k = vga();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let axis = nalgebra::Unit::new_normalize(Vector3::new(0.2, 1.0, -0.4));
        let pose = Sim3Pose::from_parts(UnitQuaternion::from_axis_angle(&axis, 0.8), Vector3::new(0.5, -1.0, 2.0), 1.7).unwrap();
        for _ in 0..100 {
            let u = rng.random_range(-0.5..639.49);
            let v = rng.random_range(-0.5..479.49);
            let d = rng.random_range(0.1..20.0);
            let w = unproject(u, v, d, &k, &pose).unwrap();
            let (u2, v2, d2) = project(&w, &k, &pose).visible().unwrap();
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
            // depth is reported in the camera frame, before the pose's scale
            assert!((d - d2).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_stretches_distances() {
        let k = vga();
        let a = Sim3Pose::identity();
        let b = Sim3Pose::from_scale(2.5).unwrap();
        let pa = unproject(10.0, 20.0, 1.0, &k, &a).unwrap();
        let qa = unproject(300.0, 100.0, 3.0, &k, &a).unwrap();
        let pb = unproject(10.0, 20.0, 1.0, &k, &b).unwrap();
        let qb = unproject(300.0, 100.0, 3.0, &k, &b).unwrap();
        assert!(((pb - qb).norm() - 2.5 * (pa - qa).norm()).abs() < 1e-12);
    }

    #[test]
    fn pixel_rounding() {
        let k = vga();
        assert_eq!(k.pixel_of(0.49, 0.0), Some((0, 0)));
        assert_eq!(k.pixel_of(0.5, 0.0), Some((1, 0)));
        assert_eq!(k.pixel_of(639.4, 479.4), Some((639, 479)));
        assert_eq!(k.pixel_of(639.5, 0.0), None);
    }
}
