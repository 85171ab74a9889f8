use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::GeometryError;

/// Scaled rigid transform `x -> s * R * x + t`.
///
/// Keyframe poses map camera-frame points into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

const QUAT_NORM_TOL: f64 = 1e-9;

impl Sim3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Builds a pose from an already-unit quaternion `(w, x, y, z)`.
    ///
    /// The quaternion must have unit norm within 1e-9; it is not silently
    /// renormalized so that bad manifests are caught.
    pub fn new(quat_wxyz: [f64; 4], translation: Vector3<f64>, scale: f64) -> Result<Self, GeometryError> {
        let [w, x, y, z] = quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(GeometryError::InvalidPose(format!("quaternion norm {norm} is not 1")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidPose(format!("scale {scale} must be positive")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("translation is not finite".into()));
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(q),
            translation,
            scale,
        })
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self, GeometryError> {
        let q = rotation.quaternion();
        Self::new([q.w, q.i, q.j, q.k], translation, scale)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_scale(scale: f64) -> Result<Self, GeometryError> {
        Self::new([1.0, 0.0, 0.0, 0.0], Vector3::zeros(), scale)
    }

    /// Parses the 8-number manifest layout `(qw, qx, qy, qz, tx, ty, tz, s)`.
    pub fn from_array(v: [f64; 8]) -> Result<Self, GeometryError> {
        Self::new([v[0], v[1], v[2], v[3]], Vector3::new(v[4], v[5], v[6]), v[7])
    }

    pub fn to_array(&self) -> [f64; 8] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z, self.scale]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Sim3Pose) -> Sim3Pose {
        let rotation = renormalize(self.rotation * other.rotation);
        let translation = self.rotation * other.translation * self.scale + self.translation;
        Sim3Pose {
            rotation,
            translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Sim3Pose {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        let translation = -(rotation * self.translation) * scale;
        Sim3Pose {
            rotation,
            translation,
            scale,
        }
    }

    /// Camera center in world coordinates, for a camera-to-world pose.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Maximum absolute component difference against `other`, treating
    /// `q` and `-q` as the same rotation.
    pub fn max_abs_diff(&self, other: &Sim3Pose) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        let sign = if self.rotation.quaternion().dot(other.rotation.quaternion()) < 0.0 {
            -1.0
        } else {
            1.0
        };
        (0..8)
            .map(|k| {
                let bk = if k < 4 { sign * b[k] } else { b[k] };
                (a[k] - bk).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Default for Sim3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

// Keeps long composition chains on the unit sphere.
fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}
