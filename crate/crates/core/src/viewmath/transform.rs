use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Meters, in whichever frame the caller is working in.
pub type Vec3 = Vector3<f64>;
pub type UnitQuat = nalgebra::UnitQuaternion<f64>;

pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;

pub fn is_unit(q: &UnitQuat) -> bool {
    let n = q.as_ref().norm();
    n.is_finite() && (n - 1.0).abs() <= QUATERNION_NORM_TOLERANCE
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_distance(a: &UnitQuat, b: &UnitQuat) -> f64 {
    a.angle_to(b)
}

/// Rotation followed by translation: `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuat::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuat::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuat) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotates a direction; translation does not apply.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            position: self.apply(&pose.position),
            orientation: self.rotation * pose.orientation,
        }
    }

    pub fn is_valid(&self) -> bool {
        is_unit(&self.rotation) && self.translation.iter().all(|c| c.is_finite())
    }

    /// Rotation angle plus translation distance between two transforms.
    pub fn error_to(&self, other: &RigidTransform) -> f64 {
        rotation_distance(&self.rotation, &other.rotation)
            + (self.translation - other.translation).norm()
    }
}

/// Position and orientation; forward is the rotated −Z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuat::identity(),
        }
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation * -Vec3::z()
    }

    pub fn is_valid(&self) -> bool {
        is_unit(&self.orientation) && self.position.iter().all(|c| c.is_finite())
    }
}

/// Yaw-only orientation turning an object's forward (−Z) toward the user.
pub fn billboard_yaw(object_pos: &Vec3, user_pos: &Vec3) -> Result<UnitQuat, GeometryError> {
    let dx = user_pos.x - object_pos.x;
    let dz = user_pos.z - object_pos.z;
    if !(dx.is_finite() && dz.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if dx.hypot(dz) <= 1e-6 {
        return Err(GeometryError::DegenerateDirection);
    }
    // A yaw θ about +Y sends (0, 0, −1) to (−sin θ, 0, −cos θ).
    let yaw = (-dx).atan2(-dz);
    Ok(UnitQuat::from_axis_angle(&Unit::new_unchecked(Vec3::y()), yaw))
}
