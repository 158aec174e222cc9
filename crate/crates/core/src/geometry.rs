//! Rigid-body primitives shared by every module.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A point or direction in meters.
pub type Vec3 = Vector3<f64>;

/// Unit quaternion; serialized as `[x, y, z, w]`.
pub type UnitQuat = UnitQuaternion<f64>;

/// Position plus orientation of a frame relative to its parent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuat::identity())
    }

    pub fn from_position(position: Vec3) -> Self {
        Self::new(position, UnitQuat::identity())
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, renormalize(&iso.rotation))
    }

    /// `self * other`: `other` expressed in `self`'s frame, lifted to the parent.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            renormalize(&(self.orientation * other.orientation)),
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.orientation.coords.iter().all(|c| c.is_finite())
    }
}

/// Re-project onto the unit sphere; the result's norm is within 1e-15 of 1.
pub fn renormalize(q: &UnitQuat) -> UnitQuat {
    UnitQuat::new_normalize(q.into_inner())
}

/// Build a unit quaternion from `[x, y, z, w]`, rejecting values whose norm
/// is further than `tol` from one.
pub fn quat_from_xyzw(xyzw: [f64; 4], tol: f64) -> Option<UnitQuat> {
    let [x, y, z, w] = xyzw;
    if !xyzw.iter().all(|c| c.is_finite()) {
        return None;
    }
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if (n - 1.0).abs() > tol {
        return None;
    }
    Some(UnitQuat::new_normalize(q))
}

pub fn quat_to_xyzw(q: &UnitQuat) -> [f64; 4] {
    let c = q.coords;
    [c.x, c.y, c.z, c.w]
}

/// Rotation vector (axis * angle) of `q`, taking the shortest arc (w >= 0).
pub fn rotation_vector(q: &UnitQuat) -> Vec3 {
    let mut v = q.imag();
    let mut w = q.scalar();
    if w < 0.0 {
        v = -v;
        w = -w;
    }
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Angle of the relative rotation between two orientations, in `[0, pi]`.
pub fn rotation_angle_between(a: &UnitQuat, b: &UnitQuat) -> f64 {
    let rel = a.inverse() * b;
    let s = rel.imag().norm();
    2.0 * s.atan2(rel.scalar().abs())
}

/// Shortest-arc rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> UnitQuat {
    UnitQuat::rotation_between(from, to).unwrap_or_else(|| {
        // antiparallel: half turn about any axis perpendicular to `from`
        let perp = any_perpendicular(from);
        UnitQuat::from_axis_angle(&nalgebra::Unit::new_normalize(perp), std::f64::consts::PI)
    })
}

/// Some unit vector orthogonal to `v`.
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let trial = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&trial).normalize()
}

/// Spherical interpolation with the shortest-arc convention.
pub fn slerp(a: &UnitQuat, b: &UnitQuat, t: f64) -> UnitQuat {
    let b = if a.coords.dot(&b.coords) < 0.0 {
        UnitQuat::new_unchecked(-b.into_inner())
    } else {
        *b
    };
    renormalize(&a.try_slerp(&b, t, 1e-12).unwrap_or(b))
}
