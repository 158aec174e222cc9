use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{SceneModel, Shape};
use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::kinematics::{joint_frames, JointConfig, KinematicChain, KinematicsError};

/// Swept sphere around the segment `p0..p1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkCapsule {
    pub p0: Vec3,
    pub p1: Vec3,
    pub radius: f64,
}

/// One capsule per link in the chain's base frame: base to the first joint,
/// joint to joint, and the last joint to the tool point.
pub fn link_capsules(chain: &KinematicChain, q: &JointConfig) -> Result<Vec<LinkCapsule>, KinematicsError> {
    capsules_at(chain, &Pose::identity(), q)
}

/// [`link_capsules`] placed at `base` in the world.
pub fn capsules_at(chain: &KinematicChain, base: &Pose, q: &JointConfig) -> Result<Vec<LinkCapsule>, KinematicsError> {
    let (frames, tool) = joint_frames(chain, q)?;
    let points: Vec<Vec3> = std::iter::once(Vec3::zeros())
        .chain(frames.iter().map(|f| f.origin))
        .chain(std::iter::once(tool.position))
        .map(|p| base.transform_point(&p))
        .collect();
    Ok(points
        .windows(2)
        .zip(&chain.link_radii)
        .map(|(w, &radius)| LinkCapsule {
            p0: w[0],
            p1: w[1],
            radius,
        })
        .collect())
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (a + ab * t - p).norm()
}

fn box_sdf(p: &Vec3, center: &Vec3, half: &Vec3, orientation: &UnitQuat) -> f64 {
    let local = orientation.inverse() * (p - center);
    let d = local.abs() - half;
    let outside = d.map(|c| c.max(0.0)).norm();
    outside + d.max().min(0.0)
}

fn cylinder_sdf(p: &Vec3, base: &Vec3, axis: &Vec3, radius: f64, height: f64) -> f64 {
    let rel = p - base;
    let h = rel.dot(axis);
    let radial = (rel - axis * h).norm() - radius;
    let along = (h - height / 2.0).abs() - height / 2.0;
    let outside = radial.max(0.0).hypot(along.max(0.0));
    outside + radial.max(along).min(0.0)
}

/// Exact signed distance from `p` to the primitive (negative inside).
pub(crate) fn point_signed_distance(p: &Vec3, shape: &Shape) -> f64 {
    match shape {
        Shape::Sphere { center, radius } => (p - center).norm() - radius,
        Shape::Box {
            center,
            half_extents,
            orientation,
        } => box_sdf(p, center, half_extents, orientation),
        Shape::Cylinder {
            base_center,
            axis,
            radius,
            height,
        } => cylinder_sdf(p, base_center, axis, *radius, *height),
    }
}

/// Minimum of a convex function on [0, 1] by golden-section search.
fn minimize_convex(f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    f(0.0).min(f(1.0)).min(f1).min(f2)
}

/// Smallest signed distance from any point of the segment `p0..p1` to the
/// primitive (negative when the segment enters it).
///
/// The signed distance of a convex body is a convex function of position, so
/// along a segment it has a single minimum. Spheres are solved in closed form.
pub fn segment_signed_distance(p0: &Vec3, p1: &Vec3, shape: &Shape) -> f64 {
    if let Shape::Sphere { center, radius } = shape {
        return point_segment_distance(center, p0, p1) - radius;
    }
    if p0 == p1 {
        return point_signed_distance(p0, shape);
    }
    minimize_convex(|t| point_signed_distance(&p0.lerp(p1, t), shape))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub link: usize,
    pub obstacle: String,
    pub penetration: f64,
    pub time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub colliding: bool,
    pub contacts: Vec<Contact>,
}

impl CollisionReport {
    pub fn from_contacts(contacts: Vec<Contact>) -> Self {
        Self {
            colliding: !contacts.is_empty(),
            contacts,
        }
    }

    pub fn extend(&mut self, other: CollisionReport) {
        self.contacts.extend(other.contacts);
        self.colliding = !self.contacts.is_empty();
    }

    /// Same contacts stamped with replay time `time`.
    pub fn at_time(mut self, time: f64) -> Self {
        for c in &mut self.contacts {
            c.time = time;
        }
        self
    }
}

/// Capsule/obstacle overlaps, skipping obstacles named in `ignore`. The table
/// plane is not an obstacle. Contact times are 0; see [`CollisionReport::at_time`].
pub fn check_collision(capsules: &[LinkCapsule], scene: &SceneModel, ignore: &BTreeSet<String>) -> CollisionReport {
    let mut contacts = Vec::new();
    for (link, cap) in capsules.iter().enumerate() {
        for obstacle in scene.obstacles.iter().filter(|o| !ignore.contains(&o.label)) {
            let d = segment_signed_distance(&cap.p0, &cap.p1, &obstacle.shape);
            if d < cap.radius {
                contacts.push(Contact {
                    link,
                    obstacle: obstacle.label.clone(),
                    penetration: cap.radius - d,
                    time: 0.0,
                });
            }
        }
    }
    CollisionReport::from_contacts(contacts)
}
