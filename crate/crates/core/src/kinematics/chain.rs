use std::path::Path;

use nalgebra::Unit;
use serde::{Deserialize, Serialize};

use super::KinematicsError;
use crate::geometry::{quat_from_xyzw, Pose, Vec3};

const PANDA_TOML: &str = include_str!("../../data/panda.toml");

/// Quaternions and axes read from a file may be rounded; anything further
/// than this from unit length is rejected rather than silently normalized.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min, self.max)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// Per-joint position limits in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits(pub Vec<AngleRange>);

impl JointLimits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AngleRange> {
        self.0.iter()
    }

    pub fn contains(&self, q: &JointConfig) -> bool {
        q.len() == self.len() && self.0.iter().zip(q.iter()).all(|(r, &a)| r.contains(a))
    }
}

/// One angle per joint, radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Self {
        Self(angles)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Componentwise linear interpolation.
    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        JointConfig(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Fixed transform from the previous joint frame (or base) to this joint.
    pub origin: Pose,
    pub axis: Unit<Vec3>,
}

/// Serial chain of revolute joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<Joint>,
    pub tool: Pose,
    pub limits: JointLimits,
    pub reach_min: f64,
    pub reach_max: f64,
    /// Gripper footprint (length, width) in meters.
    pub end_effector_dims: (f64, f64),
    pub home: JointConfig,
    /// One radius per link capsule plus one for the tool capsule.
    pub link_radii: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    name: String,
    reach_min: f64,
    reach_max: f64,
    end_effector_dims: [f64; 2],
    home: Vec<f64>,
    link_radii: Vec<f64>,
    tool: PoseFile,
    joints: Vec<JointFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    position: [f64; 3],
    orientation: [f64; 4],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    position: [f64; 3],
    orientation: [f64; 4],
    axis: [f64; 3],
    min: f64,
    max: f64,
}

fn invalid(msg: impl Into<String>) -> KinematicsError {
    KinematicsError::InvalidChain(msg.into())
}

fn parse_pose(p: &PoseFile, what: &str) -> Result<Pose, KinematicsError> {
    if !p.position.iter().all(|c| c.is_finite()) {
        return Err(invalid(format!("{what}: position must be finite")));
    }
    let q = quat_from_xyzw(p.orientation, UNIT_TOLERANCE)
        .ok_or_else(|| invalid(format!("{what}: orientation is not a unit quaternion")))?;
    Ok(Pose::new(Vec3::from(p.position), q))
}

impl KinematicChain {
    /// The shipped Franka-Panda-style seven joint arm.
    pub fn panda() -> Self {
        Self::from_toml_str(PANDA_TOML).expect("bundled chain definition is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: ChainFile = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        Self::from_file_model(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_file_model(file: ChainFile) -> Result<Self, KinematicsError> {
        if file.joints.is_empty() {
            return Err(invalid("chain needs at least one joint"));
        }
        let mut joints = Vec::with_capacity(file.joints.len());
        let mut ranges = Vec::with_capacity(file.joints.len());
        for j in &file.joints {
            let origin = parse_pose(
                &PoseFile {
                    position: j.position,
                    orientation: j.orientation,
                },
                &j.name,
            )?;
            let axis = Vec3::from(j.axis);
            if !axis.iter().all(|c| c.is_finite()) || (axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(invalid(format!("{}: axis must be a unit vector", j.name)));
            }
            if !(j.min.is_finite() && j.max.is_finite() && j.min < j.max) {
                return Err(invalid(format!("{}: requires min < max", j.name)));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin,
                axis: Unit::new_normalize(axis),
            });
            ranges.push(AngleRange {
                min: j.min,
                max: j.max,
            });
        }
        let limits = JointLimits(ranges);
        let tool = parse_pose(&file.tool, "tool")?;

        if !(file.reach_min.is_finite()
            && file.reach_max.is_finite()
            && 0.0 <= file.reach_min
            && file.reach_min < file.reach_max)
        {
            return Err(invalid("reach shell requires 0 <= reach_min < reach_max"));
        }
        let [len, width] = file.end_effector_dims;
        if !(len > 0.0 && width > 0.0 && len.is_finite() && width.is_finite()) {
            return Err(invalid("end_effector_dims must be positive"));
        }
        if file.link_radii.len() != joints.len() + 1 {
            return Err(invalid(format!(
                "link_radii needs {} entries (one per joint plus tool), got {}",
                joints.len() + 1,
                file.link_radii.len()
            )));
        }
        if !file.link_radii.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(invalid("link radii must be positive"));
        }
        let home = JointConfig(file.home);
        if home.len() != joints.len() {
            return Err(invalid("home config length differs from joint count"));
        }
        if !limits.contains(&home) {
            return Err(invalid("home config violates joint limits"));
        }

        Ok(Self {
            name: file.name,
            joints,
            tool,
            limits,
            reach_min: file.reach_min,
            reach_max: file.reach_max,
            end_effector_dims: (len, width),
            home,
            link_radii: file.link_radii,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Midpoint of every joint range.
    pub fn mid_config(&self) -> JointConfig {
        JointConfig(self.limits.iter().map(AngleRange::mid).collect())
    }

    pub fn check_dims(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// Dimension check plus limit check.
    pub fn validate_config(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        self.check_dims(q)?;
        for (i, (r, &a)) in self.limits.iter().zip(q.iter()).enumerate() {
            if !r.contains(a) {
                return Err(KinematicsError::LimitViolation { joint: i, angle: a });
            }
        }
        Ok(())
    }
}
