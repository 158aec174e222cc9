//! Synthetic tabletop world: primitive obstacles, a pinhole camera,
//! raycast RGB-D rendering and capsule collision queries.

mod collision;
mod file;
mod render;

pub use collision::{
    capsules_at, check_collision, link_capsules, segment_signed_distance,
    CollisionReport, Contact, LinkCapsule,
};
pub use crate::session::audit_replay;
pub use render::{
    intersect_ray, render_depth, render_depth_with, render_rgb, render_rgb_with, shade, DepthImage,
    Hit, Ray, RgbImage, AMBIENT, BACKGROUND, LIGHT_DIR,
};

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_angle_between, Pose, UnitQuat, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene definition: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
        orientation: UnitQuat,
    },
    Cylinder {
        base_center: Vec3,
        axis: Unit<Vec3>,
        radius: f64,
        height: f64,
    },
}

impl Shape {
    fn validate(&self) -> Result<(), String> {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        match self {
            Shape::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err("sphere needs a finite center and radius > 0".into());
                }
            }
            Shape::Box {
                center,
                half_extents,
                ..
            } => {
                if !finite(center) || !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                    return Err("box needs a finite center and half extents > 0".into());
                }
            }
            Shape::Cylinder {
                base_center,
                radius,
                height,
                ..
            } => {
                if !finite(base_center)
                    || !(*radius > 0.0 && radius.is_finite())
                    || !(*height > 0.0 && height.is_finite())
                {
                    return Err("cylinder needs radius > 0 and height > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Same shape moved rigidly by `offset`.
    pub fn translated(&self, offset: &Vec3) -> Shape {
        let mut s = self.clone();
        match &mut s {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } => *center += offset,
            Shape::Cylinder { base_center, .. } => *base_center += offset,
        }
        s
    }
}

/// A labelled obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub label: String,
    pub shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TablePlane {
    pub point: Vec3,
    pub normal: Unit<Vec3>,
}

impl Default for TablePlane {
    fn default() -> Self {
        Self {
            point: Vec3::zeros(),
            normal: Vec3::z_axis(),
        }
    }
}

impl TablePlane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal.into_inner() * self.signed_distance(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err("intrinsics need fx, fy > 0 and 0 <= cx < width, 0 <= cy < height".into())
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Camera pose in the world. The camera frame looks down +z with +x to the
/// right of the image and +y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl CameraExtrinsics {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Camera at `eye` looking at `target`, image "up" roughly along `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        Self::new(eye, UnitQuat::from_rotation_matrix(&rot))
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation)
    }

    pub fn translation_to(&self, other: &CameraExtrinsics) -> f64 {
        (self.position - other.position).norm()
    }

    pub fn rotation_to(&self, other: &CameraExtrinsics) -> f64 {
        rotation_angle_between(&self.orientation, &other.orientation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub table: TablePlane,
    pub obstacles: Vec<Primitive>,
    pub camera: Camera,
}

impl SceneModel {
    /// Checks labels are unique and every shape and the camera are well formed.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.obstacles {
            if p.label.is_empty() {
                return Err(SceneError::Invalid("obstacle label must not be empty".into()));
            }
            if !seen.insert(p.label.as_str()) {
                return Err(SceneError::Invalid(format!("duplicate obstacle label {:?}", p.label)));
            }
            p.shape
                .validate()
                .map_err(|m| SceneError::Invalid(format!("{}: {m}", p.label)))?;
        }
        self.camera.intrinsics.validate().map_err(SceneError::Invalid)?;
        Ok(())
    }

    pub fn obstacle(&self, label: &str) -> Option<&Primitive> {
        self.obstacles.iter().find(|p| p.label == label)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        file::parse(text)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SceneError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Shipped tabletop scene without obstacles.
    pub fn sample_empty() -> Self {
        Self::from_toml_str(include_str!("../../data/scene_empty.toml")).expect("bundled scene is valid")
    }

    /// Shipped tabletop scene with one box on the table in front of the arm.
    pub fn sample_box() -> Self {
        Self::from_toml_str(include_str!("../../data/scene_box.toml")).expect("bundled scene is valid")
    }
}
