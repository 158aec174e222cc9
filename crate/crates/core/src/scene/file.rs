//! TOML scene definitions.
//!
//! ```toml
//! [table]
//! point = [0.0, 0.0, 0.0]
//! normal = [0.0, 0.0, 1.0]
//!
//! [camera]
//! fx = 60.0
//! fy = 60.0
//! cx = 32.0
//! cy = 24.0
//! width = 64
//! height = 48
//! position = [1.2, 0.0, 0.8]
//! orientation = [x, y, z, w]     # or: look_at = [0.4, 0.0, 0.1]
//!
//! [[obstacles]]
//! label = "crate"
//! type = "box"                   # sphere | box | cylinder
//! center = [0.45, 0.0, 0.1]
//! half_extents = [0.05, 0.05, 0.1]
//! orientation = [0.0, 0.0, 0.0, 1.0]
//! ```

use nalgebra::Unit;
use serde::Deserialize;

use super::{
    Camera, CameraExtrinsics, CameraIntrinsics, Primitive, SceneError, SceneModel, Shape, TablePlane,
};
use crate::geometry::{quat_from_xyzw, UnitQuat, Vec3};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    table: TableFile,
    camera: CameraFile,
    #[serde(default)]
    obstacles: Vec<ObstacleFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    point: [f64; 3],
    normal: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    position: [f64; 3],
    orientation: Option<[f64; 4]>,
    look_at: Option<[f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    label: String,
    #[serde(rename = "type")]
    kind: String,
    center: Option<[f64; 3]>,
    radius: Option<f64>,
    half_extents: Option<[f64; 3]>,
    orientation: Option<[f64; 4]>,
    base_center: Option<[f64; 3]>,
    axis: Option<[f64; 3]>,
    height: Option<f64>,
}

fn invalid(m: impl Into<String>) -> SceneError {
    SceneError::Invalid(m.into())
}

fn unit_vec(v: [f64; 3], what: &str) -> Result<Unit<Vec3>, SceneError> {
    let v = Vec3::from(v);
    if !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("{what} must be a unit vector")));
    }
    Ok(Unit::new_normalize(v))
}

fn quat(q: [f64; 4], what: &str) -> Result<UnitQuat, SceneError> {
    quat_from_xyzw(q, UNIT_TOLERANCE).ok_or_else(|| invalid(format!("{what} must be a unit quaternion")))
}

fn require<T>(v: Option<T>, label: &str, field: &str) -> Result<T, SceneError> {
    v.ok_or_else(|| invalid(format!("{label}: missing `{field}`")))
}

fn obstacle(o: ObstacleFile) -> Result<Primitive, SceneError> {
    let l = o.label.as_str();
    let reject_extra = |present: &[(&str, bool)]| -> Result<(), SceneError> {
        match present.iter().find(|(_, set)| *set) {
            Some((name, _)) => Err(invalid(format!("{l}: `{name}` is not valid for a {}", o.kind))),
            None => Ok(()),
        }
    };
    let shape = match o.kind.as_str() {
        "sphere" => {
            reject_extra(&[
                ("half_extents", o.half_extents.is_some()),
                ("orientation", o.orientation.is_some()),
                ("base_center", o.base_center.is_some()),
                ("axis", o.axis.is_some()),
                ("height", o.height.is_some()),
            ])?;
            Shape::Sphere {
                center: Vec3::from(require(o.center, l, "center")?),
                radius: require(o.radius, l, "radius")?,
            }
        }
        "box" => {
            reject_extra(&[
                ("radius", o.radius.is_some()),
                ("base_center", o.base_center.is_some()),
                ("axis", o.axis.is_some()),
                ("height", o.height.is_some()),
            ])?;
            Shape::Box {
                center: Vec3::from(require(o.center, l, "center")?),
                half_extents: Vec3::from(require(o.half_extents, l, "half_extents")?),
                orientation: quat(o.orientation.unwrap_or([0.0, 0.0, 0.0, 1.0]), l)?,
            }
        }
        "cylinder" => {
            reject_extra(&[
                ("center", o.center.is_some()),
                ("half_extents", o.half_extents.is_some()),
                ("orientation", o.orientation.is_some()),
            ])?;
            Shape::Cylinder {
                base_center: Vec3::from(require(o.base_center, l, "base_center")?),
                axis: unit_vec(require(o.axis, l, "axis")?, l)?,
                radius: require(o.radius, l, "radius")?,
                height: require(o.height, l, "height")?,
            }
        }
        other => return Err(invalid(format!("{l}: unknown obstacle type {other:?}"))),
    };
    Ok(Primitive {
        label: o.label,
        shape,
    })
}

pub(super) fn parse(text: &str) -> Result<SceneModel, SceneError> {
    let f: SceneFile = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    let table = TablePlane {
        point: Vec3::from(f.table.point),
        normal: unit_vec(f.table.normal, "table normal")?,
    };
    let c = f.camera;
    let position = Vec3::from(c.position);
    let extrinsics = match (c.orientation, c.look_at) {
        (Some(q), None) => CameraExtrinsics::new(position, quat(q, "camera orientation")?),
        (None, Some(t)) => {
            let target = Vec3::from(t);
            if (target - position).norm() < 1e-9 {
                return Err(invalid("camera look_at coincides with its position"));
            }
            CameraExtrinsics::look_at(position, target, table.normal.into_inner())
        }
        _ => return Err(invalid("camera needs exactly one of `orientation` or `look_at`")),
    };
    let camera = Camera {
        intrinsics: CameraIntrinsics {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        },
        extrinsics,
    };
    let obstacles = f.obstacles.into_iter().map(obstacle).collect::<Result<Vec<_>, _>>()?;
    let scene = SceneModel {
        table,
        obstacles,
        camera,
    };
    scene.validate()?;
    Ok(scene)
}
