//! Serial-chain kinematics: forward kinematics, the geometric Jacobian,
//! damped-least-squares inverse kinematics and workspace queries.
//!
//! Every function here is a pure function of its arguments.

mod chain;
mod ik;

pub use chain::{AngleRange, Joint, JointConfig, JointLimits, KinematicChain};
pub use ik::{pose_error, solve_ik_dls, IkFailure, IkParams, IkSolution, Residual};

use nalgebra::{Matrix6xX, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{renormalize, Pose, Vec3};

/// 6xN geometric Jacobian: rows are linear velocity (xyz) then angular
/// velocity (xyz), columns are joints.
pub type Jacobian = Matrix6xX<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint config has {actual} entries, chain has {expected} joints")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("joint {joint} angle {angle} outside its limits")]
    LimitViolation { joint: usize, angle: f64 },
    #[error("invalid chain definition: {0}")]
    InvalidChain(String),
    #[error("invalid IK parameters: {0}")]
    InvalidParams(String),
    #[error(
        "IK did not converge after {} iterations (position residual {:.6} m, orientation residual {:.6} rad)",
        .0.iters, .0.residual.position, .0.residual.orientation
    )]
    NotConverged(Box<IkFailure>),
}

/// World-frame origin and rotation axis of one joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointFrame {
    pub origin: Vec3,
    pub axis: Vec3,
}

/// Joint frames for `q` together with the tool pose, all in the chain's base frame.
pub fn joint_frames(
    chain: &KinematicChain,
    q: &JointConfig,
) -> Result<(Vec<JointFrame>, Pose), KinematicsError> {
    chain.check_dims(q)?;
    let mut frames = Vec::with_capacity(chain.dof());
    let mut pos = Vec3::zeros();
    let mut rot = UnitQuaternion::identity();
    for (joint, &angle) in chain.joints.iter().zip(q.iter()) {
        pos += rot * joint.origin.position;
        rot *= joint.origin.orientation;
        frames.push(JointFrame {
            origin: pos,
            axis: rot * joint.axis.into_inner(),
        });
        rot *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
    }
    pos += rot * chain.tool.position;
    rot *= chain.tool.orientation;
    Ok((frames, Pose::new(pos, renormalize(&rot))))
}

/// Tool pose in the chain's base frame.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<Pose, KinematicsError> {
    joint_frames(chain, q).map(|(_, tool)| tool)
}

/// Column `i` is `(axis_i x (p_ee - p_i), axis_i)`.
pub fn jacobian(chain: &KinematicChain, q: &JointConfig) -> Result<Jacobian, KinematicsError> {
    let (frames, tool) = joint_frames(chain, q)?;
    Ok(jacobian_from_frames(&frames, &tool.position))
}

pub(crate) fn jacobian_from_frames(frames: &[JointFrame], ee: &Vec3) -> Jacobian {
    let mut jac = Jacobian::zeros(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let lin = f.axis.cross(&(ee - f.origin));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&f.axis);
    }
    jac
}

/// Closed spherical-shell test around the base position.
pub fn is_reachable(chain: &KinematicChain, base_pose: &Pose, point: &Vec3) -> bool {
    let r = (point - base_pose.position).norm();
    r >= chain.reach_min && r <= chain.reach_max
}

/// Project raw angles into the joint limits.
pub fn clamp_to_limits(chain: &KinematicChain, raw: &[f64]) -> Result<JointConfig, KinematicsError> {
    if raw.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            actual: raw.len(),
        });
    }
    Ok(JointConfig(
        chain
            .limits
            .iter()
            .zip(raw)
            .map(|(r, &a)| r.clamp(a))
            .collect(),
    ))
}
