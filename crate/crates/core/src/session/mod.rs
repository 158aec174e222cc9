//! The collection state machine.
//!
//! A [`CollectionSession`] owns everything the operator builds up during one
//! demonstration: where the robot was placed, the saved waypoints and the
//! end-effector paths between them, the gripper state and the camera pose
//! that every later capture must be consistent with.

mod follow;
mod replay;

pub use follow::{FollowSkip, FOLLOW_WAYPOINTS};
pub use replay::{audit_replay, ReplayFrame};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{any_perpendicular, rotation_between, Pose, UnitQuat, Vec3};
use crate::kinematics::{
    forward_kinematics, is_reachable, solve_ik_dls, IkFailure, IkParams, IkSolution, JointConfig, KinematicChain,
    KinematicsError,
};
use crate::scene::{CameraExtrinsics, SceneModel, TablePlane};

/// Slack on the gate comparisons so a deviation equal to the threshold
/// passes despite rounding in the angle computation.
const GATE_SLACK: f64 = 1e-12;

/// Largest joint change between consecutive samples of a bridge segment.
const BRIDGE_STEP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GripperState {
    Open,
    Closed,
}

impl GripperState {
    pub fn toggled(self) -> Self {
        match self {
            GripperState::Open => GripperState::Closed,
            GripperState::Closed => GripperState::Open,
        }
    }

    /// Operator signal color: green while open, red while closed.
    pub fn color(self) -> SignalColor {
        match self {
            GripperState::Open => SignalColor::Green,
            GripperState::Closed => SignalColor::Red,
        }
    }

    /// 1 = open, 0 = closed.
    pub fn as_bit(self) -> u8 {
        match self {
            GripperState::Open => 1,
            GripperState::Closed => 0,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            1 => Some(GripperState::Open),
            0 => Some(GripperState::Closed),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalColor {
    Green,
    Red,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub index: usize,
    /// World-frame target the arm was solved for.
    pub target_pose: Pose,
    pub gripper: GripperState,
    pub solved_q: JointConfig,
    /// Session clock in seconds.
    pub timestamp: f64,
}

/// End-effector path between two consecutive waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub from_index: usize,
    pub to_index: usize,
    /// World-frame tool positions, one per entry of `configs`.
    pub positions: Vec<Vec3>,
    /// Joint configurations visited, from the start waypoint's `solved_q`
    /// to the end waypoint's.
    pub configs: Vec<JointConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateReason {
    Ok,
    HandUnreachable,
    CameraMoved,
    NoRobot,
}

impl std::fmt::Display for GateReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GateReason::Ok => "ok",
            GateReason::HandUnreachable => "hand unreachable",
            GateReason::CameraMoved => "camera moved",
            GateReason::NoRobot => "no robot",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAvailability {
    pub enabled: bool,
    pub reason: GateReason,
}

impl ControlAvailability {
    fn from_reason(reason: GateReason) -> Self {
        Self {
            enabled: reason == GateReason::Ok,
            reason,
        }
    }
}

/// How far the camera may drift from the saved extrinsics before
/// collection commands are disabled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsThresholds {
    pub translation: f64,
    pub rotation: f64,
}

impl Default for ExtrinsicsThresholds {
    fn default() -> Self {
        Self {
            translation: 0.02,
            rotation: 5f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "candidate")]
pub enum SessionState {
    AwaitingPlacement,
    PlacementProposed(Vec3),
    Collecting,
    FollowMode,
    Replaying,
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::AwaitingPlacement => "AwaitingPlacement",
            SessionState::PlacementProposed(_) => "PlacementProposed",
            SessionState::Collecting => "Collecting",
            SessionState::FollowMode => "FollowMode",
            SessionState::Replaying => "Replaying",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("{op} is not allowed in state {state}")]
    InvalidState { op: &'static str, state: &'static str },
    #[error("controls disabled: {0}")]
    GateClosed(GateReason),
    #[error("inverse kinematics did not converge (position residual {:.6} m)", .0.residual.position)]
    IkFailed(Box<IkFailure>),
    #[error("no waypoint to revert")]
    NothingToRevert,
    #[error("session has no waypoints")]
    NoWaypoints,
    #[error("follow stream contained no accepted samples")]
    EmptyStream,
    #[error("point lies below the table plane")]
    PointBelowPlane,
    #[error("clock {now} does not advance past {last}")]
    ClockNotAdvanced { now: f64, last: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Gripper footprint projected onto the table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowRect {
    pub center: Vec3,
    pub length: f64,
    pub width: f64,
    /// Angle of the gripper's x axis within the table plane, radians.
    pub heading: f64,
}

/// What the operator sees in place of the arm in invisible-robot mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorMarker {
    pub pose: Pose,
    pub color: SignalColor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionSession {
    pub state: SessionState,
    pub chain: Arc<KinematicChain>,
    pub table: TablePlane,
    pub base_pose: Pose,
    pub current_q: JointConfig,
    pub gripper: GripperState,
    pub waypoints: Vec<Waypoint>,
    pub segments: Vec<PathSegment>,
    /// Camera pose saved when the robot was placed.
    pub saved_extrinsics: Option<CameraExtrinsics>,
    /// Latest camera pose reported by the operator.
    pub live_camera: CameraExtrinsics,
    pub thresholds: ExtrinsicsThresholds,
    pub invisible_robot: bool,
    pub clock: f64,
    pub ik: IkParams,
    /// IK iterations per follow-mode sample.
    pub follow_iters: usize,
    follow: Option<follow::FollowTrace>,
}

impl CollectionSession {
    pub fn new(chain: Arc<KinematicChain>, scene: &SceneModel) -> Self {
        Self {
            state: SessionState::AwaitingPlacement,
            current_q: chain.home.clone(),
            chain,
            table: scene.table,
            base_pose: Pose::identity(),
            gripper: GripperState::Open,
            waypoints: Vec::new(),
            segments: Vec::new(),
            saved_extrinsics: None,
            live_camera: scene.camera.extrinsics,
            thresholds: ExtrinsicsThresholds::default(),
            invisible_robot: false,
            clock: 0.0,
            ik: IkParams::default(),
            follow_iters: 5,
            follow: None,
        }
    }

    fn guard(&self, op: &'static str, ok: bool) -> Result<(), SessionError> {
        if ok {
            Ok(())
        } else {
            Err(SessionError::InvalidState {
                op,
                state: self.state.name(),
            })
        }
    }

    /// Advances the session clock. Time never runs backwards.
    pub fn tick(&mut self, now: f64) -> Result<(), SessionError> {
        if !now.is_finite() || now < self.clock {
            return Err(SessionError::ClockNotAdvanced {
                now,
                last: self.clock,
            });
        }
        self.clock = now;
        Ok(())
    }

    pub fn set_live_camera(&mut self, camera: CameraExtrinsics) {
        self.live_camera = camera;
    }

    pub fn propose_placement(&mut self, candidate: Vec3) -> Result<(), SessionError> {
        self.guard(
            "propose_placement",
            matches!(
                self.state,
                SessionState::AwaitingPlacement | SessionState::PlacementProposed(_)
            ),
        )?;
        if !candidate.iter().all(|c| c.is_finite()) {
            return Err(SessionError::InvalidArgument("candidate must be finite".into()));
        }
        self.state = SessionState::PlacementProposed(candidate);
        Ok(())
    }

    /// Instantiates the robot at the proposed point snapped onto the table,
    /// and saves the current camera pose as the reference for the gate.
    pub fn confirm_placement(&mut self, scene: &SceneModel) -> Result<(), SessionError> {
        let SessionState::PlacementProposed(candidate) = self.state else {
            return Err(SessionError::InvalidState {
                op: "confirm_placement",
                state: self.state.name(),
            });
        };
        self.table = scene.table;
        self.base_pose = Pose::new(
            self.table.project(&candidate),
            rotation_between(&Vec3::z(), &self.table.normal),
        );
        self.current_q = self.chain.home.clone();
        self.gripper = GripperState::Open;
        self.waypoints.clear();
        self.segments.clear();
        self.saved_extrinsics = Some(self.live_camera);
        self.state = SessionState::Collecting;
        Ok(())
    }

    /// Whether collection commands are available. Checks, in order: a robot
    /// is placed, the camera is within threshold of the saved extrinsics
    /// (closed interval), and the hand point (if any) is inside the reach shell.
    pub fn control_gate(&self, hand: Option<&Vec3>, camera: &CameraExtrinsics) -> ControlAvailability {
        let active = matches!(self.state, SessionState::Collecting | SessionState::FollowMode);
        let saved = match (&self.saved_extrinsics, active) {
            (Some(s), true) => s,
            _ => return ControlAvailability::from_reason(GateReason::NoRobot),
        };
        if camera.translation_to(saved) > self.thresholds.translation + GATE_SLACK
            || camera.rotation_to(saved) > self.thresholds.rotation + GATE_SLACK
        {
            return ControlAvailability::from_reason(GateReason::CameraMoved);
        }
        if let Some(p) = hand {
            if !is_reachable(&self.chain, &self.base_pose, p) {
                return ControlAvailability::from_reason(GateReason::HandUnreachable);
            }
        }
        ControlAvailability::from_reason(GateReason::Ok)
    }

    fn require_gate(&self, hand: Option<&Vec3>) -> Result<(), SessionError> {
        let gate = self.control_gate(hand, &self.live_camera);
        if gate.enabled {
            Ok(())
        } else {
            Err(SessionError::GateClosed(gate.reason))
        }
    }

    /// World-frame tool pose at `q`.
    pub fn tool_pose(&self, q: &JointConfig) -> Result<Pose, SessionError> {
        Ok(self.base_pose.compose(&forward_kinematics(&self.chain, q)?))
    }

    pub fn current_pose(&self) -> Pose {
        self.tool_pose(&self.current_q).expect("current_q matches the chain")
    }

    /// Orientation used when an operator supplies a position only: the tool
    /// as it sits in the home configuration, facing the table.
    pub fn default_orientation(&self) -> UnitQuat {
        self.tool_pose(&self.chain.home)
            .expect("home matches the chain")
            .orientation
    }

    fn next_timestamp(&self) -> Result<f64, SessionError> {
        match self.waypoints.last() {
            Some(w) if self.clock <= w.timestamp => Err(SessionError::ClockNotAdvanced {
                now: self.clock,
                last: w.timestamp,
            }),
            _ => Ok(self.clock),
        }
    }

    /// The joint configuration the next waypoint starts from.
    fn anchor_q(&self) -> JointConfig {
        self.waypoints
            .last()
            .map_or_else(|| self.chain.home.clone(), |w| w.solved_q.clone())
    }

    fn solve(&self, seed: &JointConfig, target: &Pose, params: &IkParams) -> Result<IkSolution, KinematicsError> {
        let local = self.base_pose.inverse().compose(target);
        solve_ik_dls(&self.chain, seed, &local, params)
    }

    /// Joint path from `seed` through an IK trace. A trace from a restart
    /// seed is joined to `seed` by interpolated samples.
    fn segment_configs(seed: &JointConfig, trace: &[JointConfig]) -> Vec<JointConfig> {
        let mut configs = vec![seed.clone()];
        if let Some(first) = trace.first() {
            if first != seed {
                let span = seed
                    .iter()
                    .zip(first.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let steps = (span / BRIDGE_STEP).ceil().max(1.0) as usize;
                configs.extend((1..steps).map(|k| seed.lerp(first, k as f64 / steps as f64)));
                configs.push(first.clone());
            }
            configs.extend(trace.iter().skip(1).cloned());
        }
        configs
    }

    /// Appends a waypoint reached along `configs` (which must start at the
    /// previous waypoint's configuration and end at `q`).
    fn push_waypoint(
        &mut self,
        target_pose: Pose,
        q: JointConfig,
        configs: Vec<JointConfig>,
        timestamp: f64,
    ) -> Result<(), SessionError> {
        let index = self.waypoints.len();
        if index > 0 {
            let positions = configs
                .iter()
                .map(|c| self.tool_pose(c).map(|p| p.position))
                .collect::<Result<Vec<_>, _>>()?;
            self.segments.push(PathSegment {
                from_index: index - 1,
                to_index: index,
                positions,
                configs,
            });
        }
        self.waypoints.push(Waypoint {
            index,
            target_pose,
            gripper: self.gripper,
            solved_q: q.clone(),
            timestamp,
        });
        self.current_q = q;
        Ok(())
    }

    /// Solves IK for a world-frame target and saves it as a waypoint.
    pub fn add_waypoint(&mut self, target: Pose) -> Result<(), SessionError> {
        self.guard("add_waypoint", self.state == SessionState::Collecting)?;
        if !target.is_finite() {
            return Err(SessionError::InvalidArgument("target pose must be finite".into()));
        }
        self.require_gate(Some(&target.position))?;
        let timestamp = self.next_timestamp()?;
        let seed = self.current_q.clone();
        let sol = match self.solve(&seed, &target, &self.ik) {
            Ok(s) => s,
            Err(KinematicsError::NotConverged(f)) => return Err(SessionError::IkFailed(f)),
            Err(e) => return Err(e.into()),
        };
        let configs = Self::segment_configs(&seed, &sol.trace);
        self.push_waypoint(target, sol.q, configs, timestamp)
    }

    /// Drops the last waypoint and its incoming path; the arm and gripper go
    /// back to the previous waypoint (or home and open).
    pub fn revert_waypoint(&mut self) -> Result<(), SessionError> {
        self.guard("revert", self.state == SessionState::Collecting)?;
        if self.waypoints.pop().is_none() {
            return Err(SessionError::NothingToRevert);
        }
        if !self.waypoints.is_empty() {
            self.segments.pop();
        }
        match self.waypoints.last() {
            Some(w) => {
                self.current_q = w.solved_q.clone();
                self.gripper = w.gripper;
            }
            None => {
                self.current_q = self.chain.home.clone();
                self.gripper = GripperState::Open;
            }
        }
        Ok(())
    }

    /// Flips the gripper and records the change as a waypoint at the current pose.
    pub fn toggle_gripper(&mut self) -> Result<(), SessionError> {
        self.guard("toggle_gripper", self.state == SessionState::Collecting)?;
        self.require_gate(None)?;
        let timestamp = self.next_timestamp()?;
        let pose = self.current_pose();
        let q = self.current_q.clone();
        self.gripper = self.gripper.toggled();
        self.push_waypoint(pose, q.clone(), vec![q.clone(), q], timestamp)
    }

    pub fn set_invisible_robot(&mut self, on: bool) {
        self.invisible_robot = on;
    }

    /// End-effector marker, reported in place of the arm in invisible mode.
    pub fn marker(&self) -> Option<EndEffectorMarker> {
        self.invisible_robot.then(|| EndEffectorMarker {
            pose: self.current_pose(),
            color: self.gripper.color(),
        })
    }

    /// Gripper footprint below `point` on `table`, turned to the current tool heading.
    pub fn project_shadow(&self, point: &Vec3, table: &TablePlane) -> Result<ShadowRect, SessionError> {
        if !point.iter().all(|c| c.is_finite()) {
            return Err(SessionError::InvalidArgument("point must be finite".into()));
        }
        if table.signed_distance(point) < 0.0 {
            return Err(SessionError::PointBelowPlane);
        }
        let n = table.normal.into_inner();
        let (u, v) = if (n - Vec3::z()).norm() < 1e-12 {
            (Vec3::x(), Vec3::y())
        } else {
            let u = any_perpendicular(&n);
            (u, n.cross(&u))
        };
        let rot = self.current_pose().orientation;
        let mut dir = rot * Vec3::x();
        dir -= n * n.dot(&dir);
        if dir.norm() < 1e-9 {
            dir = rot * Vec3::y();
            dir -= n * n.dot(&dir);
        }
        let (length, width) = self.chain.end_effector_dims;
        Ok(ShadowRect {
            center: table.project(point),
            length,
            width,
            heading: dir.dot(&v).atan2(dir.dot(&u)),
        })
    }

    /// Rebuilds a collecting session from saved waypoints, joining
    /// consecutive configurations by straight joint-space segments.
    pub fn from_waypoints(
        chain: Arc<KinematicChain>,
        scene: &SceneModel,
        base_pose: Pose,
        saved_extrinsics: CameraExtrinsics,
        waypoints: Vec<Waypoint>,
    ) -> Result<Self, SessionError> {
        let mut s = Self::new(chain, scene);
        s.base_pose = base_pose;
        s.saved_extrinsics = Some(saved_extrinsics);
        s.live_camera = saved_extrinsics;
        s.state = SessionState::Collecting;
        let mut last_t = f64::NEG_INFINITY;
        for (i, w) in waypoints.into_iter().enumerate() {
            s.chain.validate_config(&w.solved_q)?;
            if w.index != i || !w.timestamp.is_finite() || w.timestamp <= last_t {
                return Err(SessionError::InvalidArgument(format!(
                    "waypoint {i}: index or timestamp out of order"
                )));
            }
            last_t = w.timestamp;
            let from = s.anchor_q();
            s.gripper = w.gripper;
            s.clock = w.timestamp;
            s.push_waypoint(w.target_pose, w.solved_q.clone(), vec![from, w.solved_q], w.timestamp)?;
        }
        Ok(s)
    }
}

/// Points `a + (i/n)(b - a)` for `i = 1..=n`: the start is excluded, the end included.
pub fn interpolate_linear(a: &Vec3, b: &Vec3, n: usize) -> Vec<Vec3> {
    (1..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}
