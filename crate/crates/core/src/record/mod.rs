//! Demonstration records: RGB-D frames plus waypoint keyframes, and their
//! checksummed on-disk layout.
//!
//! ```text
//! <dir>/manifest           JSON: metadata, keyframes, per-file SHA-256
//! <dir>/manifest.sha256    SHA-256 of `manifest`
//! <dir>/keyframes.txt      keyframe stream (see `emit_keyframes`)
//! <dir>/depth/NNNN.raw     little-endian f32 meters, row-major, no header
//! <dir>/rgb/NNNN.ppm       binary PPM (P6, 8 bit)
//! ```

mod disk;
mod keyframes;

pub use disk::{export, import, inspect, Finding, FindingKind, MANIFEST, MANIFEST_SUM};
pub use keyframes::{emit_keyframes, format_g9, parse_keyframes, KeyframeLine};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::kinematics::{JointConfig, KinematicChain};
use crate::scene::{capsules_at, render_depth_with, render_rgb_with, CameraExtrinsics, CameraIntrinsics, DepthImage, RgbImage, SceneModel};
use crate::session::{CollectionSession, GripperState, SessionError, Waypoint};

pub const FORMAT_VERSION: &str = "evr-1";

/// Depth written for pixels that hit nothing.
pub const DEPTH_NO_HIT: f32 = f32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("corrupt record: {file}: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("unsupported record version {0:?}")]
    UnsupportedVersion(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub index: usize,
    pub time: f64,
    pub position: Vec3,
    pub orientation: UnitQuat,
    pub gripper: GripperState,
    pub joint_config: JointConfig,
}

impl From<&Waypoint> for Keyframe {
    fn from(w: &Waypoint) -> Self {
        Self {
            index: w.index,
            time: w.timestamp,
            position: w.target_pose.position,
            orientation: w.target_pose.orientation,
            gripper: w.gripper,
            joint_config: w.solved_q.clone(),
        }
    }
}

impl Keyframe {
    pub fn to_waypoint(&self) -> Waypoint {
        Waypoint {
            index: self.index,
            target_pose: Pose::new(self.position, self.orientation),
            gripper: self.gripper,
            solved_q: self.joint_config.clone(),
            timestamp: self.time,
        }
    }
}

/// Depth image at storage precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major meters; [`DEPTH_NO_HIT`] where nothing was hit.
    pub data: Vec<f32>,
}

impl From<&DepthImage> for DepthFrame {
    fn from(d: &DepthImage) -> Self {
        Self {
            width: d.width,
            height: d.height,
            data: d
                .depths
                .iter()
                .map(|&v| if v.is_finite() { v as f32 } else { DEPTH_NO_HIT })
                .collect(),
        }
    }
}

impl DepthFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(width: u32, height: u32, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 4 * width as usize * height as usize {
            return None;
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(Self { width, height, data })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameCapture {
    pub time: f64,
    pub depth: DepthFrame,
    pub rgb: RgbImage,
    pub camera: CameraExtrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationRecord {
    pub format_version: String,
    pub task: String,
    pub chain_sha256: String,
    pub scene_sha256: String,
    pub intrinsics: CameraIntrinsics,
    pub saved_extrinsics: CameraExtrinsics,
    pub base_pose: Pose,
    /// The arm the keyframes were solved for.
    pub chain: KinematicChain,
    pub frames: Vec<FrameCapture>,
    pub keyframes: Vec<Keyframe>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_hash<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("model types serialize"))
}

/// SHA-256 of the chain's canonical JSON form.
pub fn chain_hash(chain: &KinematicChain) -> String {
    json_hash(chain)
}

/// SHA-256 of the scene's canonical JSON form.
pub fn scene_hash(scene: &SceneModel) -> String {
    json_hash(scene)
}

/// Renders RGB-D from the saved extrinsics at each capture time, with the
/// arm posed as in the replay, and copies the waypoints as keyframes.
///
/// `times` must be non-negative, strictly increasing, and end no earlier
/// than the last waypoint.
pub fn capture(
    session: &CollectionSession,
    scene: &SceneModel,
    task: &str,
    times: &[f64],
) -> Result<DemonstrationRecord, RecordError> {
    let last_wp = session.waypoints.last().ok_or(SessionError::NoWaypoints)?;
    let gate = session.control_gate(None, &session.live_camera);
    if !gate.enabled {
        return Err(SessionError::GateClosed(gate.reason).into());
    }
    let saved = session.saved_extrinsics.expect("an open gate implies a placed robot");
    if times.is_empty()
        || times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
        || times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(RecordError::InvalidArgument(
            "capture times must be non-empty, >= 0 and strictly increasing".into(),
        ));
    }
    if *times.last().unwrap() < last_wp.timestamp {
        return Err(RecordError::InvalidArgument(
            "capture times must reach the last waypoint".into(),
        ));
    }
    let frames = times
        .iter()
        .map(|&t| {
            let q = session.replay_frame_at(t).expect("session has waypoints").q;
            let arm = capsules_at(&session.chain, &session.base_pose, &q).map_err(SessionError::from)?;
            Ok(FrameCapture {
                time: t,
                depth: DepthFrame::from(&render_depth_with(scene, &saved, &arm)),
                rgb: render_rgb_with(scene, &saved, &arm),
                camera: saved,
            })
        })
        .collect::<Result<Vec<_>, RecordError>>()?;
    Ok(DemonstrationRecord {
        format_version: FORMAT_VERSION.into(),
        task: task.into(),
        chain_sha256: chain_hash(&session.chain),
        scene_sha256: scene_hash(scene),
        intrinsics: scene.camera.intrinsics,
        saved_extrinsics: saved,
        base_pose: session.base_pose,
        chain: (*session.chain).clone(),
        frames,
        keyframes: session.waypoints.iter().map(Keyframe::from).collect(),
    })
}

impl DemonstrationRecord {
    /// Structural checks shared by export and import.
    pub fn validate(&self) -> Result<(), RecordError> {
        let corrupt = |reason: String| RecordError::Corrupt {
            file: MANIFEST.into(),
            reason,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(RecordError::UnsupportedVersion(self.format_version.clone()));
        }
        if self.frames.is_empty() {
            return Err(corrupt("record has no frames".into()));
        }
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        for (i, f) in self.frames.iter().enumerate() {
            let n = w as usize * h as usize;
            if f.depth.width != w || f.depth.height != h || f.depth.data.len() != n {
                return Err(corrupt(format!("frame {i}: depth dimensions differ from intrinsics")));
            }
            if f.rgb.width != w || f.rgb.height != h || f.rgb.data.len() != 3 * n {
                return Err(corrupt(format!("frame {i}: rgb dimensions differ from intrinsics")));
            }
        }
        if self.frames.windows(2).any(|p| p[1].time <= p[0].time) {
            return Err(corrupt("frame times must increase".into()));
        }
        let last_frame = self.frames.last().unwrap().time;
        let mut seen = BTreeSet::new();
        for (i, k) in self.keyframes.iter().enumerate() {
            if k.index != i || !seen.insert(k.index) {
                return Err(corrupt(format!("keyframe {i}: index out of order")));
            }
            if !(k.time >= 0.0 && k.time <= last_frame) {
                return Err(corrupt(format!("keyframe {i}: time outside the captured span")));
            }
            self.chain
                .validate_config(&k.joint_config)
                .map_err(|e| corrupt(format!("keyframe {i}: {e}")))?;
        }
        if self.keyframes.windows(2).any(|p| p[1].time <= p[0].time) {
            return Err(corrupt("keyframe times must increase".into()));
        }
        if chain_hash(&self.chain) != self.chain_sha256 {
            return Err(corrupt("embedded chain does not match its hash".into()));
        }
        Ok(())
    }

    pub fn emit_keyframes(&self) -> String {
        emit_keyframes(&self.keyframes)
    }
}
