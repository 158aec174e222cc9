use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::protocol::Envelope;
use crate::geometry::{quat_from_xyzw, Pose, Vec3};
use crate::kinematics::{JointConfig, KinematicChain};
use crate::record::{capture, export, DemonstrationRecord, RecordError};
use crate::scene::{CameraExtrinsics, SceneModel};
use crate::session::{
    CollectionSession, ControlAvailability, EndEffectorMarker, GripperState, SessionError, SessionState,
    ShadowRect, SignalColor,
};

/// Clock advance applied by waypoint commands that carry no `time`.
pub const DEFAULT_TIME_STEP: f64 = 1.0;

/// Points kept per segment polyline in status events.
const POLYLINE_POINTS: usize = 16;

pub const COMMANDS: &[&str] = &[
    "create_session",
    "close_session",
    "status",
    "propose_placement",
    "confirm_placement",
    "add_waypoint",
    "revert",
    "toggle_gripper",
    "follow_begin",
    "follow_sample",
    "follow_end",
    "replay",
    "set_invisible",
    "hand_update",
    "capture",
    "export",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointSummary {
    pub index: usize,
    pub position: Vec3,
    pub gripper: GripperState,
}

/// Snapshot of a session sent after every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub state: String,
    pub candidate: Option<Vec3>,
    pub base_pose: Option<Pose>,
    pub current_q: JointConfig,
    pub clock: f64,
    pub waypoints: Vec<WaypointSummary>,
    /// Decimated end-effector polylines, one per segment.
    pub segments: Vec<Vec<Vec3>>,
    pub gate: ControlAvailability,
    pub gripper: GripperState,
    pub gripper_color: SignalColor,
    pub invisible_robot: bool,
    pub marker: Option<EndEffectorMarker>,
    /// Gripper shadow under the last reported hand point.
    pub shadow: Option<ShadowRect>,
}

fn decimate(points: &[Vec3], keep: usize) -> Vec<Vec3> {
    if points.len() <= keep {
        return points.to_vec();
    }
    let last = points.len() - 1;
    (0..keep).map(|i| points[i * last / (keep - 1)]).collect()
}

struct Slot {
    session: CollectionSession,
    last_seq: u64,
    event_seq: u64,
    hand: Option<Vec3>,
    record: Option<DemonstrationRecord>,
}

impl Slot {
    fn next_seq(&mut self) -> u64 {
        self.event_seq += 1;
        self.event_seq
    }

    fn status(&self, id: &str) -> SessionStatus {
        let s = &self.session;
        let placed = s.saved_extrinsics.is_some();
        let shadow = match (self.hand, placed) {
            (Some(h), true) => s.project_shadow(&h, &s.table).ok(),
            _ => None,
        };
        SessionStatus {
            session_id: id.into(),
            state: s.state.name().into(),
            candidate: match s.state {
                SessionState::PlacementProposed(c) => Some(c),
                _ => None,
            },
            base_pose: placed.then_some(s.base_pose),
            current_q: s.current_q.clone(),
            clock: s.clock,
            waypoints: s
                .waypoints
                .iter()
                .map(|w| WaypointSummary {
                    index: w.index,
                    position: w.target_pose.position,
                    gripper: w.gripper,
                })
                .collect(),
            segments: s.segments.iter().map(|g| decimate(&g.positions, POLYLINE_POINTS)).collect(),
            gate: s.control_gate(self.hand.as_ref(), &s.live_camera),
            gripper: s.gripper,
            gripper_color: s.gripper.color(),
            invisible_robot: s.invisible_robot,
            marker: s.marker(),
            shadow,
        }
    }
}

/// A command failure as reported on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandError {
    pub code: &'static str,
    pub message: String,
}

impl CommandError {
    fn protocol(message: impl Into<String>) -> Self {
        Self {
            code: "ProtocolError",
            message: message.into(),
        }
    }
}

impl From<SessionError> for CommandError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::InvalidState { .. } => "InvalidState",
            SessionError::GateClosed(_) => "GateClosed",
            SessionError::IkFailed(_) => "IkFailed",
            SessionError::NothingToRevert => "NothingToRevert",
            SessionError::NoWaypoints => "NoWaypoints",
            SessionError::EmptyStream => "EmptyStream",
            SessionError::PointBelowPlane => "PointBelowPlane",
            SessionError::ClockNotAdvanced { .. } => "ClockNotAdvanced",
            SessionError::InvalidArgument(_) => "InvalidArgument",
            SessionError::Kinematics(_) => "KinematicsError",
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RecordError> for CommandError {
    fn from(e: RecordError) -> Self {
        let code = match &e {
            RecordError::Session(s) => return s.clone().into(),
            RecordError::Io { .. } => "IoFailure",
            RecordError::Corrupt { .. } => "CorruptRecord",
            RecordError::UnsupportedVersion(_) => "UnsupportedVersion",
            RecordError::InvalidArgument(_) => "InvalidArgument",
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraPayload {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl CameraPayload {
    fn parse(&self) -> Result<CameraExtrinsics, CommandError> {
        let q = quat_from_xyzw(self.orientation, 1e-6)
            .ok_or_else(|| CommandError::protocol("camera orientation must be a unit quaternion"))?;
        Ok(CameraExtrinsics::new(Vec3::from(self.position), q))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Timed {
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointPayload {
    position: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetPayload {
    position: [f64; 3],
    orientation: Option<[f64; 4]>,
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplePayload {
    time: f64,
    position: [f64; 3],
    orientation: Option<[f64; 4]>,
    camera: Option<CameraPayload>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatePayload {
    rate_hz: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagPayload {
    on: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HandPayload {
    position: Option<[f64; 3]>,
    camera: Option<CameraPayload>,
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapturePayload {
    task: String,
    times: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportPayload {
    name: String,
}

fn payload<T: DeserializeOwned>(v: &Value) -> Result<T, CommandError> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| CommandError::protocol(format!("bad payload: {e}")))
}

fn target_pose(s: &CollectionSession, position: [f64; 3], orientation: Option<[f64; 4]>) -> Result<Pose, CommandError> {
    let orientation = match orientation {
        Some(q) => quat_from_xyzw(q, 1e-6).ok_or_else(|| CommandError::protocol("orientation must be a unit quaternion"))?,
        None => s.default_orientation(),
    };
    Ok(Pose::new(Vec3::from(position), orientation))
}

fn advance(s: &mut CollectionSession, time: Option<f64>) -> Result<(), SessionError> {
    s.tick(time.unwrap_or(s.clock + DEFAULT_TIME_STEP))
}

/// Transport-independent command handler shared by every connection.
pub struct Service {
    chain: Arc<KinematicChain>,
    scene: Arc<SceneModel>,
    export_dir: Option<PathBuf>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
}

impl Service {
    /// `export_dir` is where `export` commands may write; without it they fail.
    pub fn new(chain: KinematicChain, scene: SceneModel, export_dir: Option<PathBuf>) -> Self {
        Self {
            chain: Arc::new(chain),
            scene: Arc::new(scene),
            export_dir,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn chain(&self) -> &Arc<KinematicChain> {
        &self.chain
    }

    fn slot(&self, id: &str) -> Option<Arc<Mutex<Slot>>> {
        self.sessions.lock().expect("session table lock").get(id).cloned()
    }

    /// Copy of a session's current state.
    pub fn session(&self, id: &str) -> Option<CollectionSession> {
        self.slot(id).map(|s| s.lock().expect("session lock").session.clone())
    }

    /// The last captured record of a session.
    pub fn record(&self, id: &str) -> Option<DemonstrationRecord> {
        self.slot(id).and_then(|s| s.lock().expect("session lock").record.clone())
    }

    pub fn status(&self, id: &str) -> Option<SessionStatus> {
        self.slot(id).map(|s| s.lock().expect("session lock").status(id))
    }

    /// Handles one request. The reply is any events, then a `status`
    /// snapshot, then the `ack` or `error` carrying `reply_to` last.
    pub fn handle(&self, env: Envelope) -> Vec<Envelope> {
        let reject = |e: CommandError| {
            vec![Envelope::new(
                "error",
                env.session_id.as_deref(),
                0,
                json!({"reply_to": env.seq, "code": e.code, "message": e.message}),
            )]
        };
        if !COMMANDS.contains(&env.kind.as_str()) {
            return reject(CommandError::protocol(format!("unknown kind {:?}", env.kind)));
        }
        if env.kind == "create_session" {
            if env.session_id.is_some() {
                return reject(CommandError::protocol("create_session takes no session_id"));
            }
            if let Err(e) = payload::<Empty>(&env.payload) {
                return reject(e);
            }
            return self.create(env.seq);
        }
        let Some(id) = env.session_id.clone() else {
            return reject(CommandError::protocol("missing session_id"));
        };
        let Some(slot) = self.slot(&id) else {
            return reject(CommandError::protocol(format!("unknown session {id:?}")));
        };
        let mut slot = slot.lock().expect("session lock");
        if env.seq <= slot.last_seq {
            return reject(CommandError::protocol(format!(
                "out-of-order seq {} (last accepted {})",
                env.seq, slot.last_seq
            )));
        }
        if env.kind == "close_session" {
            if let Err(e) = payload::<Empty>(&env.payload) {
                return reject(e);
            }
            drop(slot);
            self.sessions.lock().expect("session table lock").remove(&id);
            return vec![Envelope::new("ack", Some(&id), 0, json!({"reply_to": env.seq, "result": {}}))];
        }
        let mut work = slot.session.clone();
        let mut hand = slot.hand;
        let mut record = None;
        let mut events = Vec::new();
        let outcome = self.apply(&env, &mut work, &mut hand, &mut record, &mut events, &slot);
        match &outcome {
            // protocol errors leave the session and its seq untouched
            Err(e) if e.code == "ProtocolError" => {}
            Err(_) => slot.last_seq = env.seq,
            Ok(_) => {
                slot.last_seq = env.seq;
                slot.session = work;
                slot.hand = hand;
                if record.is_some() {
                    slot.record = record;
                }
            }
        }
        let mut out = Vec::new();
        for (kind, body) in events {
            let seq = slot.next_seq();
            out.push(Envelope::new(kind, Some(&id), seq, body));
        }
        let status = serde_json::to_value(slot.status(&id)).expect("status serializes");
        let seq = slot.next_seq();
        out.push(Envelope::new("status", Some(&id), seq, status));
        let seq = slot.next_seq();
        out.push(match outcome {
            Ok(result) => Envelope::new("ack", Some(&id), seq, json!({"reply_to": env.seq, "result": result})),
            Err(e) => Envelope::new(
                "error",
                Some(&id),
                seq,
                json!({"reply_to": env.seq, "code": e.code, "message": e.message}),
            ),
        });
        out
    }

    fn create(&self, seq: u64) -> Vec<Envelope> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("sess-{n}");
        let mut slot = Slot {
            session: CollectionSession::new(self.chain.clone(), &self.scene),
            last_seq: seq,
            event_seq: 0,
            hand: None,
            record: None,
        };
        let status = serde_json::to_value(slot.status(&id)).expect("status serializes");
        let s1 = slot.next_seq();
        let s2 = slot.next_seq();
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(id.clone(), Arc::new(Mutex::new(slot)));
        vec![
            Envelope::new("status", Some(&id), s1, status),
            Envelope::new("ack", Some(&id), s2, json!({"reply_to": seq, "result": {"session_id": id}})),
        ]
    }

    fn export_path(&self, name: &str) -> Result<PathBuf, CommandError> {
        let root = self
            .export_dir
            .as_ref()
            .ok_or_else(|| CommandError::protocol("exports are disabled on this server"))?;
        let mut parts = Path::new(name).components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) => Ok(root.join(name)),
            _ => Err(CommandError::protocol("export name must be a single path component")),
        }
    }

    fn apply(
        &self,
        env: &Envelope,
        s: &mut CollectionSession,
        hand: &mut Option<Vec3>,
        record: &mut Option<DemonstrationRecord>,
        events: &mut Vec<(&'static str, Value)>,
        slot: &Slot,
    ) -> Result<Value, CommandError> {
        let p = &env.payload;
        match env.kind.as_str() {
            "status" => {
                payload::<Empty>(p)?;
            }
            "propose_placement" => {
                let a: PointPayload = payload(p)?;
                s.propose_placement(Vec3::from(a.position))?;
            }
            "confirm_placement" => {
                payload::<Empty>(p)?;
                s.confirm_placement(&self.scene)?;
            }
            "add_waypoint" => {
                let a: TargetPayload = payload(p)?;
                let target = target_pose(s, a.position, a.orientation)?;
                advance(s, a.time)?;
                s.add_waypoint(target)?;
                return Ok(json!({"index": s.waypoints.len() - 1}));
            }
            "revert" => {
                payload::<Empty>(p)?;
                s.revert_waypoint()?;
            }
            "toggle_gripper" => {
                let a: Timed = payload(p)?;
                advance(s, a.time)?;
                s.toggle_gripper()?;
                return Ok(json!({"gripper": s.gripper}));
            }
            "follow_begin" => {
                let a: Timed = payload(p)?;
                if let Some(t) = a.time {
                    s.tick(t)?;
                }
                s.follow_begin()?;
            }
            "follow_sample" => {
                let a: SamplePayload = payload(p)?;
                if let Some(c) = &a.camera {
                    s.set_live_camera(c.parse()?);
                }
                let pose = target_pose(s, a.position, a.orientation)?;
                *hand = Some(pose.position);
                let skip = s.follow_sample(a.time, pose)?;
                return Ok(json!({"accepted": skip.is_none(), "skipped": skip}));
            }
            "follow_end" => {
                payload::<Empty>(p)?;
                let n = s.follow_end()?;
                return Ok(json!({"appended": n}));
            }
            "replay" => {
                let a: RatePayload = payload(p)?;
                let frames = s.generate_replay(a.rate_hz)?;
                return Ok(json!({"frame_count": frames.len(), "frames": frames}));
            }
            "set_invisible" => {
                let a: FlagPayload = payload(p)?;
                s.set_invisible_robot(a.on);
            }
            "hand_update" => {
                let a: HandPayload = payload(p)?;
                if let Some(t) = a.time {
                    s.tick(t)?;
                }
                if let Some(c) = &a.camera {
                    s.set_live_camera(c.parse()?);
                }
                *hand = a.position.map(Vec3::from);
                let gate = s.control_gate(hand.as_ref(), &s.live_camera);
                let shadow = match (*hand, s.saved_extrinsics.is_some()) {
                    (Some(h), true) => s.project_shadow(&h, &s.table).ok(),
                    _ => None,
                };
                events.push(("gate", json!(gate)));
                events.push(("shadow", json!(shadow)));
                return Ok(json!({"gate": gate}));
            }
            "capture" => {
                let a: CapturePayload = payload(p)?;
                let times = a
                    .times
                    .unwrap_or_else(|| s.waypoints.iter().map(|w| w.timestamp).collect());
                let r = capture(s, &self.scene, &a.task, &times)?;
                let result = json!({"frame_count": r.frames.len(), "keyframe_count": r.keyframes.len()});
                *record = Some(r);
                return Ok(result);
            }
            "export" => {
                let a: ExportPayload = payload(p)?;
                let path = self.export_path(&a.name)?;
                let r = slot
                    .record
                    .as_ref()
                    .ok_or_else(|| CommandError {
                        code: "NoRecord",
                        message: "capture a record before exporting".into(),
                    })?;
                let manifest = export(r, &path)?;
                return Ok(json!({"manifest": manifest.display().to_string()}));
            }
            other => unreachable!("unhandled command {other}"),
        }
        Ok(json!({}))
    }
}
