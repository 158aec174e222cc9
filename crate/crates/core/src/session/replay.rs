use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CollectionSession, GripperState, SessionError, SessionState};
use crate::kinematics::JointConfig;
use crate::scene::{capsules_at, check_collision, CollisionReport, SceneModel};

/// Upper bound on frames in one replay.
const MAX_FRAMES: f64 = 5.0e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub time: f64,
    pub q: JointConfig,
    pub gripper: GripperState,
    /// Replays are drawn semi-transparent.
    pub ghost: bool,
}

impl CollectionSession {
    /// Plays the collected trajectory back: enters `Replaying`, samples it
    /// and returns to `Collecting`.
    pub fn generate_replay(&mut self, rate_hz: f64) -> Result<Vec<ReplayFrame>, SessionError> {
        self.guard("replay", self.state == SessionState::Collecting)?;
        self.state = SessionState::Replaying;
        let frames = self.replay_frames(rate_hz);
        self.state = SessionState::Collecting;
        frames
    }

    /// Frames at every multiple of `1 / rate_hz` between the first and last
    /// waypoint, plus one at each waypoint time. Within a segment the solver
    /// trace is traversed at uniform speed; the gripper changes at waypoints.
    pub fn replay_frames(&self, rate_hz: f64) -> Result<Vec<ReplayFrame>, SessionError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(SessionError::InvalidArgument("rate_hz must be > 0".into()));
        }
        let (first, last) = match (self.waypoints.first(), self.waypoints.last()) {
            (Some(f), Some(l)) => (f.timestamp, l.timestamp),
            _ => return Err(SessionError::NoWaypoints),
        };
        if (last - first) * rate_hz > MAX_FRAMES {
            return Err(SessionError::InvalidArgument("replay would exceed the frame limit".into()));
        }
        let mut times: Vec<f64> = self.waypoints.iter().map(|w| w.timestamp).collect();
        let k0 = (first * rate_hz).ceil() as i64;
        let k1 = (last * rate_hz).floor() as i64;
        times.extend(
            (k0..=k1)
                .map(|k| k as f64 / rate_hz)
                .filter(|t| (first..=last).contains(t)),
        );
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(times.into_iter().filter_map(|t| self.replay_frame_at(t)).collect())
    }

    /// The replayed arm state at time `t`; before the first waypoint the
    /// arm rests there, after the last it stays at the last.
    pub fn replay_frame_at(&self, t: f64) -> Option<ReplayFrame> {
        // last waypoint at or before t
        let j = self.waypoints.partition_point(|w| w.timestamp <= t).saturating_sub(1);
        let w = self.waypoints.get(j)?;
        let q = if j + 1 < self.waypoints.len() && t > w.timestamp {
            let next = &self.waypoints[j + 1];
            let configs = &self.segments[j].configs;
            let u = (t - w.timestamp) / (next.timestamp - w.timestamp);
            let x = u * (configs.len() - 1) as f64;
            let k = (x.floor() as usize).min(configs.len().saturating_sub(2));
            if configs.len() < 2 {
                configs[0].clone()
            } else {
                configs[k].lerp(&configs[k + 1], (x - k as f64).clamp(0.0, 1.0))
            }
        } else {
            w.solved_q.clone()
        };
        Some(ReplayFrame {
            time: t,
            q,
            gripper: w.gripper,
            ghost: true,
        })
    }
}

/// Replays the session and checks every frame's arm capsules against the
/// scene. Contacts carry the frame time.
pub fn audit_replay(
    session: &CollectionSession,
    scene: &SceneModel,
    rate_hz: f64,
    ignore: &BTreeSet<String>,
) -> Result<CollisionReport, SessionError> {
    let mut report = CollisionReport::default();
    for frame in session.replay_frames(rate_hz)? {
        let caps = capsules_at(&session.chain, &session.base_pose, &frame.q)?;
        report.extend(check_collision(&caps, scene, ignore).at_time(frame.time));
    }
    Ok(report)
}
