//! Follow mode: the arm trails a stream of hand poses, and the trail is
//! turned into a fixed number of waypoints when the stream ends.

use serde::{Deserialize, Serialize};

use super::{CollectionSession, GateReason, SessionError, SessionState};
use crate::geometry::{slerp, Pose};
use crate::kinematics::KinematicsError;

/// Waypoints appended for every follow stream.
pub const FOLLOW_WAYPOINTS: usize = 20;

/// Why a follow sample was not used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowSkip {
    Gate(GateReason),
    /// Sample time not after the previous accepted sample.
    Stale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct FollowTrace {
    saved_q: crate::kinematics::JointConfig,
    /// Achieved world-frame tool poses with their times; the first entry is
    /// the pose when follow mode began.
    path: Vec<(f64, Pose)>,
}

/// Poses at `i / n` of the polyline's arc length for `i = 1..=n`. A path
/// that never moves is split evenly by sample index instead.
fn resample(path: &[Pose], n: usize) -> Vec<Pose> {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (w[1].position - w[0].position).norm());
    }
    let total = *cum.last().unwrap();
    let m = path.len() - 1;
    (1..=n)
        .map(|i| {
            let f = i as f64 / n as f64;
            let (k, u) = if total > 1e-12 {
                let s = f * total;
                let k = (0..m).find(|&k| cum[k + 1] >= s && cum[k + 1] > cum[k]).unwrap_or(m - 1);
                let len = cum[k + 1] - cum[k];
                (k, if len > 0.0 { ((s - cum[k]) / len).clamp(0.0, 1.0) } else { 1.0 })
            } else {
                let x = f * m as f64;
                let k = (x.floor() as usize).min(m - 1);
                (k, x - k as f64)
            };
            let (a, b) = (&path[k], &path[k + 1]);
            Pose::new(
                a.position.lerp(&b.position, u),
                slerp(&a.orientation, &b.orientation, u),
            )
        })
        .collect()
}

impl CollectionSession {
    pub fn follow_begin(&mut self) -> Result<(), SessionError> {
        self.guard("follow_begin", self.state == SessionState::Collecting)?;
        self.require_gate(None)?;
        self.follow = Some(FollowTrace {
            saved_q: self.current_q.clone(),
            path: vec![(self.clock, self.current_pose())],
        });
        self.state = SessionState::FollowMode;
        Ok(())
    }

    /// One bounded IK update toward the hand pose. Gated or stale samples
    /// are skipped and reported, never fatal.
    pub fn follow_sample(&mut self, time: f64, hand: Pose) -> Result<Option<FollowSkip>, SessionError> {
        self.guard("follow_sample", self.state == SessionState::FollowMode)?;
        if !hand.is_finite() {
            return Err(SessionError::InvalidArgument("hand pose must be finite".into()));
        }
        let last_t = self.follow.as_ref().and_then(|f| f.path.last()).map_or(self.clock, |p| p.0);
        if !time.is_finite() || time <= last_t {
            return Ok(Some(FollowSkip::Stale));
        }
        let gate = self.control_gate(Some(&hand.position), &self.live_camera);
        if !gate.enabled {
            return Ok(Some(FollowSkip::Gate(gate.reason)));
        }
        let params = self.ik.with_max_iters(self.follow_iters).with_restarts(0);
        let seed = self.current_q.clone();
        let (q, achieved) = match self.solve(&seed, &hand, &params) {
            Ok(s) => (s.q, s.achieved),
            Err(KinematicsError::NotConverged(f)) => (f.best, f.achieved),
            Err(e) => return Err(e.into()),
        };
        self.current_q = q;
        self.clock = time;
        let world = self.base_pose.compose(&achieved);
        self.follow
            .as_mut()
            .expect("follow mode keeps a trace")
            .path
            .push((time, world));
        Ok(None)
    }

    /// Leaves follow mode. The trailed path is resampled into exactly
    /// [`FOLLOW_WAYPOINTS`] waypoints, spaced evenly in arc length and in
    /// time. Without any accepted sample the session is left as it was.
    pub fn follow_end(&mut self) -> Result<usize, SessionError> {
        self.guard("follow_end", self.state == SessionState::FollowMode)?;
        let trace = self.follow.take().expect("follow mode keeps a trace");
        self.state = SessionState::Collecting;
        if trace.path.len() < 2 {
            self.current_q = trace.saved_q;
            return Err(SessionError::EmptyStream);
        }
        let t_ref = trace.path[0].0;
        let t_end = trace.path.last().unwrap().0;
        let poses: Vec<Pose> = trace.path.iter().map(|p| p.1).collect();
        let targets = resample(&poses, FOLLOW_WAYPOINTS);
        let mut seed = trace.saved_q;
        for (i, target) in targets.into_iter().enumerate() {
            let t = t_ref + (i + 1) as f64 / FOLLOW_WAYPOINTS as f64 * (t_end - t_ref);
            let (q, trace_q, target) = match self.solve(&seed, &target, &self.ik) {
                Ok(s) => (s.q, s.trace, target),
                Err(KinematicsError::NotConverged(f)) => {
                    // keep the count; store the pose actually reached
                    let reached = self.base_pose.compose(&f.achieved);
                    (f.best, f.trace, reached)
                }
                Err(e) => return Err(e.into()),
            };
            let configs = Self::segment_configs(&seed, &trace_q);
            let configs = match configs.last() {
                Some(last) if *last == q => configs,
                _ => {
                    let mut c = configs;
                    c.push(q.clone());
                    c
                }
            };
            self.push_waypoint(target, q.clone(), configs, t)?;
            seed = q;
        }
        Ok(FOLLOW_WAYPOINTS)
    }

    /// Runs a whole follow stream: begin, every sample, end.
    pub fn follow_hand(&mut self, stream: &[(f64, Pose)]) -> Result<usize, SessionError> {
        let before = self.clone();
        self.follow_begin()?;
        for (t, pose) in stream {
            if let Err(e) = self.follow_sample(*t, *pose) {
                *self = before;
                return Err(e);
            }
        }
        self.follow_end()
    }
}
