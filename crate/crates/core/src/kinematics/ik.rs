use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::{
    clamp_to_limits, jacobian_from_frames, joint_frames, JointConfig, JointFrame, KinematicChain,
    KinematicsError,
};
use crate::geometry::{rotation_vector, Pose};

/// Halvings tried before a step is declared stalled.
const MAX_HALVINGS: usize = 30;

/// Fraction of each joint range spanned by the restart lattice.
const RESTART_SPAN: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub damping: f64,
    pub step_scale: f64,
    pub max_iters: usize,
    pub pos_tol: f64,
    pub ori_tol: f64,
    /// Extra descents from deterministic alternative seeds, tried only when
    /// the descent from the caller's seed fails. Each gets `max_iters`.
    pub restarts: usize,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            step_scale: 0.5,
            max_iters: 200,
            pos_tol: 1e-3,
            ori_tol: 0.01,
            restarts: 8,
        }
    }
}

impl IkParams {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidParams(m.into()));
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return bad("damping must be > 0");
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return bad("step_scale must be in (0, 1]");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.pos_tol > 0.0 && self.ori_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

/// Position and orientation error magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub position: f64,
    pub orientation: f64,
}

impl Residual {
    fn of(e: &Vector6<f64>) -> Self {
        Self {
            position: e.fixed_rows::<3>(0).norm(),
            orientation: e.fixed_rows::<3>(3).norm(),
        }
    }

    pub fn within(&self, params: &IkParams) -> bool {
        self.position <= params.pos_tol && self.orientation <= params.ori_tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: JointConfig,
    pub achieved: Pose,
    /// Iterations of the descent that produced `q`.
    pub iters: usize,
    pub residual: Residual,
    /// 0 when the caller's seed converged, otherwise the restart index + 1.
    pub attempt: usize,
    /// Accepted configurations of that descent, starting at its seed.
    pub trace: Vec<JointConfig>,
}

/// Best-so-far state when every descent runs out of iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct IkFailure {
    pub best: JointConfig,
    pub achieved: Pose,
    pub iters: usize,
    pub residual: Residual,
    pub attempt: usize,
    pub trace: Vec<JointConfig>,
}

/// 6-vector error: target minus current position, then the rotation vector
/// of `target * current^-1` (shortest arc).
pub fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let dp = target.position - current.position;
    let dr = rotation_vector(&(target.orientation * current.orientation.inverse()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

struct Eval {
    q: JointConfig,
    pose: Pose,
    err: Vector6<f64>,
    frames: Vec<JointFrame>,
}

impl Eval {
    fn new(chain: &KinematicChain, q: JointConfig, target: &Pose) -> Result<Self, KinematicsError> {
        let (frames, pose) = joint_frames(chain, &q)?;
        let err = pose_error(&pose, target);
        Ok(Self {
            q,
            pose,
            err,
            frames,
        })
    }

    fn pos_err(&self) -> f64 {
        self.err.fixed_rows::<3>(0).norm()
    }
}

struct Descent {
    last: Eval,
    iters: usize,
    trace: Vec<JointConfig>,
}

/// DLS direction with joints that sit on a limit and would be pushed past
/// it removed from the Jacobian.
fn dls_direction(
    chain: &KinematicChain,
    cur: &Eval,
    damping_sq: f64,
) -> nalgebra::DVector<f64> {
    let mut jac = jacobian_from_frames(&cur.frames, &cur.pose.position);
    let mut locked = vec![false; chain.dof()];
    loop {
        let normal: Matrix6<f64> = &jac * jac.transpose() + Matrix6::identity() * damping_sq;
        let chol = normal
            .cholesky()
            .expect("damped normal matrix is positive definite");
        let dq = jac.transpose() * chol.solve(&cur.err);
        let mut changed = false;
        for (i, r) in chain.limits.iter().enumerate() {
            let a = cur.q.0[i];
            let pushes_out = (a >= r.max && dq[i] > 0.0) || (a <= r.min && dq[i] < 0.0);
            if pushes_out && !locked[i] {
                locked[i] = true;
                jac.column_mut(i).fill(0.0);
                changed = true;
            }
        }
        if !changed {
            return dq;
        }
    }
}

fn descend(
    chain: &KinematicChain,
    seed: JointConfig,
    target: &Pose,
    params: &IkParams,
) -> Result<Descent, KinematicsError> {
    let damping_sq = params.damping * params.damping;
    let mut cur = Eval::new(chain, seed, target)?;
    let mut trace = vec![cur.q.clone()];
    let mut iters = 0;

    while iters < params.max_iters && !Residual::of(&cur.err).within(params) {
        let dq = dls_direction(chain, &cur, damping_sq);
        let (cur_pos, cur_full) = (cur.pos_err(), cur.err.norm());
        let mut scale = params.step_scale;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let raw: Vec<f64> = cur.q.iter().zip(dq.iter()).map(|(a, d)| a + scale * d).collect();
            let cand = Eval::new(chain, clamp_to_limits(chain, &raw)?, target)?;
            if cand.pos_err() <= cur_pos && cand.err.norm() <= cur_full {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        // stalled: no step along the direction improves the error
        let Some(next) = accepted else { break };
        iters += 1;
        if next.q == cur.q {
            break;
        }
        trace.push(next.q.clone());
        cur = next;
    }
    Ok(Descent {
        last: cur,
        iters,
        trace,
    })
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn primes(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut k = 2;
    while out.len() < n {
        if out.iter().all(|p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

/// Turn the first joint so the tool's azimuth about that joint's axis
/// matches the target's.
fn align_first_joint(chain: &KinematicChain, seed: &JointConfig, target: &Pose) -> JointConfig {
    use std::f64::consts::TAU;
    let mut out = seed.clone();
    let Ok((frames, tool)) = joint_frames(chain, seed) else {
        return out;
    };
    let axis = frames[0].axis;
    let project = |v: crate::geometry::Vec3| v - axis * axis.dot(&v);
    let from = project(tool.position - frames[0].origin);
    let to = project(target.position - frames[0].origin);
    if from.norm() < 1e-6 || to.norm() < 1e-6 {
        return out;
    }
    let range = chain.limits.0[0];
    let mut angle = out.0[0] + axis.dot(&from.cross(&to)).atan2(from.dot(&to));
    while angle > range.max && angle - TAU >= range.min {
        angle -= TAU;
    }
    while angle < range.min && angle + TAU <= range.max {
        angle += TAU;
    }
    out.0[0] = range.clamp(angle);
    out
}

/// Deterministic alternative seeds: the caller's seed with its first joint
/// aimed at the target, then a Halton lattice around mid-range, each aimed
/// the same way.
fn restart_seeds<'a>(
    chain: &'a KinematicChain,
    seed: &'a JointConfig,
    target: &'a Pose,
) -> impl Iterator<Item = JointConfig> + 'a {
    let bases = primes(chain.dof());
    let lattice = (1..).map(move |k| {
        JointConfig(
            chain
                .limits
                .iter()
                .zip(&bases)
                .map(|(r, &b)| r.mid() + RESTART_SPAN * (r.max - r.min) * (halton(k, b) - 0.5))
                .collect(),
        )
    });
    std::iter::once(seed.clone())
        .chain(lattice)
        .map(move |s| align_first_joint(chain, &s, target))
}

/// Damped-least-squares IK in the chain's base frame.
///
/// Each update is `dq = J^T (J J^T + damping^2 I)^-1 e`, scaled by
/// `step_scale` and clamped to the joint limits. A step is only accepted if
/// it moves the tool no further from the target position and does not grow
/// the full pose error; otherwise it is halved. Every trace therefore
/// approaches the target position monotonically.
///
/// If the descent from `seed` fails, up to `params.restarts` further
/// descents run from fixed alternative seeds.
pub fn solve_ik_dls(
    chain: &KinematicChain,
    seed: &JointConfig,
    target: &Pose,
    params: &IkParams,
) -> Result<IkSolution, KinematicsError> {
    params.validate()?;
    chain.validate_config(seed)?;

    let seeds = std::iter::once(seed.clone()).chain(restart_seeds(chain, seed, target).take(params.restarts));
    let mut best: Option<(usize, Descent)> = None;
    for (attempt, s) in seeds.enumerate() {
        let d = descend(chain, s, target, params)?;
        let residual = Residual::of(&d.last.err);
        if residual.within(params) {
            return Ok(IkSolution {
                q: d.last.q,
                achieved: d.last.pose,
                iters: d.iters,
                residual,
                attempt,
                trace: d.trace,
            });
        }
        if best.as_ref().is_none_or(|(_, b)| d.last.err.norm() < b.last.err.norm()) {
            best = Some((attempt, d));
        }
    }
    let (attempt, d) = best.expect("at least one descent runs");
    Err(KinematicsError::NotConverged(Box::new(IkFailure {
        residual: Residual::of(&d.last.err),
        best: d.last.q,
        achieved: d.last.pose,
        iters: d.iters,
        attempt,
        trace: d.trace,
    })))
}
