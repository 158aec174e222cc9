//! Invariants of the kinematics, session, scene, record and gateway modules
//! as proptest properties.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use democap_core::gateway::{Envelope, Service};
use democap_core::geometry::{Pose, UnitQuat, Vec3};
use democap_core::kinematics::{
    clamp_to_limits, forward_kinematics, solve_ik_dls, IkParams, JointConfig, KinematicChain, KinematicsError,
};
use democap_core::record::{capture, export};
use democap_core::scene::{audit_replay, check_collision, LinkCapsule, Primitive, SceneModel, Shape};
use democap_core::session::{CollectionSession, FOLLOW_WAYPOINTS};
use nalgebra::Unit;
use proptest::prelude::*;
use serde_json::json;

fn chain() -> KinematicChain {
    KinematicChain::panda()
}

fn collecting(scene: &SceneModel) -> CollectionSession {
    let mut s = CollectionSession::new(Arc::new(chain()), scene);
    s.propose_placement(Vec3::zeros()).unwrap();
    s.confirm_placement(scene).unwrap();
    s
}

/// In-limit configuration drawn uniformly per joint.
fn config() -> impl Strategy<Value = JointConfig> {
    let c = chain();
    c.limits
        .iter()
        .map(|r| r.min..=r.max)
        .collect::<Vec<_>>()
        .prop_map(JointConfig::new)
}

/// Offsets from home small enough that IK almost always succeeds.
fn nudges(max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-0.3..0.3_f64, 7), 1..=max_len)
}

fn nudged(s: &CollectionSession, d: &[f64]) -> Pose {
    let raw: Vec<f64> = s.chain.home.iter().zip(d).map(|(a, b)| a + b).collect();
    s.tool_pose(&clamp_to_limits(&s.chain, &raw).unwrap()).unwrap()
}

/// Adds one waypoint per nudge, one second apart; skips unreachable ones.
fn add_all(s: &mut CollectionSession, ds: &[Vec<f64>]) -> usize {
    let mut added = 0;
    for d in ds {
        let t = s.clock + 1.0;
        s.tick(t).unwrap();
        added += usize::from(s.add_waypoint(nudged(s, d)).is_ok());
    }
    added
}

fn shape() -> impl Strategy<Value = Shape> {
    let v = |r: f64| (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z));
    let rot = (v(1.0), 0.0..3.1_f64).prop_map(|(a, t)| {
        let a = if a.norm() < 1e-3 { Vec3::z() } else { a };
        UnitQuat::from_axis_angle(&Unit::new_normalize(a), t)
    });
    prop_oneof![
        (v(0.3), 0.02..0.2_f64).prop_map(|(center, radius)| Shape::Sphere { center, radius }),
        (v(0.3), (0.02..0.15_f64, 0.02..0.15_f64, 0.02..0.15_f64), rot).prop_map(|(center, (x, y, z), orientation)| {
            Shape::Box {
                center,
                half_extents: Vec3::new(x, y, z),
                orientation,
            }
        }),
        (v(0.3), v(1.0), 0.02..0.1_f64, 0.05..0.3_f64).prop_map(|(base_center, a, radius, height)| {
            let a = if a.norm() < 1e-3 { Vec3::z() } else { a };
            Shape::Cylinder {
                base_center,
                axis: Unit::new_normalize(a),
                radius,
                height,
            }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_is_bit_deterministic_and_normalized(q in config()) {
        let c = chain();
        let a = forward_kinematics(&c, &q).unwrap();
        let b = forward_kinematics(&c, &q).unwrap();
        prop_assert_eq!(a.position.map(f64::to_bits), b.position.map(f64::to_bits));
        prop_assert_eq!(a.orientation.coords.map(f64::to_bits), b.orientation.coords.map(f64::to_bits));
        prop_assert!((a.orientation.coords.norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn clamp_is_an_idempotent_projection(raw in prop::collection::vec(-4.0..4.0_f64, 7)) {
        let c = chain();
        let once = clamp_to_limits(&c, &raw).unwrap();
        prop_assert!(c.limits.contains(&once));
        prop_assert_eq!(clamp_to_limits(&c, once.as_slice()).unwrap(), once.clone());
        for ((r, q), lim) in raw.iter().zip(once.iter()).zip(c.limits.iter()) {
            if lim.contains(*r) {
                prop_assert_eq!(r, q);
            }
        }
    }

    #[test]
    fn collision_is_translation_invariant(
        s in shape(),
        p0 in (-0.4..0.4_f64, -0.4..0.4_f64, -0.4..0.4_f64),
        p1 in (-0.4..0.4_f64, -0.4..0.4_f64, -0.4..0.4_f64),
        radius in 0.005..0.1_f64,
        offset in (-2.0..2.0_f64, -2.0..2.0_f64, 0.5..2.0_f64),
    ) {
        let off = Vec3::new(offset.0, offset.1, offset.2);
        let cap = LinkCapsule { p0: Vec3::new(p0.0, p0.1, p0.2), p1: Vec3::new(p1.0, p1.1, p1.2), radius };
        let at = |shape: Shape, cap: LinkCapsule| {
            let scene = SceneModel { obstacles: vec![Primitive { label: "o".into(), shape }], ..SceneModel::sample_empty() };
            check_collision(&[cap], &scene, &BTreeSet::new())
        };
        let moved = LinkCapsule { p0: cap.p0 + off, p1: cap.p1 + off, radius };
        let (a, b) = (at(s.clone(), cap), at(s.translated(&off), moved));
        // skip pairs resting on the threshold, where rounding may decide
        let touching = a.contacts.iter().chain(&b.contacts).any(|c| c.penetration < 1e-9);
        if !touching {
            prop_assert_eq!(a.colliding, b.colliding);
            for (x, y) in a.contacts.iter().zip(&b.contacts) {
                prop_assert!((x.penetration - y.penetration).abs() <= 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ik_never_emits_out_of_limit_configs(target_q in config(), seed_q in config()) {
        let c = chain();
        let target = forward_kinematics(&c, &target_q).unwrap();
        let params = IkParams::default().with_max_iters(40).with_restarts(1);
        let emitted = match solve_ik_dls(&c, &seed_q, &target, &params) {
            Ok(s) => [vec![s.q], s.trace].concat(),
            Err(KinematicsError::NotConverged(f)) => [vec![f.best], f.trace].concat(),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for q in emitted {
            prop_assert!(c.limits.contains(&q));
        }
    }

    #[test]
    fn revert_undoes_add(ds in nudges(4)) {
        let scene = SceneModel::sample_empty();
        let mut s = collecting(&scene);
        add_all(&mut s, &ds[..ds.len() - 1]);
        let before = s.clone();
        let t = s.clock + 1.0;
        s.tick(t).unwrap();
        let clock = s.clock;
        if s.add_waypoint(nudged(&s, ds.last().unwrap())).is_ok() {
            s.revert_waypoint().unwrap();
            prop_assert_eq!(s.clock, clock);
            s.clock = before.clock;
            prop_assert_eq!(s, before);
        }
    }

    #[test]
    fn segments_track_waypoints_and_stay_in_limits(ds in nudges(5), reverts in 0usize..3, toggles in 0usize..2) {
        let scene = SceneModel::sample_empty();
        let mut s = collecting(&scene);
        add_all(&mut s, &ds);
        for _ in 0..toggles {
            let t = s.clock + 1.0;
            s.tick(t).unwrap();
            s.toggle_gripper().unwrap();
        }
        for _ in 0..reverts {
            let _ = s.revert_waypoint();
        }
        prop_assert_eq!(s.segments.len(), s.waypoints.len().saturating_sub(1));
        for w in &s.waypoints {
            prop_assert!(s.chain.limits.contains(&w.solved_q));
        }
        if !s.waypoints.is_empty() {
            let frames = s.replay_frames(20.0).unwrap();
            prop_assert_eq!(&frames, &s.clone().replay_frames(20.0).unwrap());
            for f in frames {
                prop_assert!(s.chain.limits.contains(&f.q));
            }
        }
    }

    #[test]
    fn gate_and_invisible_mode_leave_the_path_alone(
        ds in nudges(3),
        hand in (-1.0..1.0_f64, -1.0..1.0_f64, 0.0..1.0_f64),
        shift in 0.0..0.2_f64,
    ) {
        let scene = SceneModel::sample_empty();
        let mut s = collecting(&scene);
        add_all(&mut s, &ds);
        let before = s.clone();
        let mut cam = scene.camera.extrinsics;
        cam.position.x += shift;
        let hand = Vec3::new(hand.0, hand.1, hand.2);
        let a = s.control_gate(Some(&hand), &cam);
        prop_assert_eq!(a, s.control_gate(Some(&hand), &cam));
        prop_assert_eq!(&s, &before);
        s.set_invisible_robot(true);
        prop_assert_eq!(&s.waypoints, &before.waypoints);
        prop_assert_eq!(&s.segments, &before.segments);
        prop_assert_eq!(&s.current_q, &before.current_q);
        prop_assert!(s.marker().is_some());
    }

    #[test]
    fn straight_follow_stays_on_the_line(
        a in (0.35..0.5_f64, -0.2..0.2_f64, 0.2..0.4_f64),
        b in (0.35..0.5_f64, -0.2..0.2_f64, 0.2..0.4_f64),
        step in 0.002..0.01_f64,
    ) {
        let scene = SceneModel::sample_empty();
        let mut s = collecting(&scene);
        let (a, b) = (Vec3::new(a.0, a.1, a.2), Vec3::new(b.0, b.1, b.2));
        let down = s.default_orientation();
        // the arm starts at A; the hand then moves from A to B
        s.tick(1.0).unwrap();
        s.add_waypoint(Pose::new(a, down)).unwrap();
        // tracked hands move millimetres per sample, not decimetres
        let n = ((b - a).norm() / step).ceil().max(2.0) as usize;
        let stream: Vec<(f64, Pose)> = (1..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                (1.0 + u, Pose::new(a.lerp(&b, u), down))
            })
            .collect();
        prop_assert_eq!(s.follow_hand(&stream).unwrap(), FOLLOW_WAYPOINTS);
        let tol = s.ik.pos_tol;
        let dir = b - a;
        for w in &s.waypoints[1..] {
            let p = s.tool_pose(&w.solved_q).unwrap().position;
            // distance from the analytic segment a + u (b - a), u in [0, 1]
            let u = if dir.norm() < 1e-12 { 0.0 } else { ((p - a).dot(&dir) / dir.norm_squared()).clamp(0.0, 1.0) };
            prop_assert!((p - (a + dir * u)).norm() <= tol, "{:?} is off the line", p);
        }
    }

    #[test]
    fn audit_finds_no_less_at_higher_rates(y0 in -0.3..-0.1_f64, y1 in 0.1..0.3_f64, z in 0.05..0.3_f64, rate in 1u32..12, k in 2u32..5) {
        let scene = SceneModel::sample_box();
        let mut s = collecting(&scene);
        let down = s.default_orientation();
        for (t, y) in [(1.0, y0), (2.0, y1)] {
            s.tick(t).unwrap();
            prop_assume!(s.add_waypoint(Pose::new(Vec3::new(0.45, y, z), down)).is_ok());
        }
        let none = BTreeSet::new();
        let lo = audit_replay(&s, &scene, rate as f64, &none).unwrap();
        let hi = audit_replay(&s, &scene, (rate * k) as f64, &none).unwrap();
        prop_assert!(!lo.colliding || hi.colliding);
        prop_assert!(hi.contacts.len() >= lo.contacts.len());
    }

    #[test]
    fn keyframes_agree_with_fk_and_captures_repeat(ds in nudges(3)) {
        let mut scene = SceneModel::sample_box();
        scene.camera.intrinsics = democap_core::scene::CameraIntrinsics { fx: 15.0, fy: 15.0, cx: 8.0, cy: 6.0, width: 16, height: 12 };
        let mut s = collecting(&scene);
        prop_assume!(add_all(&mut s, &ds) > 0);
        let times: Vec<f64> = s.waypoints.iter().map(|w| w.timestamp).collect();
        let r1 = capture(&s, &scene, "t", &times).unwrap();
        let r2 = capture(&s.clone(), &scene, "t", &times).unwrap();
        for k in &r1.keyframes {
            let fk = s.tool_pose(&k.joint_config).unwrap();
            prop_assert!((fk.position - k.position).norm() <= s.ik.pos_tol);
            prop_assert!(fk.orientation.angle_to(&k.orientation) <= s.ik.ori_tol);
        }
        let tmp = tempfile::tempdir().unwrap();
        export(&r1, tmp.path().join("a")).unwrap();
        export(&r2, tmp.path().join("b")).unwrap();
        prop_assert_eq!(common::tree(&tmp.path().join("a")), common::tree(&tmp.path().join("b")));
    }
}

#[test]
fn interleaved_sessions_do_not_interact() {
    let script = |p: f64| {
        vec![
            ("propose_placement", json!({"position": [p, 0.0, 0.0]})),
            ("confirm_placement", json!({})),
            ("add_waypoint", json!({"position": [p + 0.4, -0.1, 0.3]})),
            ("add_waypoint", json!({"position": [p + 0.45, 0.1, 0.25]})),
            ("toggle_gripper", json!({})),
            ("revert", json!({})),
        ]
    };
    let create = |svc: &Service| {
        let out = svc.handle(Envelope::new("create_session", None, 1, json!({})));
        out.last().unwrap().payload["result"]["session_id"].as_str().unwrap().to_owned()
    };
    let (a_cmds, b_cmds) = (script(0.0), script(0.1));

    let alone = |cmds: &[(&str, serde_json::Value)]| {
        let svc = Service::new(chain(), SceneModel::sample_empty(), None);
        let id = create(&svc);
        for (i, (k, p)) in cmds.iter().enumerate() {
            svc.handle(Envelope::new(*k, Some(&id), i as u64 + 2, p.clone()));
        }
        svc.session(&id).unwrap()
    };

    let svc = Service::new(chain(), SceneModel::sample_empty(), None);
    let (a, b) = (create(&svc), create(&svc));
    for (i, ((ka, pa), (kb, pb))) in a_cmds.iter().zip(&b_cmds).enumerate() {
        let seq = i as u64 + 2;
        assert_eq!(svc.handle(Envelope::new(*ka, Some(&a), seq, pa.clone())).last().unwrap().kind, "ack");
        assert_eq!(svc.handle(Envelope::new(*kb, Some(&b), seq, pb.clone())).last().unwrap().kind, "ack");
    }
    assert_eq!(svc.session(&a).unwrap(), alone(&a_cmds));
    assert_eq!(svc.session(&b).unwrap(), alone(&b_cmds));

    // the same interleaving from two threads
    let svc = Arc::new(Service::new(chain(), SceneModel::sample_empty(), None));
    let (a, b) = (create(&svc), create(&svc));
    std::thread::scope(|scope| {
        for (id, cmds) in [(&a, &a_cmds), (&b, &b_cmds)] {
            let svc = svc.clone();
            scope.spawn(move || {
                for (i, (k, p)) in cmds.iter().enumerate() {
                    svc.handle(Envelope::new(*k, Some(id), i as u64 + 2, p.clone()));
                }
            });
        }
    });
    assert_eq!(svc.session(&a).unwrap(), alone(&a_cmds));
    assert_eq!(svc.session(&b).unwrap(), alone(&b_cmds));
}
