//! Independent reference implementations and random generators shared by
//! the integration tests. Nothing here calls into the code under test except
//! for plain data types.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use democap_core::geometry::{Pose, UnitQuat, Vec3};
use democap_core::kinematics::{JointConfig, KinematicChain};
use democap_core::scene::{
    Camera, CameraExtrinsics, CameraIntrinsics, LinkCapsule, Primitive, SceneModel, Shape, TablePlane,
};
use nalgebra::{Matrix3, Unit};
use rand::Rng;

pub type M4 = [[f64; 4]; 4];

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn test_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

// ---------------------------------------------------------------- kinematics

fn matmul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Homogeneous matrix of a translation and an `[x, y, z, w]` quaternion.
fn homogeneous(p: [f64; 3], q: [f64; 4]) -> M4 {
    let [x, y, z, w] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w), p[0]],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w), p[1]],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y), p[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Rodrigues rotation about a unit axis.
fn axis_angle(a: [f64; 3], t: f64) -> M4 {
    let (s, c) = t.sin_cos();
    let v = 1.0 - c;
    let [x, y, z] = a;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s, 0.0],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s, 0.0],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn pose_to_m4(p: &Pose) -> M4 {
    let c = p.orientation.coords;
    homogeneous([p.position.x, p.position.y, p.position.z], [c.x, c.y, c.z, c.w])
}

/// Tool transform by multiplying one 4x4 matrix per joint origin, joint
/// rotation and tool offset.
pub fn fk_matrix(chain: &KinematicChain, q: &[f64]) -> M4 {
    let mut t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    for (j, &angle) in chain.joints.iter().zip(q) {
        t = matmul(&t, &pose_to_m4(&j.origin));
        let a = j.axis.into_inner();
        t = matmul(&t, &axis_angle([a.x, a.y, a.z], angle));
    }
    matmul(&t, &pose_to_m4(&chain.tool))
}

pub fn m4_position(m: &M4) -> Vec3 {
    Vec3::new(m[0][3], m[1][3], m[2][3])
}

pub fn m4_rotation(m: &M4) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

/// 6xN Jacobian by central differences of the matrix oracle. The angular
/// rows come from the skew part of `dR/dq * R^T`.
pub fn jacobian_fd(chain: &KinematicChain, q: &[f64], h: f64) -> Vec<[f64; 6]> {
    let r0 = m4_rotation(&fk_matrix(chain, q));
    (0..q.len())
        .map(|i| {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let (mp, mm) = (fk_matrix(chain, &qp), fk_matrix(chain, &qm));
            let dp = (m4_position(&mp) - m4_position(&mm)) / (2.0 * h);
            let w = (m4_rotation(&mp) - m4_rotation(&mm)) / (2.0 * h) * r0.transpose();
            [
                dp.x,
                dp.y,
                dp.z,
                0.5 * (w[(2, 1)] - w[(1, 2)]),
                0.5 * (w[(0, 2)] - w[(2, 0)]),
                0.5 * (w[(1, 0)] - w[(0, 1)]),
            ]
        })
        .collect()
}

pub fn random_config<R: Rng>(rng: &mut R, chain: &KinematicChain) -> JointConfig {
    JointConfig::new(chain.limits.iter().map(|r| rng.gen_range(r.min..=r.max)).collect())
}

/// Geodesic angle between two rotation matrices.
pub fn rotation_gap(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

// ------------------------------------------------------------------ raycast

const EPS_T: f64 = 1e-9;

/// Orthonormal frame with `w` as its third axis.
fn frame_about(w: &Vec3) -> (Vec3, Vec3) {
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = w.cross(&helper).normalize();
    (u, w.cross(&u))
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        return if b.abs() < 1e-300 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let s = disc.sqrt();
    vec![(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)]
}

fn sphere_ts(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Vec<f64> {
    let oc = o - c;
    quadratic_roots(d.dot(d), 2.0 * oc.dot(d), oc.dot(&oc) - r * r)
}

/// Ray parameters where the ray meets a plane through `p` with normal `n`.
fn plane_t(o: &Vec3, d: &Vec3, p: &Vec3, n: &Vec3) -> Option<f64> {
    let den = n.dot(d);
    (den.abs() > 1e-300).then(|| n.dot(&(p - o)) / den)
}

/// Every surface crossing of the ray with a shape, any sign of t.
fn shape_ts(o: &Vec3, d: &Vec3, shape: &Shape) -> Vec<f64> {
    match shape {
        Shape::Sphere { center, radius } => sphere_ts(o, d, center, *radius),
        Shape::Box {
            center,
            half_extents,
            orientation,
        } => {
            let axes = [orientation * Vec3::x(), orientation * Vec3::y(), orientation * Vec3::z()];
            let mut ts = Vec::new();
            for i in 0..3 {
                for sign in [-1.0, 1.0] {
                    let n = axes[i] * sign;
                    let Some(t) = plane_t(o, d, &(center + n * half_extents[i]), &n) else {
                        continue;
                    };
                    let local = o + d * t - center;
                    let inside = (0..3).filter(|&k| k != i).all(|k| local.dot(&axes[k]).abs() <= half_extents[k] + 1e-12);
                    if inside {
                        ts.push(t);
                    }
                }
            }
            ts
        }
        Shape::Cylinder {
            base_center,
            axis,
            radius,
            height,
        } => tube_ts(o, d, base_center, axis, *radius, *height, true),
    }
}

/// Side of a finite cylinder, optionally with both end discs.
fn tube_ts(o: &Vec3, d: &Vec3, base: &Vec3, axis: &Unit<Vec3>, r: f64, h: f64, caps: bool) -> Vec<f64> {
    let (u, v) = frame_about(axis);
    let rel = o - base;
    let (ou, ov, dw) = (rel.dot(&u), rel.dot(&v), d.dot(axis));
    let (du, dv) = (d.dot(&u), d.dot(&v));
    let mut ts: Vec<f64> = quadratic_roots(du * du + dv * dv, 2.0 * (ou * du + ov * dv), ou * ou + ov * ov - r * r)
        .into_iter()
        .filter(|t| {
            let w = rel.dot(axis) + dw * t;
            (0.0..=h).contains(&w)
        })
        .collect();
    if caps {
        for off in [0.0, h] {
            let p = base + axis.into_inner() * off;
            if let Some(t) = plane_t(o, d, &p, axis) {
                let q = o + d * t - p;
                if q.norm() <= r {
                    ts.push(t);
                }
            }
        }
    }
    ts
}

fn capsule_ts(o: &Vec3, d: &Vec3, c: &LinkCapsule) -> Vec<f64> {
    let mut ts = sphere_ts(o, d, &c.p0, c.radius);
    ts.extend(sphere_ts(o, d, &c.p1, c.radius));
    let len = (c.p1 - c.p0).norm();
    if len > 1e-12 {
        let axis = Unit::new_normalize(c.p1 - c.p0);
        ts.extend(tube_ts(o, d, &c.p0, &axis, c.radius, len, false));
    }
    ts
}

/// Depth along the camera axis of the first surface a pixel ray meets:
/// every root of every surface is computed and the smallest positive one kept.
pub fn brute_force_depth(scene: &SceneModel, camera: &CameraExtrinsics, arm: &[LinkCapsule], u: u32, v: u32) -> f64 {
    let k = &scene.camera.intrinsics;
    let local = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
    let rot = camera.orientation.to_rotation_matrix();
    let d = rot * local;
    let o = camera.position;
    let mut ts = Vec::new();
    ts.extend(plane_t(&o, &d, &scene.table.point, &scene.table.normal));
    for p in &scene.obstacles {
        ts.extend(shape_ts(&o, &d, &p.shape));
    }
    for c in arm {
        ts.extend(capsule_ts(&o, &d, c));
    }
    let best = ts.into_iter().filter(|t| *t > EPS_T).fold(f64::INFINITY, f64::min);
    if best.is_infinite() {
        return best;
    }
    // depth = camera-frame z of the hit point
    (rot.transpose() * (d * best)).z
}

// ---------------------------------------------------------------- distance

/// Signed distance from a point to a solid primitive.
pub fn point_sdf(p: &Vec3, shape: &Shape) -> f64 {
    match shape {
        Shape::Sphere { center, radius } => (p - center).norm() - radius,
        Shape::Box {
            center,
            half_extents,
            orientation,
        } => {
            let l = orientation.inverse() * (p - center);
            let q = Vec3::new(l.x.abs(), l.y.abs(), l.z.abs()) - half_extents;
            let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
            outside + q.max().min(0.0)
        }
        Shape::Cylinder {
            base_center,
            axis,
            radius,
            height,
        } => {
            let rel = p - base_center;
            let along = rel.dot(axis) - height / 2.0;
            let radial = (rel - axis.into_inner() * rel.dot(axis)).norm();
            let dx = radial - radius;
            let dy = along.abs() - height / 2.0;
            dx.max(dy).min(0.0) + (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
        }
    }
}

/// Minimum of `point_sdf` over `n` evenly spaced points of the segment.
pub fn sampled_segment_distance(p0: &Vec3, p1: &Vec3, shape: &Shape, n: usize) -> f64 {
    (0..n)
        .map(|i| point_sdf(&p0.lerp(p1, i as f64 / (n - 1) as f64), shape))
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- scenes

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuat {
    UnitQuat::from_axis_angle(&Unit::new_normalize(random_unit(rng)), rng.gen_range(0.0..std::f64::consts::PI))
}

pub fn random_shape<R: Rng>(rng: &mut R, center: Vec3) -> Shape {
    match rng.gen_range(0..3) {
        0 => Shape::Sphere {
            center,
            radius: rng.gen_range(0.02..0.15),
        },
        1 => Shape::Box {
            center,
            half_extents: Vec3::new(rng.gen_range(0.02..0.12), rng.gen_range(0.02..0.12), rng.gen_range(0.02..0.12)),
            orientation: random_rotation(rng),
        },
        _ => Shape::Cylinder {
            base_center: center,
            axis: Unit::new_normalize(random_unit(rng)),
            radius: rng.gen_range(0.02..0.1),
            height: rng.gen_range(0.04..0.25),
        },
    }
}

/// 64x48 camera somewhere on a ring around the workspace, one to five
/// obstacles near the arm.
pub fn random_scene<R: Rng>(rng: &mut R) -> SceneModel {
    let n = rng.gen_range(1..=5);
    let obstacles = (0..n)
        .map(|i| {
            let center = Vec3::new(rng.gen_range(0.2..0.7), rng.gen_range(-0.35..0.35), rng.gen_range(0.0..0.3));
            Primitive {
                label: format!("obj{i}"),
                shape: random_shape(rng, center),
            }
        })
        .collect();
    let heading = rng.gen_range(-1.2..1.2_f64);
    let dist = rng.gen_range(1.1..1.8);
    let eye = Vec3::new(0.4 + dist * heading.cos(), dist * heading.sin(), rng.gen_range(0.5..1.2));
    let target = Vec3::new(rng.gen_range(0.3..0.5), rng.gen_range(-0.1..0.1), rng.gen_range(0.0..0.2));
    SceneModel {
        table: TablePlane::default(),
        obstacles,
        camera: Camera {
            intrinsics: CameraIntrinsics {
                fx: 60.0,
                fy: 60.0,
                cx: 32.0,
                cy: 24.0,
                width: 64,
                height: 48,
            },
            extrinsics: CameraExtrinsics::look_at(eye, target, Vec3::z()),
        },
    }
}

/// Walks a directory and returns (relative path, bytes) for every file.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
