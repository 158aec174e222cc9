use serde::{Deserialize, Serialize};

use super::{CameraExtrinsics, CameraIntrinsics, LinkCapsule, SceneModel, Shape, TablePlane};
use crate::geometry::{UnitQuat, Vec3};

/// Hits closer than this (in depth units) are ignored.
const T_MIN: f64 = 1e-9;

pub const BACKGROUND: [u8; 3] = [30, 30, 40];
const TABLE_COLOR: [u8; 3] = [168, 136, 100];
const ARM_COLOR: [u8; 3] = [205, 205, 210];

/// Fraction of the base color a surface keeps when facing away from the light.
pub const AMBIENT: f64 = 0.2;
/// Direction towards the light (unnormalized).
pub const LIGHT_DIR: [f64; 3] = [0.3, 0.2, 1.0];

fn light_dir() -> Vec3 {
    Vec3::from(LIGHT_DIR).normalize()
}

/// Ray `origin + t * dir`; `dir` need not be unit length.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Outward unit surface normal.
    pub normal: Vec3,
}

fn nearer(a: Option<Hit>, b: Option<Hit>) -> Option<Hit> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.t < x.t { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn hit_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<Hit> {
    let oc = ray.origin - center;
    let a = ray.dir.norm_squared();
    let half_b = oc.dot(&ray.dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = [(-half_b - sq) / a, (-half_b + sq) / a]
        .into_iter()
        .find(|t| *t >= T_MIN)?;
    Some(Hit {
        t,
        normal: (ray.at(t) - center) / radius,
    })
}

fn hit_box(ray: &Ray, center: &Vec3, half: &Vec3, orientation: &UnitQuat) -> Option<Hit> {
    let inv = orientation.inverse();
    let o = inv * (ray.origin - center);
    let d = inv * ray.dir;
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut near_axis, mut far_axis) = (0, 0);
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let mut t0 = (-half[i] - o[i]) / d[i];
        let mut t1 = (half[i] - o[i]) / d[i];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = i;
        }
        if t1 < t_far {
            t_far = t1;
            far_axis = i;
        }
    }
    if t_near > t_far || t_far < T_MIN {
        return None;
    }
    let (t, axis, sign) = if t_near >= T_MIN {
        (t_near, near_axis, -d[near_axis].signum())
    } else {
        (t_far, far_axis, d[far_axis].signum())
    };
    let mut n = Vec3::zeros();
    n[axis] = sign;
    Some(Hit {
        t,
        normal: orientation * n,
    })
}

/// Lateral surface of a cylinder, `0 <= h <= height` along `axis` from `base`.
fn hit_tube(ray: &Ray, base: &Vec3, axis: &Vec3, radius: f64, height: f64) -> Option<Hit> {
    let o = ray.origin - base;
    let (od, dd) = (o.dot(axis), ray.dir.dot(axis));
    let o_perp = o - axis * od;
    let d_perp = ray.dir - axis * dd;
    let a = d_perp.norm_squared();
    if a == 0.0 {
        return None;
    }
    let half_b = o_perp.dot(&d_perp);
    let c = o_perp.norm_squared() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-half_b - sq) / a, (-half_b + sq) / a]
        .into_iter()
        .filter(|t| *t >= T_MIN)
        .find(|t| {
            let h = od + t * dd;
            (0.0..=height).contains(&h)
        })
        .map(|t| Hit {
            t,
            normal: (o_perp + d_perp * t) / radius,
        })
}

fn hit_disc(ray: &Ray, center: &Vec3, normal: &Vec3, radius: f64) -> Option<Hit> {
    let denom = normal.dot(&ray.dir);
    if denom == 0.0 {
        return None;
    }
    let t = normal.dot(&(center - ray.origin)) / denom;
    if t < T_MIN || (ray.at(t) - center).norm_squared() > radius * radius {
        return None;
    }
    Some(Hit { t, normal: *normal })
}

fn hit_cylinder(ray: &Ray, base: &Vec3, axis: &Vec3, radius: f64, height: f64) -> Option<Hit> {
    let top = base + axis * height;
    let side = hit_tube(ray, base, axis, radius, height);
    let bottom = hit_disc(ray, base, &-axis, radius);
    let cap = hit_disc(ray, &top, axis, radius);
    nearer(nearer(side, bottom), cap)
}

fn hit_capsule(ray: &Ray, cap: &LinkCapsule) -> Option<Hit> {
    let seg = cap.p1 - cap.p0;
    let len = seg.norm();
    let ends = nearer(
        hit_sphere(ray, &cap.p0, cap.radius),
        hit_sphere(ray, &cap.p1, cap.radius),
    );
    if len == 0.0 {
        return ends;
    }
    nearer(ends, hit_tube(ray, &cap.p0, &(seg / len), cap.radius, len))
}

fn hit_plane(ray: &Ray, table: &TablePlane) -> Option<Hit> {
    let n = table.normal.into_inner();
    let denom = n.dot(&ray.dir);
    if denom == 0.0 {
        return None;
    }
    let t = n.dot(&(table.point - ray.origin)) / denom;
    (t >= T_MIN).then_some(Hit { t, normal: n })
}

pub(crate) fn hit_shape(ray: &Ray, shape: &Shape) -> Option<Hit> {
    match shape {
        Shape::Sphere { center, radius } => hit_sphere(ray, center, *radius),
        Shape::Box {
            center,
            half_extents,
            orientation,
        } => hit_box(ray, center, half_extents, orientation),
        Shape::Cylinder {
            base_center,
            axis,
            radius,
            height,
        } => hit_cylinder(ray, base_center, axis, *radius, *height),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Table,
    Obstacle(usize),
    Arm,
}

/// Nearest hit of `ray` against the table, the obstacles and the arm capsules.
pub fn intersect_ray(scene: &SceneModel, arm: &[LinkCapsule], ray: &Ray) -> Option<Hit> {
    nearest(scene, arm, ray).map(|(h, _)| h)
}

fn nearest(scene: &SceneModel, arm: &[LinkCapsule], ray: &Ray) -> Option<(Hit, Surface)> {
    let mut best: Option<(Hit, Surface)> = hit_plane(ray, &scene.table).map(|h| (h, Surface::Table));
    let mut consider = |hit: Option<Hit>, s: Surface| {
        if let Some(h) = hit {
            if best.is_none_or(|(b, _)| h.t < b.t) {
                best = Some((h, s));
            }
        }
    };
    for (i, p) in scene.obstacles.iter().enumerate() {
        consider(hit_shape(ray, &p.shape), Surface::Obstacle(i));
    }
    for cap in arm {
        consider(hit_capsule(ray, cap), Surface::Arm);
    }
    best
}

/// Ray through pixel `(u, v)`. Direction has unit z in the camera frame, so
/// the hit parameter equals depth along the optical axis.
pub(crate) fn pixel_ray(intr: &CameraIntrinsics, extr: &CameraExtrinsics, u: u32, v: u32) -> Ray {
    let d_cam = Vec3::new(
        (u as f64 - intr.cx) / intr.fx,
        (v as f64 - intr.cy) / intr.fy,
        1.0,
    );
    Ray {
        origin: extr.position,
        dir: extr.orientation * d_cam,
    }
}

/// Per-pixel depth along the camera's forward axis, row-major; `+inf` = no hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.depths[(v * self.width + u) as usize]
    }
}

/// 8-bit RGB, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v * self.width + u) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses the exact layout written by [`RgbImage::to_ppm`].
    pub fn from_ppm(bytes: &[u8]) -> Option<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() || bytes[pos] != b'\n' && bytes[pos] != b' ' {
                return None;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
            pos += 1;
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return None;
        }
        let width: u32 = fields[1].parse().ok()?;
        let height: u32 = fields[2].parse().ok()?;
        let data = &bytes[pos..];
        if data.len() != 3 * width as usize * height as usize {
            return None;
        }
        let img = Self {
            width,
            height,
            data: data.to_vec(),
        };
        // reject header spellings that would not re-encode identically
        (img.to_ppm() == bytes).then_some(img)
    }
}

fn label_color(label: &str) -> [u8; 3] {
    // FNV-1a
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    let c = |shift: u32| 64 + ((h >> shift) & 0xff) as u8 % 160;
    [c(0), c(8), c(16)]
}

/// Lambert shading with a fixed directional light: each channel is
/// `base * (AMBIENT + (1 - AMBIENT) * max(0, n . l))`, rounded.
pub fn shade(base: [u8; 3], normal: &Vec3) -> [u8; 3] {
    let cos = normal.dot(&light_dir()).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * cos;
    base.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8)
}

pub fn render_depth(scene: &SceneModel, camera: &CameraExtrinsics) -> DepthImage {
    render_depth_with(scene, camera, &[])
}

/// Depth image of the scene with the arm capsules included.
pub fn render_depth_with(scene: &SceneModel, camera: &CameraExtrinsics, arm: &[LinkCapsule]) -> DepthImage {
    let intr = &scene.camera.intrinsics;
    let mut depths = Vec::with_capacity(intr.pixel_count());
    for v in 0..intr.height {
        for u in 0..intr.width {
            let ray = pixel_ray(intr, camera, u, v);
            depths.push(intersect_ray(scene, arm, &ray).map_or(f64::INFINITY, |h| h.t));
        }
    }
    DepthImage {
        width: intr.width,
        height: intr.height,
        depths,
    }
}

pub fn render_rgb(scene: &SceneModel, camera: &CameraExtrinsics) -> RgbImage {
    render_rgb_with(scene, camera, &[])
}

/// Flat-shaded color image; obstacles get a fixed color derived from their label.
pub fn render_rgb_with(scene: &SceneModel, camera: &CameraExtrinsics, arm: &[LinkCapsule]) -> RgbImage {
    let intr = &scene.camera.intrinsics;
    let mut data = Vec::with_capacity(3 * intr.pixel_count());
    for v in 0..intr.height {
        for u in 0..intr.width {
            let ray = pixel_ray(intr, camera, u, v);
            let px = match nearest(scene, arm, &ray) {
                None => BACKGROUND,
                Some((hit, surface)) => {
                    let base = match surface {
                        Surface::Table => TABLE_COLOR,
                        Surface::Obstacle(i) => label_color(&scene.obstacles[i].label),
                        Surface::Arm => ARM_COLOR,
                    };
                    // light the side the camera sees
                    let n = if hit.normal.dot(&ray.dir) > 0.0 {
                        -hit.normal
                    } else {
                        hit.normal
                    };
                    shade(base, &n)
                }
            };
            data.extend_from_slice(&px);
        }
    }
    RgbImage {
        width: intr.width,
        height: intr.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Primitive};

    fn scene_with(obstacles: Vec<Primitive>, camera: CameraExtrinsics) -> SceneModel {
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
                extrinsics: camera,
            },
        }
    }

    #[test]
    fn sphere_on_axis_center_depth() {
        // camera at z = 2 looking along +x, table far below
        let cam = CameraExtrinsics::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.0, 0.0, 2.0), Vec3::z());
        let ball = Primitive {
            label: "ball".into(),
            shape: Shape::Sphere {
                center: Vec3::new(1.0, 0.0, 2.0),
                radius: 0.1,
            },
        };
        let scene = scene_with(vec![ball], cam);
        let depth = render_depth(&scene, &cam);
        assert!((depth.get(32, 24) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_looking_down() {
        let cam = CameraExtrinsics::look_at(Vec3::new(0.2, 0.1, 0.8), Vec3::new(0.2, 0.1, 0.0), Vec3::x());
        let scene = scene_with(vec![], cam);
        let depth = render_depth(&scene, &cam);
        assert!((depth.get(32, 24) - 0.8).abs() < 1e-12);
        // flat plane, perpendicular view: every pixel has the same depth
        assert!(depth.depths.iter().all(|d| (d - 0.8).abs() < 1e-12));
    }

    #[test]
    fn empty_sky_is_background() {
        let cam = CameraExtrinsics::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0), Vec3::x());
        let scene = scene_with(vec![], cam);
        let rgb = render_rgb(&scene, &cam);
        assert!(rgb.data.chunks(3).all(|px| px == BACKGROUND));
        assert!(render_depth(&scene, &cam).depths.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn box_hit_from_inside_uses_exit_face() {
        let ray = Ray {
            origin: Vec3::zeros(),
            dir: Vec3::x(),
        };
        let h = hit_box(&ray, &Vec3::zeros(), &Vec3::new(0.5, 1.0, 1.0), &UnitQuat::identity()).unwrap();
        assert!((h.t - 0.5).abs() < 1e-15);
        assert_eq!(h.normal, Vec3::x());
    }

    #[test]
    fn cylinder_cap_and_side() {
        let base = Vec3::zeros();
        let down = Ray {
            origin: Vec3::new(0.0, 0.0, 2.0),
            dir: -Vec3::z(),
        };
        let h = hit_cylinder(&down, &base, &Vec3::z(), 0.2, 1.0).unwrap();
        assert!((h.t - 1.0).abs() < 1e-15);
        assert_eq!(h.normal, Vec3::z());
        let side = Ray {
            origin: Vec3::new(-2.0, 0.0, 0.5),
            dir: Vec3::x(),
        };
        let h = hit_cylinder(&side, &base, &Vec3::z(), 0.2, 1.0).unwrap();
        assert!((h.t - 1.8).abs() < 1e-12);
    }

    #[test]
    fn capsule_end_sphere() {
        let cap = LinkCapsule {
            p0: Vec3::zeros(),
            p1: Vec3::new(0.0, 0.0, 0.5),
            radius: 0.1,
        };
        let ray = Ray {
            origin: Vec3::new(0.0, 0.0, 2.0),
            dir: -Vec3::z(),
        };
        assert!((hit_capsule(&ray, &cap).unwrap().t - 1.4).abs() < 1e-12);
    }

    #[test]
    fn ppm_round_trip_and_rejects_truncation() {
        let img = RgbImage {
            width: 2,
            height: 1,
            data: vec![1, 2, 3, 4, 5, 6],
        };
        let bytes = img.to_ppm();
        assert_eq!(RgbImage::from_ppm(&bytes), Some(img));
        assert!(RgbImage::from_ppm(&bytes[..bytes.len() - 1]).is_none());
        assert!(RgbImage::from_ppm(b"P3\n2 1\n255\n123456").is_none());
    }
}
