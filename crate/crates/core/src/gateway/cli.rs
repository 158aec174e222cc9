//! Headless commands behind the `democap` binary. Each returns the process
//! exit code together with the text report to print.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::geometry::{quat_from_xyzw, Vec3};
use crate::record::{import, inspect, scene_hash, DepthFrame};
use crate::scene::{render_depth, render_rgb, CameraExtrinsics, SceneModel};
use crate::session::{audit_replay, CollectionSession};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_COLLISION: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Replay rate used by `audit` when none is given.
pub const DEFAULT_AUDIT_RATE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliOutcome {
    pub code: i32,
    pub report: String,
}

impl CliOutcome {
    fn new(code: i32, report: impl Into<String>) -> Self {
        Self {
            code,
            report: report.into(),
        }
    }
}

/// Imports the record in `dir` and lists every problem found.
pub fn cli_validate(dir: &Path) -> CliOutcome {
    let findings = inspect(dir);
    if findings.is_empty() {
        return match import(dir) {
            Ok(r) => CliOutcome::new(
                EXIT_OK,
                format!(
                    "{}: valid {} record, {} frames, {} keyframes",
                    dir.display(),
                    r.format_version,
                    r.frames.len(),
                    r.keyframes.len()
                ),
            ),
            Err(e) => CliOutcome::new(EXIT_INVALID, format!("{}: {e}", dir.display())),
        };
    }
    let mut report = format!("{}: invalid record", dir.display());
    for f in findings {
        report.push_str(&format!("\n  {f}"));
    }
    CliOutcome::new(EXIT_INVALID, report)
}

/// Rebuilds the session from a record's keyframes and checks its replay
/// against the scene. Exit 0 when collision-free, 3 on contact.
pub fn cli_audit(dir: &Path, scene_path: &Path, rate_hz: f64, ignore: &[String]) -> CliOutcome {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return CliOutcome::new(EXIT_CONFIG, "rate must be a positive number");
    }
    let scene = match SceneModel::load(scene_path) {
        Ok(s) => s,
        Err(e) => return CliOutcome::new(EXIT_CONFIG, e.to_string()),
    };
    let record = match import(dir) {
        Ok(r) => r,
        Err(e) => return CliOutcome::new(EXIT_INVALID, format!("{}: {e}", dir.display())),
    };
    let mut report = String::new();
    if record.scene_sha256 != scene_hash(&scene) {
        report.push_str("note: scene differs from the one the record was captured in\n");
    }
    let waypoints = record.keyframes.iter().map(|k| k.to_waypoint()).collect();
    let session = match CollectionSession::from_waypoints(
        Arc::new(record.chain.clone()),
        &scene,
        record.base_pose,
        record.saved_extrinsics,
        waypoints,
    ) {
        Ok(s) => s,
        Err(e) => return CliOutcome::new(EXIT_INVALID, format!("{report}cannot rebuild session: {e}")),
    };
    let ignore: BTreeSet<String> = ignore.iter().cloned().collect();
    let audit = match audit_replay(&session, &scene, rate_hz, &ignore) {
        Ok(a) => a,
        Err(e) => return CliOutcome::new(EXIT_INVALID, format!("{report}audit failed: {e}")),
    };
    if !audit.colliding {
        report.push_str(&format!(
            "collision-free: {} keyframes replayed at {rate_hz} Hz",
            record.keyframes.len()
        ));
        return CliOutcome::new(EXIT_OK, report);
    }
    // one line per (link, obstacle): time span and deepest penetration
    let mut groups: BTreeMap<(usize, &str), (f64, f64, f64, usize)> = BTreeMap::new();
    for c in &audit.contacts {
        let g = groups
            .entry((c.link, c.obstacle.as_str()))
            .or_insert((c.time, c.time, 0.0, 0));
        g.0 = g.0.min(c.time);
        g.1 = g.1.max(c.time);
        g.2 = g.2.max(c.penetration);
        g.3 += 1;
    }
    report.push_str(&format!("colliding: {} contacts", audit.contacts.len()));
    for ((link, obstacle), (t0, t1, depth, n)) in groups {
        report.push_str(&format!(
            "\n  link {link} x {obstacle}: t = {t0:.3}..{t1:.3} s, max penetration {depth:.4} m, {n} frames"
        ));
    }
    CliOutcome::new(EXIT_COLLISION, report)
}

/// Camera pose from `px py pz qx qy qz qw`.
pub fn camera_from_args(pose: &[f64; 7]) -> Option<CameraExtrinsics> {
    let q = quat_from_xyzw([pose[3], pose[4], pose[5], pose[6]], 1e-6)?;
    let p = Vec3::new(pose[0], pose[1], pose[2]);
    p.iter().all(|c| c.is_finite()).then(|| CameraExtrinsics::new(p, q))
}

/// Renders `depth.raw` and `rgb.ppm` into `out` from the given camera pose
/// (the scene's own camera when `None`).
pub fn cli_render(scene_path: &Path, pose: Option<&[f64; 7]>, out: &Path) -> Result<(CliOutcome, Vec<PathBuf>), CliOutcome> {
    let scene = SceneModel::load(scene_path).map_err(|e| CliOutcome::new(EXIT_CONFIG, e.to_string()))?;
    let camera = match pose {
        Some(p) => camera_from_args(p).ok_or_else(|| CliOutcome::new(EXIT_CONFIG, "pose quaternion must be unit length"))?,
        None => scene.camera.extrinsics,
    };
    let depth = DepthFrame::from(&render_depth(&scene, &camera));
    let rgb = render_rgb(&scene, &camera);
    let io = |p: &Path, e: std::io::Error| CliOutcome::new(EXIT_CONFIG, format!("{}: {e}", p.display()));
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let depth_path = out.join("depth.raw");
    let rgb_path = out.join("rgb.ppm");
    std::fs::write(&depth_path, depth.to_bytes()).map_err(|e| io(&depth_path, e))?;
    std::fs::write(&rgb_path, rgb.to_ppm()).map_err(|e| io(&rgb_path, e))?;
    let report = format!(
        "wrote {} and {} ({}x{})",
        depth_path.display(),
        rgb_path.display(),
        depth.width,
        depth.height
    );
    Ok((CliOutcome::new(EXIT_OK, report), vec![depth_path, rgb_path]))
}
