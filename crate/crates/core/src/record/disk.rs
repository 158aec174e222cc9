use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{
    emit_keyframes, sha256_hex, DemonstrationRecord, DepthFrame, FrameCapture, Keyframe, RecordError,
    FORMAT_VERSION,
};
use crate::geometry::Pose;
use crate::kinematics::KinematicChain;
use crate::scene::{CameraExtrinsics, CameraIntrinsics, RgbImage};

pub const MANIFEST: &str = "manifest";
pub const MANIFEST_SUM: &str = "manifest.sha256";
const KEYFRAMES: &str = "keyframes.txt";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    time: f64,
    camera: CameraExtrinsics,
    depth: FileEntry,
    rgb: FileEntry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: String,
    task: String,
    chain_sha256: String,
    scene_sha256: String,
    intrinsics: CameraIntrinsics,
    saved_extrinsics: CameraExtrinsics,
    base_pose: Pose,
    frame_count: usize,
    keyframe_count: usize,
    frames: Vec<FrameEntry>,
    keyframes_file: FileEntry,
    keyframes: Vec<Keyframe>,
    chain: KinematicChain,
}

fn depth_name(i: usize) -> String {
    format!("depth/{i:04}.raw")
}

fn rgb_name(i: usize) -> String {
    format!("rgb/{i:04}.ppm")
}

fn io_err(path: &Path, e: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Every file of the exported layout, relative path first, in write order.
fn layout(record: &DemonstrationRecord) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (i, f) in record.frames.iter().enumerate() {
        let depth = f.depth.to_bytes();
        let rgb = f.rgb.to_ppm();
        entries.push(FrameEntry {
            time: f.time,
            camera: f.camera,
            depth: FileEntry {
                path: depth_name(i),
                sha256: sha256_hex(&depth),
            },
            rgb: FileEntry {
                path: rgb_name(i),
                sha256: sha256_hex(&rgb),
            },
        });
        files.push((depth_name(i), depth));
        files.push((rgb_name(i), rgb));
    }
    let keyframes_txt = emit_keyframes(&record.keyframes).into_bytes();
    let manifest = Manifest {
        format_version: record.format_version.clone(),
        task: record.task.clone(),
        chain_sha256: record.chain_sha256.clone(),
        scene_sha256: record.scene_sha256.clone(),
        intrinsics: record.intrinsics,
        saved_extrinsics: record.saved_extrinsics,
        base_pose: record.base_pose,
        frame_count: record.frames.len(),
        keyframe_count: record.keyframes.len(),
        frames: entries,
        keyframes_file: FileEntry {
            path: KEYFRAMES.into(),
            sha256: sha256_hex(&keyframes_txt),
        },
        keyframes: record.keyframes.clone(),
        chain: record.chain.clone(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    let sum = format!("{}  {MANIFEST}\n", sha256_hex(&manifest_bytes)).into_bytes();
    files.push((KEYFRAMES.into(), keyframes_txt));
    files.push((MANIFEST.into(), manifest_bytes));
    files.push((MANIFEST_SUM.into(), sum));
    files
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    dir.with_file_name(format!(".{name}.{tag}-{}-{n}", std::process::id()))
}

/// Writes the record under `dir` and returns the manifest path.
///
/// Files are written to a temporary sibling directory which then replaces
/// `dir`. An existing `dir` is only replaced if it is empty or holds a record.
pub fn export(record: &DemonstrationRecord, dir: impl AsRef<Path>) -> Result<PathBuf, RecordError> {
    let dir = dir.as_ref();
    record.validate()?;
    if dir.file_name().is_none() {
        return Err(RecordError::InvalidArgument(format!("{} is not a directory name", dir.display())));
    }
    let replace = match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() && !dir.join(MANIFEST).is_file() {
                return Err(RecordError::Io {
                    path: dir.display().to_string(),
                    reason: "destination exists and is not a record".into(),
                });
            }
            true
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(io_err(dir, e)),
    };
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = sibling(dir, "tmp");
    let write_all = || -> Result<(), RecordError> {
        for sub in ["depth", "rgb"] {
            let p = tmp.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        for (name, bytes) in layout(record) {
            let p = tmp.join(&name);
            fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if replace {
        let old = sibling(dir, "old");
        fs::rename(dir, &old).map_err(|e| io_err(dir, e))?;
        if let Err(e) = fs::rename(&tmp, dir) {
            let _ = fs::rename(&old, dir);
            let _ = fs::remove_dir_all(&tmp);
            return Err(io_err(dir, e));
        }
        let _ = fs::remove_dir_all(&old);
    } else {
        fs::rename(&tmp, dir).map_err(|e| {
            let _ = fs::remove_dir_all(&tmp);
            io_err(dir, e)
        })?;
    }
    Ok(dir.join(MANIFEST))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingKind {
    Missing,
    Checksum,
    Dimension,
    Version,
    Format,
}

/// One problem found while validating a record directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub file: String,
    pub kind: FindingKind,
    pub detail: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            FindingKind::Missing => "missing",
            FindingKind::Checksum => "checksum mismatch",
            FindingKind::Dimension => "dimension mismatch",
            FindingKind::Version => "unsupported version",
            FindingKind::Format => "malformed",
        };
        write!(f, "{}: {kind}: {}", self.file, self.detail)
    }
}

impl Finding {
    fn new(file: impl Into<String>, kind: FindingKind, detail: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            kind,
            detail: detail.into(),
        }
    }

    fn into_error(self, dir: &Path) -> RecordError {
        match self.kind {
            FindingKind::Version => RecordError::UnsupportedVersion(self.detail),
            FindingKind::Missing => RecordError::Io {
                path: dir.join(&self.file).display().to_string(),
                reason: self.detail,
            },
            _ => RecordError::Corrupt {
                file: self.file,
                reason: self.detail,
            },
        }
    }
}

fn read(dir: &Path, name: &str, findings: &mut Vec<Finding>) -> Option<Vec<u8>> {
    match fs::read(dir.join(name)) {
        Ok(b) => Some(b),
        Err(e) => {
            findings.push(Finding::new(name, FindingKind::Missing, e.to_string()));
            None
        }
    }
}

/// Reads `entry.path`, which must be `expected`, and checks its digest.
fn read_checked(dir: &Path, entry: &FileEntry, expected: &str, findings: &mut Vec<Finding>) -> Option<Vec<u8>> {
    if entry.path != expected {
        findings.push(Finding::new(
            expected,
            FindingKind::Format,
            format!("manifest lists {:?}", entry.path),
        ));
        return None;
    }
    let bytes = read(dir, expected, findings)?;
    if sha256_hex(&bytes) != entry.sha256 {
        findings.push(Finding::new(expected, FindingKind::Checksum, "content does not match the manifest"));
        return None;
    }
    Some(bytes)
}

fn load(dir: &Path, findings: &mut Vec<Finding>) -> Option<DemonstrationRecord> {
    let manifest_bytes = read(dir, MANIFEST, findings)?;
    let sum = read(dir, MANIFEST_SUM, findings)?;
    let want = format!("{}  {MANIFEST}\n", sha256_hex(&manifest_bytes));
    if sum != want.as_bytes() {
        findings.push(Finding::new(MANIFEST, FindingKind::Checksum, format!("does not match {MANIFEST_SUM}")));
        return None;
    }
    let value: serde_json::Value = match serde_json::from_slice(&manifest_bytes) {
        Ok(v) => v,
        Err(e) => {
            findings.push(Finding::new(MANIFEST, FindingKind::Format, e.to_string()));
            return None;
        }
    };
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => {
            findings.push(Finding::new(MANIFEST, FindingKind::Version, other));
            return None;
        }
        None => {
            findings.push(Finding::new(MANIFEST, FindingKind::Format, "no format_version"));
            return None;
        }
    }
    let m: Manifest = match serde_json::from_value(value) {
        Ok(m) => m,
        Err(e) => {
            findings.push(Finding::new(MANIFEST, FindingKind::Format, e.to_string()));
            return None;
        }
    };
    if m.frame_count != m.frames.len() || m.keyframe_count != m.keyframes.len() {
        findings.push(Finding::new(MANIFEST, FindingKind::Format, "counts do not match the listed entries"));
        return None;
    }
    let (w, h) = (m.intrinsics.width, m.intrinsics.height);
    let mut frames = Vec::with_capacity(m.frames.len());
    for (i, e) in m.frames.iter().enumerate() {
        let depth = read_checked(dir, &e.depth, &depth_name(i), findings).and_then(|b| {
            let d = DepthFrame::from_bytes(w, h, &b);
            if d.is_none() {
                findings.push(Finding::new(
                    depth_name(i),
                    FindingKind::Dimension,
                    format!("{} bytes, expected {} for {w}x{h}", b.len(), 4 * w as usize * h as usize),
                ));
            }
            d
        });
        let rgb = read_checked(dir, &e.rgb, &rgb_name(i), findings).and_then(|b| match RgbImage::from_ppm(&b) {
            Some(img) if img.width == w && img.height == h => Some(img),
            Some(img) => {
                findings.push(Finding::new(
                    rgb_name(i),
                    FindingKind::Dimension,
                    format!("{}x{}, expected {w}x{h}", img.width, img.height),
                ));
                None
            }
            None => {
                findings.push(Finding::new(rgb_name(i), FindingKind::Format, "not a binary 8-bit PPM"));
                None
            }
        });
        if let (Some(depth), Some(rgb)) = (depth, rgb) {
            frames.push(FrameCapture {
                time: e.time,
                depth,
                rgb,
                camera: e.camera,
            });
        }
    }
    let keyframes_txt = read_checked(dir, &m.keyframes_file, KEYFRAMES, findings);
    if let Some(txt) = &keyframes_txt {
        if *txt != emit_keyframes(&m.keyframes).into_bytes() {
            findings.push(Finding::new(KEYFRAMES, FindingKind::Format, "does not match the manifest keyframes"));
        }
    }
    if !findings.is_empty() {
        return None;
    }
    let record = DemonstrationRecord {
        format_version: m.format_version,
        task: m.task,
        chain_sha256: m.chain_sha256,
        scene_sha256: m.scene_sha256,
        intrinsics: m.intrinsics,
        saved_extrinsics: m.saved_extrinsics,
        base_pose: m.base_pose,
        chain: m.chain,
        frames,
        keyframes: m.keyframes,
    };
    if let Err(e) = record.validate() {
        let f = match e {
            RecordError::UnsupportedVersion(v) => Finding::new(MANIFEST, FindingKind::Version, v),
            RecordError::Corrupt { file, reason } => Finding::new(file, FindingKind::Format, reason),
            other => Finding::new(MANIFEST, FindingKind::Format, other.to_string()),
        };
        findings.push(f);
        return None;
    }
    Some(record)
}

/// Every problem with the record in `dir`; empty means it imports cleanly.
pub fn inspect(dir: impl AsRef<Path>) -> Vec<Finding> {
    let mut findings = Vec::new();
    load(dir.as_ref(), &mut findings);
    findings
}

/// Reads and fully validates the record in `dir`.
pub fn import(dir: impl AsRef<Path>) -> Result<DemonstrationRecord, RecordError> {
    let dir = dir.as_ref();
    let mut findings = Vec::new();
    match load(dir, &mut findings) {
        Some(r) => Ok(r),
        None => Err(findings
            .into_iter()
            .next()
            .expect("a failed load reports a finding")
            .into_error(dir)),
    }
}
