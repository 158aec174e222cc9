//! Plain-text keyframe stream, one line per keyframe:
//!
//! ```text
//! index time px py pz qx qy qz qw gripper
//! ```
//!
//! `time` has nine decimals, the pose fields nine significant digits
//! (printf `%.9g` style), gripper is 1 = open, 0 = closed.

use super::{Keyframe, RecordError};
use crate::geometry::quat_to_xyzw;
use crate::session::GripperState;

/// printf-style `%.9g`.
pub fn format_g9(x: f64) -> String {
    const P: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_time(t: f64) -> String {
    let s = format!("{t:.9}");
    // no "-0.000000000"
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn format_line(k: &Keyframe) -> String {
    let q = quat_to_xyzw(&k.orientation);
    let mut fields = vec![k.index.to_string(), format_time(k.time)];
    fields.extend(k.position.iter().chain(q.iter()).map(|v| format_g9(*v)));
    fields.push(k.gripper.as_bit().to_string());
    fields.join(" ")
}

/// The keyframe stream, each line terminated by `\n`.
pub fn emit_keyframes(keyframes: &[Keyframe]) -> String {
    keyframes.iter().map(|k| format_line(k) + "\n").collect()
}

/// One parsed line; joint configurations are not part of the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeLine {
    pub index: usize,
    pub time: f64,
    pub position: [f64; 3],
    /// `[x, y, z, w]`
    pub orientation: [f64; 4],
    pub gripper: GripperState,
}

pub fn parse_keyframes(text: &str) -> Result<Vec<KeyframeLine>, RecordError> {
    let bad = |n: usize, m: &str| RecordError::Corrupt {
        file: "keyframes.txt".into(),
        reason: format!("line {}: {m}", n + 1),
    };
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 10 {
                return Err(bad(n, "expected 10 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let v: Vec<f64> = f[1..9].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
            let gripper = f[9]
                .parse::<u8>()
                .ok()
                .and_then(GripperState::from_bit)
                .ok_or_else(|| bad(n, "gripper must be 0 or 1"))?;
            Ok(KeyframeLine {
                index: f[0].parse().map_err(|_| bad(n, "bad index"))?,
                time: v[0],
                position: [v[1], v[2], v[3]],
                orientation: [v[4], v[5], v[6], v[7]],
                gripper,
            })
        })
        .collect()
}
