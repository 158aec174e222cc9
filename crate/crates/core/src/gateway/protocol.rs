//! Wire format: each frame is a 4-byte big-endian length followed by that
//! many bytes of UTF-8 JSON holding one [`Envelope`].

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Frames larger than this are refused.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: impl Into<String>, session_id: Option<&str>, seq: u64, payload: Value) -> Self {
        Self {
            kind: kind.into(),
            session_id: session_id.map(str::to_owned),
            seq,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelopes serialize")
    }
}

/// What went wrong reading one frame.
#[derive(Debug)]
pub enum FrameError {
    /// Stream closed cleanly between frames.
    Closed,
    Io(io::Error),
    /// Length prefix over [`MAX_FRAME`]; the stream cannot be resynchronized.
    TooLarge(usize),
    /// A complete frame whose body is not a valid envelope.
    Malformed(String),
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

pub fn write_envelope(w: &mut impl Write, env: &Envelope) -> io::Result<()> {
    write_frame(w, &env.to_bytes())
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::Io(e)),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(FrameError::Io)?;
    Ok(body)
}

pub fn decode(body: &[u8]) -> Result<Envelope, FrameError> {
    let text = std::str::from_utf8(body).map_err(|e| FrameError::Malformed(e.to_string()))?;
    serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))
}

pub fn read_envelope(r: &mut impl Read) -> Result<Envelope, FrameError> {
    decode(&read_frame(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn frame_round_trip() {
        let env = Envelope::new("add_waypoint", Some("sess-1"), 4, json!({"position": [0.4, 0.0, 0.3]}));
        let mut buf = Vec::new();
        write_envelope(&mut buf, &env).unwrap();
        assert_eq!(&buf[..4], &((buf.len() - 4) as u32).to_be_bytes());
        let mut r = &buf[..];
        assert_eq!(read_envelope(&mut r).unwrap(), env);
        assert!(matches!(read_envelope(&mut r), Err(FrameError::Closed)));
    }

    #[test]
    fn malformed_and_truncated() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{not json").unwrap();
        write_frame(&mut buf, br#"{"kind":"x","seq":1,"bogus":2}"#).unwrap();
        let mut r = &buf[..];
        assert!(matches!(read_envelope(&mut r), Err(FrameError::Malformed(_))));
        assert!(matches!(read_envelope(&mut r), Err(FrameError::Malformed(_))));
        let cut = [0u8, 0, 0, 9, b'{'];
        assert!(matches!(read_envelope(&mut &cut[..]), Err(FrameError::Io(_))));
        let huge = (MAX_FRAME as u32 + 1).to_be_bytes();
        assert!(matches!(read_envelope(&mut &huge[..]), Err(FrameError::TooLarge(_))));
    }
}
