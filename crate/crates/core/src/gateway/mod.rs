//! Service surface: the console wire protocol, the TCP server and the
//! headless command-line operations.

pub mod cli;
pub mod protocol;
mod server;
mod service;

pub use cli::{cli_audit, cli_render, cli_validate, CliOutcome};
pub use protocol::{Envelope, FrameError};
pub use server::{handle_connection, serve, spawn, Client};
pub use service::{CommandError, Service, SessionStatus, WaypointSummary, COMMANDS, DEFAULT_TIME_STEP};

use serde::Deserialize;
use serde_json::Value;

/// One scripted request. Transcripts are JSON lines; blank lines and lines
/// starting with `#` are skipped.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    kind: String,
    #[serde(default)]
    payload: Value,
    /// `"ack"` (default) or `"error"`.
    #[serde(default)]
    expect: Option<String>,
}

/// Result of running a transcript against a service.
#[derive(Clone, Debug)]
pub struct TranscriptRun {
    pub session_id: String,
    /// Replies per request, in order.
    pub replies: Vec<Vec<Envelope>>,
}

/// Drives `service` through a transcript. The first command must be
/// `create_session`; later lines are sent to the session it creates with
/// increasing seq numbers.
pub fn run_transcript(service: &Service, text: &str) -> Result<TranscriptRun, String> {
    let mut session_id: Option<String> = None;
    let mut replies = Vec::new();
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    for (seq, (n, line)) in lines.enumerate() {
        let step: ScriptLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        let env = Envelope::new(step.kind.clone(), session_id.as_deref(), seq as u64 + 1, step.payload);
        let out = service.handle(env);
        let last = out.last().ok_or_else(|| format!("line {}: no reply", n + 1))?;
        let want = step.expect.as_deref().unwrap_or("ack");
        if last.kind != want {
            return Err(format!("line {}: {} answered {}: {}", n + 1, step.kind, last.kind, last.payload));
        }
        if step.kind == "create_session" {
            session_id = last
                .payload
                .pointer("/result/session_id")
                .and_then(|v| v.as_str())
                .map(str::to_owned);
        }
        replies.push(out);
    }
    Ok(TranscriptRun {
        session_id: session_id.ok_or("transcript never created a session")?,
        replies,
    })
}
