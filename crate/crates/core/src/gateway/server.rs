use std::io::{self, BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use super::protocol::{decode, read_envelope, read_frame, write_envelope, Envelope, FrameError};
use super::service::Service;

/// Accepts connections until the listener fails, one thread per connection.
pub fn serve(service: Arc<Service>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let service = service.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            if let Err(e) = handle_connection(&service, stream) {
                log::warn!("connection {peer}: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves on a background thread; returns the bound address.
pub fn spawn(service: Arc<Service>, addr: impl ToSocketAddrs) -> io::Result<std::net::SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || {
        if let Err(e) = serve(service, listener) {
            log::error!("listener stopped: {e}");
        }
    });
    Ok(local)
}

fn protocol_error(message: String) -> Envelope {
    Envelope::new("error", None, 0, json!({"reply_to": null, "code": "ProtocolError", "message": message}))
}

/// Serves one connection until the peer hangs up. Malformed envelopes get a
/// protocol error and the connection stays open.
pub fn handle_connection(service: &Service, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let replies = match read_frame(&mut reader) {
            Ok(body) => match decode(&body) {
                Ok(env) => {
                    log::debug!("<- {} {:?} #{}", env.kind, env.session_id, env.seq);
                    service.handle(env)
                }
                Err(FrameError::Malformed(m)) => vec![protocol_error(format!("malformed envelope: {m}"))],
                Err(_) => unreachable!("decode only reports malformed input"),
            },
            Err(FrameError::Closed) => return Ok(()),
            Err(FrameError::TooLarge(n)) => {
                write_envelope(&mut writer, &protocol_error(format!("frame of {n} bytes is too large")))?;
                return Ok(());
            }
            Err(FrameError::Io(e)) => return Err(e),
            Err(FrameError::Malformed(_)) => unreachable!("read_frame does not decode"),
        };
        for r in &replies {
            write_envelope(&mut writer, r)?;
        }
    }
}

/// Blocking client for scripted drivers and tests.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    seq: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            seq: 0,
        })
    }

    /// Sends a raw envelope and collects replies up to its ack or error.
    pub fn send(&mut self, env: &Envelope) -> io::Result<Vec<Envelope>> {
        write_envelope(&mut self.writer, env)?;
        self.read_reply(Some(env.seq))
    }

    /// Collects envelopes until an ack/error for `reply_to` arrives.
    pub fn read_reply(&mut self, reply_to: Option<u64>) -> io::Result<Vec<Envelope>> {
        let mut out = Vec::new();
        loop {
            let env = read_envelope(&mut self.reader).map_err(|e| match e {
                FrameError::Io(e) => e,
                other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
            })?;
            let done = matches!(env.kind.as_str(), "ack" | "error")
                && match reply_to {
                    Some(seq) => env.payload.get("reply_to") == Some(&json!(seq)),
                    None => true,
                };
            out.push(env);
            if done {
                return Ok(out);
            }
        }
    }

    /// Sends `kind` with the next sequence number.
    pub fn request(&mut self, kind: &str, session: Option<&str>, payload: Value) -> io::Result<Vec<Envelope>> {
        self.seq += 1;
        let env = Envelope::new(kind, session, self.seq, payload);
        self.send(&env)
    }

    /// Raw bytes as one frame, for exercising error handling.
    pub fn send_raw_frame(&mut self, body: &[u8]) -> io::Result<Vec<Envelope>> {
        super::protocol::write_frame(&mut self.writer, body)?;
        self.read_reply(None)
    }
}
