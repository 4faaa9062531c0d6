//! Length-prefixed JSON framing for the verification service.
//!
//! Every message on the wire is a 4-byte big-endian length followed by that
//! many bytes of UTF-8 JSON. Requests carry `{op, request_id, payload}`;
//! responses echo the request id and carry `{ok: true, payload}` or
//! `{ok: false, error: {code, message}}`. A frame longer than the negotiated
//! maximum (default [`MAX_FRAME`]) is never buffered: readers report
//! [`WireError::Oversize`] and the server drops the connection. The op set and
//! payload schemas are documented in the repository's `protocol.md`.

use std::io::{self, Read, Write};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Default hard cap on frame bodies: 1 MiB.
pub const MAX_FRAME: usize = 1 << 20;

/// Consecutive read timeouts tolerated mid-frame before the connection is
/// declared stalled (guards shutdown against clients that die mid-send).
const STALL_POLLS: u32 = 100;

/// Transport-level failures.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {got} bytes exceeds the {max}-byte limit")]
    Oversize { got: usize, max: usize },
    #[error("connection stalled mid-frame")]
    Stalled,
    #[error("bad response: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// Outcome of one polling read attempt on a framed stream.
#[derive(Debug)]
pub enum FrameRead {
    /// A complete frame body.
    Frame(Vec<u8>),
    /// The peer closed the connection cleanly between frames.
    Eof,
    /// The read timed out with no bytes consumed; poll again.
    Idle,
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

/// Fill `buf` from a stream that is already mid-frame: EOF is unexpected and
/// timeouts only bump the stall counter.
fn read_body(r: &mut impl Read, buf: &mut [u8], allow_idle: bool) -> Result<(), WireError> {
    let mut filled = 0usize;
    let mut stalls = 0u32;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(WireError::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "connection closed mid-frame",
                )))
            }
            Ok(n) => {
                filled += n;
                stalls = 0;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if is_timeout(&e) && allow_idle => {
                stalls += 1;
                if stalls >= STALL_POLLS {
                    return Err(WireError::Stalled);
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn read_frame_inner(r: &mut impl Read, max: usize, allow_idle: bool) -> Result<FrameRead, WireError> {
    let mut len_buf = [0u8; 4];
    // First, the 4-byte length. A timeout before any byte arrives is `Idle`;
    // a clean EOF before any byte is `Eof`.
    let mut filled = 0usize;
    let mut stalls = 0u32;
    while filled < 4 {
        match r.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(FrameRead::Eof),
            Ok(0) => {
                return Err(WireError::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "connection closed mid-frame",
                )))
            }
            Ok(n) => {
                filled += n;
                stalls = 0;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if is_timeout(&e) && allow_idle => {
                if filled == 0 {
                    return Ok(FrameRead::Idle);
                }
                stalls += 1;
                if stalls >= STALL_POLLS {
                    return Err(WireError::Stalled);
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > max {
        return Err(WireError::Oversize { got: len, max });
    }
    let mut body = vec![0u8; len];
    read_body(r, &mut body, allow_idle)?;
    Ok(FrameRead::Frame(body))
}

/// Read one frame, blocking. `Ok(None)` is a clean EOF between frames; read
/// timeouts on the underlying stream surface as I/O errors.
pub fn read_frame(r: &mut impl Read, max: usize) -> Result<Option<Vec<u8>>, WireError> {
    match read_frame_inner(r, max, false)? {
        FrameRead::Frame(b) => Ok(Some(b)),
        FrameRead::Eof => Ok(None),
        FrameRead::Idle => unreachable!("idle is only reported when polling"),
    }
}

/// Read one frame from a stream with a read timeout. A timeout with no bytes
/// consumed yields [`FrameRead::Idle`] so the caller can check a shutdown flag
/// and poll again; a peer that stops mid-frame is eventually [`WireError::Stalled`].
pub fn read_frame_poll(r: &mut impl Read, max: usize) -> Result<FrameRead, WireError> {
    read_frame_inner(r, max, true)
}

/// Write one frame: big-endian length, then the body.
pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), WireError> {
    if body.len() > MAX_FRAME {
        return Err(WireError::Oversize { got: body.len(), max: MAX_FRAME });
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// One request envelope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Request {
    pub op: String,
    #[serde(default)]
    pub request_id: String,
    #[serde(default)]
    pub payload: Value,
}

/// The error half of a failed response.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// One response envelope. Exactly one of `payload` / `error` is present.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Response {
    pub request_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn success(request_id: &str, payload: Value) -> Response {
        Response { request_id: request_id.to_string(), ok: true, payload: Some(payload), error: None }
    }

    pub fn failure(request_id: &str, code: &str, message: &str) -> Response {
        Response {
            request_id: request_id.to_string(),
            ok: false,
            payload: None,
            error: Some(ErrorBody { code: code.to_string(), message: message.to_string() }),
        }
    }
}

/// A minimal synchronous client: one connection, sequential calls, generated
/// request ids.
pub struct Client {
    stream: TcpStream,
    next_id: u64,
    max_frame: usize,
}

impl Client {
    /// Connect to a serving address.
    pub fn connect(addr: &str) -> Result<Client, WireError> {
        Ok(Client { stream: TcpStream::connect(addr)?, next_id: 0, max_frame: MAX_FRAME })
    }

    /// Send one op and wait for its response.
    pub fn call(&mut self, op: &str, payload: Value) -> Result<Response, WireError> {
        self.next_id += 1;
        let request_id = format!("req-{:06}", self.next_id);
        let req = Request { op: op.to_string(), request_id: request_id.clone(), payload };
        let body = serde_json::to_vec(&req).expect("request serializes");
        let resp = self.call_raw(&body)?;
        if resp.request_id != request_id {
            return Err(WireError::Malformed(format!(
                "response for {} arrived while waiting on {request_id}",
                resp.request_id
            )));
        }
        Ok(resp)
    }

    /// Send raw bytes as one frame and parse the next frame as a response.
    /// Lets tests exercise malformed bodies.
    pub fn call_raw(&mut self, body: &[u8]) -> Result<Response, WireError> {
        write_frame(&mut self.stream, body)?;
        let reply = read_frame(&mut self.stream, self.max_frame)?
            .ok_or_else(|| WireError::Malformed("connection closed before response".into()))?;
        serde_json::from_slice(&reply).map_err(|e| WireError::Malformed(format!("bad response JSON: {e}")))
    }

    /// The underlying stream (tests use it to probe connection state).
    pub fn stream_mut(&mut self) -> &mut TcpStream {
        &mut self.stream
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_roundtrip_various_sizes() {
        for size in [0usize, 1, 257, 70_000] {
            let body: Vec<u8> = (0..size).map(|i| (i % 251) as u8).collect();
            let mut buf = Vec::new();
            write_frame(&mut buf, &body).unwrap();
            assert_eq!(buf.len(), 4 + size);
            assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize, size);
            let mut cur = Cursor::new(buf);
            let got = read_frame(&mut cur, MAX_FRAME).unwrap().unwrap();
            assert_eq!(got, body);
        }
    }

    #[test]
    fn eof_between_frames_is_clean_but_mid_frame_is_an_error() {
        let mut empty = Cursor::new(Vec::<u8>::new());
        assert!(read_frame(&mut empty, MAX_FRAME).unwrap().is_none());

        // Truncated length prefix.
        let mut half_header = Cursor::new(vec![0u8, 0]);
        assert!(matches!(read_frame(&mut half_header, MAX_FRAME), Err(WireError::Io(_))));

        // Header promises 8 bytes, body delivers 3.
        let mut buf = Vec::new();
        buf.extend_from_slice(&8u32.to_be_bytes());
        buf.extend_from_slice(&[1, 2, 3]);
        let mut torn = Cursor::new(buf);
        assert!(matches!(read_frame(&mut torn, MAX_FRAME), Err(WireError::Io(_))));
    }

    #[test]
    fn oversize_length_is_rejected_without_buffering() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(MAX_FRAME as u32 + 1).to_be_bytes());
        let mut cur = Cursor::new(buf);
        match read_frame(&mut cur, MAX_FRAME) {
            Err(WireError::Oversize { got, max }) => {
                assert_eq!(got, MAX_FRAME + 1);
                assert_eq!(max, MAX_FRAME);
            }
            other => panic!("expected oversize error, got {other:?}"),
        }
        let body = vec![0u8; MAX_FRAME + 1];
        let mut sink = Vec::new();
        assert!(matches!(write_frame(&mut sink, &body), Err(WireError::Oversize { .. })));
    }

    #[test]
    fn response_envelope_shape() {
        let ok = Response::success("r1", serde_json::json!({"pong": true}));
        let v: Value = serde_json::from_str(&serde_json::to_string(&ok).unwrap()).unwrap();
        assert_eq!(v["request_id"], "r1");
        assert_eq!(v["ok"], true);
        assert_eq!(v["payload"]["pong"], true);
        assert!(v.get("error").is_none());

        let err = Response::failure("r2", "bad_request", "nope");
        let v: Value = serde_json::from_str(&serde_json::to_string(&err).unwrap()).unwrap();
        assert_eq!(v["ok"], false);
        assert_eq!(v["error"]["code"], "bad_request");
        assert_eq!(v["error"]["message"], "nope");
        assert!(v.get("payload").is_none());
    }

    #[test]
    fn request_defaults_missing_fields() {
        let req: Request = serde_json::from_str("{\"op\":\"ping\"}").unwrap();
        assert_eq!(req.op, "ping");
        assert_eq!(req.request_id, "");
        assert!(req.payload.is_null());
    }
}
