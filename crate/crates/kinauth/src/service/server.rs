//! TCP front end: accept loop, per-connection framing, op dispatch, and
//! graceful shutdown.
//!
//! Each connection gets its own thread and speaks the framed-JSON protocol
//! from [`super::wire`]. A malformed request body earns an error response and
//! the connection lives on; an oversize or torn frame closes it. Shutdown
//! stops the accept loop, joins every connection thread (streams carry a short
//! read timeout so handlers notice the flag), and compacts + fsyncs the store.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::wire::{read_frame_poll, write_frame, FrameRead, Request, Response, WireError, MAX_FRAME};
use super::{AuthService, ServiceError};

/// How often blocked reads wake up to check the shutdown flag.
const POLL_INTERVAL: Duration = Duration::from_millis(100);

/// Server tuning knobs.
#[derive(Clone, Debug)]
pub struct ServeConfig {
    /// Hard cap on request frame bodies, in bytes.
    pub max_frame: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { max_frame: MAX_FRAME }
    }
}

/// A running server. Dropping the handle signals shutdown without waiting;
/// [`ServerHandle::shutdown`] waits for all threads and flushes the store.
pub struct ServerHandle {
    addr: SocketAddr,
    service: Arc<AuthService>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl ServerHandle {
    /// The bound address (useful with port 0).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// The service behind the server.
    pub fn service(&self) -> &AuthService {
        &self.service
    }

    /// Stop accepting, join every connection thread, and flush the store.
    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop with one throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let workers = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|e| e.into_inner()));
        for h in workers {
            let _ = h.join();
        }
        self.service.flush()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

/// Bind `addr` and serve the given service until [`ServerHandle::shutdown`].
pub fn serve(service: AuthService, addr: &str, config: &ServeConfig) -> Result<ServerHandle, ServiceError> {
    let listener = TcpListener::bind(addr).map_err(ServiceError::Io)?;
    let local = listener.local_addr().map_err(ServiceError::Io)?;
    let service = Arc::new(service);
    let stop = Arc::new(AtomicBool::new(false));
    let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let max_frame = config.max_frame;

    let accept = {
        let service = Arc::clone(&service);
        let stop = Arc::clone(&stop);
        let workers = Arc::clone(&workers);
        std::thread::spawn(move || loop {
            let (stream, _) = match listener.accept() {
                Ok(conn) => conn,
                Err(_) if stop.load(Ordering::SeqCst) => break,
                Err(_) => continue,
            };
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let _ = stream.set_read_timeout(Some(POLL_INTERVAL));
            let _ = stream.set_nodelay(true);
            let service = Arc::clone(&service);
            let conn_stop = Arc::clone(&stop);
            let handle = std::thread::spawn(move || handle_conn(stream, &service, &conn_stop, max_frame));
            let mut guard = workers.lock().unwrap_or_else(|e| e.into_inner());
            guard.retain(|h| !h.is_finished());
            guard.push(handle);
        })
    };

    Ok(ServerHandle { addr: local, service, stop, accept: Some(accept), workers })
}

fn handle_conn(mut stream: TcpStream, service: &AuthService, stop: &AtomicBool, max_frame: usize) {
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match read_frame_poll(&mut stream, max_frame) {
            Ok(FrameRead::Idle) => continue,
            Ok(FrameRead::Eof) => break,
            Ok(FrameRead::Frame(body)) => {
                let resp = dispatch(service, &body);
                let bytes = serde_json::to_vec(&resp).expect("responses serialize");
                if write_frame(&mut stream, &bytes).is_err() {
                    break;
                }
            }
            // Oversize, stalled, or torn frames all end the connection.
            Err(WireError::Oversize { .. } | WireError::Stalled) => break,
            Err(_) => break,
        }
    }
}

#[derive(Deserialize)]
struct EnrollPayload {
    user_id: String,
    windows: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct VerifyPayload {
    user_id: String,
    window: Vec<f32>,
}

#[derive(Deserialize)]
struct ResetPayload {
    user_id: String,
    #[serde(default)]
    operator_token: String,
}

#[derive(Deserialize)]
struct StatusPayload {
    #[serde(default)]
    user_id: Option<String>,
}

fn parse_payload<T: serde::de::DeserializeOwned>(req: &Request) -> Result<T, Response> {
    serde_json::from_value::<T>(req.payload.clone()).map_err(|e| {
        Response::failure(&req.request_id, "bad_request", &format!("bad {} payload: {e}", req.op))
    })
}

fn service_reply(request_id: &str, result: Result<Value, ServiceError>) -> Response {
    match result {
        Ok(payload) => Response::success(request_id, payload),
        Err(e) => Response::failure(request_id, e.code(), &e.to_string()),
    }
}

/// Decode one request body and run it against the service.
pub(super) fn dispatch(service: &AuthService, body: &[u8]) -> Response {
    let req: Request = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => {
            // No request id is recoverable from a body that does not parse.
            return Response::failure("", "bad_request", &format!("malformed request body: {e}"));
        }
    };
    let id = req.request_id.clone();
    match req.op.as_str() {
        "ping" => Response::success(&id, json!({ "pong": true })),
        "status" => match parse_payload::<StatusPayload>(&req) {
            Err(resp) => resp,
            Ok(StatusPayload { user_id: None }) => {
                service_reply(&id, serde_json::to_value(service.status()).map_err(|e| ServiceError::BadRequest(e.to_string())))
            }
            Ok(StatusPayload { user_id: Some(user) }) => service_reply(
                &id,
                service.user_status(&user).map(|s| serde_json::to_value(s).expect("status serializes")),
            ),
        },
        "enroll" => match parse_payload::<EnrollPayload>(&req) {
            Err(resp) => resp,
            Ok(p) => service_reply(
                &id,
                service.enroll_values(&p.user_id, &p.windows).map(|rec| {
                    json!({
                        "user_id": rec.user_id,
                        "shots": rec.embeddings.len(),
                        "created_at": rec.created_at,
                        "model_digest": rec.model_digest,
                    })
                }),
            ),
        },
        "verify" => match parse_payload::<VerifyPayload>(&req) {
            Err(resp) => resp,
            Ok(p) => service_reply(
                &id,
                service
                    .verify_values(&p.user_id, &p.window)
                    .map(|out| serde_json::to_value(out).expect("outcome serializes")),
            ),
        },
        "reset_fallback" => match parse_payload::<ResetPayload>(&req) {
            Err(resp) => resp,
            Ok(p) => service_reply(
                &id,
                service.reset_fallback(&p.user_id, &p.operator_token).map(|state| {
                    json!({
                        "user_id": p.user_id,
                        "consecutive_failures": state.consecutive_failures,
                        "status": state.status,
                    })
                }),
            ),
        },
        other => Response::failure(&id, "bad_request", &format!("unknown op {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::tests::fixture;
    use crate::service::wire::Client;
    use crate::service::FallbackStatus;

    fn start(dir: &tempfile::TempDir) -> (ServerHandle, Vec<Vec<f32>>, Vec<f32>, Vec<f32>) {
        let fx = fixture(dir.path());
        let handle = serve(fx.service, "127.0.0.1:0", &ServeConfig::default()).unwrap();
        (handle, fx.enroll_rows, fx.accept_row, fx.reject_row)
    }

    fn connect(handle: &ServerHandle) -> Client {
        Client::connect(&handle.addr().to_string()).unwrap()
    }

    #[test]
    fn ping_echoes_request_id() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, ..) = start(&dir);
        let mut c = connect(&handle);
        let resp = c.call("ping", json!({})).unwrap();
        assert!(resp.ok);
        assert_eq!(resp.request_id, "req-000001");
        assert_eq!(resp.payload.unwrap()["pong"], true);
        handle.shutdown().unwrap();
    }

    #[test]
    fn malformed_body_earns_error_but_keeps_the_connection() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, ..) = start(&dir);
        let mut c = connect(&handle);
        let resp = c.call_raw(b"{not json").unwrap();
        assert!(!resp.ok);
        assert_eq!(resp.error.as_ref().unwrap().code, "bad_request");
        assert_eq!(resp.request_id, "");
        // Same connection still serves valid requests.
        let resp = c.call("ping", json!({})).unwrap();
        assert!(resp.ok);
        handle.shutdown().unwrap();
    }

    #[test]
    fn unknown_op_is_bad_request() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, ..) = start(&dir);
        let mut c = connect(&handle);
        let resp = c.call("frobnicate", json!({})).unwrap();
        assert!(!resp.ok);
        assert_eq!(resp.error.unwrap().code, "bad_request");
        handle.shutdown().unwrap();
    }

    #[test]
    fn oversize_frame_closes_the_connection() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture(dir.path());
        let handle = serve(fx.service, "127.0.0.1:0", &ServeConfig { max_frame: 512 }).unwrap();
        let mut c = connect(&handle);
        // Hand-roll a frame whose header exceeds the server's limit.
        use std::io::{Read, Write};
        let stream = c.stream_mut();
        stream.write_all(&1024u32.to_be_bytes()).unwrap();
        stream.write_all(&vec![b'x'; 1024]).unwrap();
        let mut buf = [0u8; 1];
        let n = stream.read(&mut buf).unwrap_or(0);
        assert_eq!(n, 0, "server should close the connection on an oversize frame");
        handle.shutdown().unwrap();
    }

    #[test]
    fn enroll_verify_and_reset_over_the_wire() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, enroll_rows, accept_row, reject_row) = start(&dir);
        let mut c = connect(&handle);

        let resp = c.call("enroll", json!({"user_id": "alice", "windows": enroll_rows})).unwrap();
        assert!(resp.ok, "enroll failed: {:?}", resp.error);
        let payload = resp.payload.unwrap();
        assert_eq!(payload["user_id"], "alice");
        assert_eq!(payload["shots"], 3);

        let resp = c.call("verify", json!({"user_id": "alice", "window": accept_row})).unwrap();
        let payload = resp.payload.unwrap();
        assert_eq!(payload["accept"], true);
        assert_eq!(payload["consecutive_failures"], 0);
        assert_eq!(payload["status"], "active");

        for k in 1..=3u32 {
            let resp = c.call("verify", json!({"user_id": "alice", "window": reject_row})).unwrap();
            let payload = resp.payload.unwrap();
            assert_eq!(payload["accept"], false);
            assert_eq!(payload["consecutive_failures"], k);
            assert_eq!(payload["status"], if k >= 3 { "fallback" } else { "active" });
        }

        // Status reports the fallback; reset needs the right token.
        let resp = c.call("status", json!({"user_id": "alice"})).unwrap();
        assert_eq!(resp.payload.unwrap()["status"], "fallback");
        let resp = c.call("reset_fallback", json!({"user_id": "alice"})).unwrap();
        assert_eq!(resp.error.unwrap().code, "unauthorized");
        let resp = c
            .call("reset_fallback", json!({"user_id": "alice", "operator_token": "operator"}))
            .unwrap();
        assert!(resp.ok);
        assert_eq!(resp.payload.unwrap()["status"], "active");

        // Wrong-length probe: shape error, connection stays up.
        let resp = c.call("verify", json!({"user_id": "alice", "window": [1.0, 2.0]})).unwrap();
        assert_eq!(resp.error.unwrap().code, "shape_error");
        let resp = c.call("ping", json!({})).unwrap();
        assert!(resp.ok);

        let resp = c.call("verify", json!({"user_id": "nobody", "window": accept_row})).unwrap();
        assert_eq!(resp.error.unwrap().code, "not_enrolled");

        handle.shutdown().unwrap();
    }

    #[test]
    fn global_status_reports_user_count_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, enroll_rows, ..) = start(&dir);
        let digest = handle.service().digest().to_string();
        let mut c = connect(&handle);
        c.call("enroll", json!({"user_id": "alice", "windows": enroll_rows})).unwrap();
        let resp = c.call("status", json!({})).unwrap();
        let payload = resp.payload.unwrap();
        assert_eq!(payload["users"], 1);
        assert_eq!(payload["model_digest"], digest.as_str());
        handle.shutdown().unwrap();
    }

    #[test]
    fn concurrent_verifies_keep_counters_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, enroll_rows, accept_row, reject_row) = start(&dir);
        let mut c = connect(&handle);
        for user in ["alice", "bob"] {
            let resp = c.call("enroll", json!({"user_id": user, "windows": enroll_rows})).unwrap();
            assert!(resp.ok);
        }
        let addr = handle.addr().to_string();

        // Two clients hammer different users: alice sees only rejects, bob
        // alternates accept/reject ending on a reject. Each per-user history
        // is deterministic regardless of cross-user interleaving.
        let reject = reject_row.clone();
        let a = std::thread::spawn({
            let addr = addr.clone();
            move || {
                let mut c = Client::connect(&addr).unwrap();
                for _ in 0..8 {
                    let resp = c.call("verify", json!({"user_id": "alice", "window": reject})).unwrap();
                    assert!(resp.ok);
                }
            }
        });
        let accept = accept_row.clone();
        let reject = reject_row.clone();
        let b = std::thread::spawn(move || {
            let mut c = Client::connect(&addr).unwrap();
            for i in 0..8 {
                let row = if i % 2 == 0 { &accept } else { &reject };
                let resp = c.call("verify", json!({"user_id": "bob", "window": row})).unwrap();
                assert!(resp.ok);
            }
        });
        a.join().unwrap();
        b.join().unwrap();

        let alice = handle.service().user_status("alice").unwrap();
        assert_eq!(alice.state.consecutive_failures, 8);
        assert_eq!(alice.state.status, FallbackStatus::Fallback);
        let bob = handle.service().user_status("bob").unwrap();
        assert_eq!(bob.state.consecutive_failures, 1);
        assert_eq!(bob.state.status, FallbackStatus::Active);
        handle.shutdown().unwrap();
    }

    #[test]
    fn same_user_verifies_from_two_connections_linearize() {
        let dir = tempfile::tempdir().unwrap();
        let (handle, enroll_rows, _, reject_row) = start(&dir);
        let mut c = connect(&handle);
        c.call("enroll", json!({"user_id": "alice", "windows": enroll_rows})).unwrap();
        let addr = handle.addr().to_string();

        // All-reject traffic commutes: any serial order of 2×6 rejects lands
        // on exactly 12 consecutive failures.
        let threads: Vec<_> = (0..2)
            .map(|_| {
                let addr = addr.clone();
                let reject = reject_row.clone();
                std::thread::spawn(move || {
                    let mut c = Client::connect(&addr).unwrap();
                    for _ in 0..6 {
                        let resp = c.call("verify", json!({"user_id": "alice", "window": reject})).unwrap();
                        assert!(resp.ok);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        let alice = handle.service().user_status("alice").unwrap();
        assert_eq!(alice.state.consecutive_failures, 12);
        handle.shutdown().unwrap();
    }

    #[test]
    fn shutdown_flushes_the_store_for_reopening() {
        let dir = tempfile::tempdir().unwrap();
        let store_path = dir.path().join("svc.jsonl");
        let fx = crate::service::tests::fixture_at(&store_path);
        let handle = serve(fx.service, "127.0.0.1:0", &ServeConfig::default()).unwrap();
        let mut c = connect(&handle);
        c.call("enroll", json!({"user_id": "alice", "windows": fx.enroll_rows})).unwrap();
        c.call("verify", json!({"user_id": "alice", "window": fx.reject_row})).unwrap();
        drop(c);
        handle.shutdown().unwrap();

        let store = crate::service::Store::open(&store_path).unwrap();
        assert_eq!(store.n_users(), 1);
        assert_eq!(store.failures("alice"), 1);
    }
}
