//! Enrollment and verification service.
//!
//! The operational layer around a trained [`AuthModel`]: users enroll with a
//! handful of windows (embeddings are stored, never raw motion data), probes
//! are verified n-shot against the stored template, and three *consecutive*
//! failures drop the user to `fallback` status — verification keeps answering,
//! but the status field tells the caller a stronger factor (e.g., a password)
//! is required. An accepted probe always clears the counter, since an accept
//! demonstrates the genuine user's presence; an operator `reset_fallback`
//! models the password flow completing.
//!
//! State lives in an append-only JSON-lines journal ([`store`]) so a restart
//! reproduces records and counters exactly. The TCP front end ([`serve`])
//! speaks a 4-byte-length-prefixed JSON protocol ([`wire`]), documented in the
//! repository's `protocol.md`.
//!
//! Concurrency: the model snapshot is immutable and shared; one state lock
//! realizes the per-user mutual exclusion (embedding inference runs outside
//! it, so concurrent verifies overlap on the math and serialize only on the
//! counter update, which makes per-user histories linearizable); the journal
//! has a single writer behind that same lock.

mod server;
pub mod store;
pub mod wire;

use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Window;
use crate::model::{AuthModel, ModelError};
use crate::nn::NnError;

pub use server::{serve, ServeConfig, ServerHandle};
pub use store::{EnrollmentRecord, Store, StoreError, MAX_SHOTS};
pub use wire::{Client, ErrorBody, Request, Response, WireError, MAX_FRAME};

/// Consecutive failures at which a user drops to fallback.
pub const FALLBACK_AFTER: u32 = 3;

/// Operator token accepted for `reset_fallback` unless configured otherwise.
pub const DEFAULT_OPERATOR_TOKEN: &str = "operator";

/// Whether a user may keep verifying normally or must clear fallback first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackStatus {
    Active,
    Fallback,
}

impl std::fmt::Display for FallbackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FallbackStatus::Active => "active",
            FallbackStatus::Fallback => "fallback",
        })
    }
}

/// A user's verification standing. `status` is derived: fallback holds iff
/// `consecutive_failures >= FALLBACK_AFTER`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationState {
    pub consecutive_failures: u32,
    pub status: FallbackStatus,
}

impl VerificationState {
    /// The state implied by a failure count.
    pub fn from_failures(consecutive_failures: u32) -> VerificationState {
        let status = if consecutive_failures >= FALLBACK_AFTER {
            FallbackStatus::Fallback
        } else {
            FallbackStatus::Active
        };
        VerificationState { consecutive_failures, status }
    }

    /// The state after one verification: an accept clears the counter, a
    /// reject increments it.
    pub fn after(self, accept: bool) -> VerificationState {
        if accept {
            VerificationState::from_failures(0)
        } else {
            VerificationState::from_failures(self.consecutive_failures.saturating_add(1))
        }
    }
}

/// The answer to one verification request.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VerifyOutcome {
    pub score: f64,
    pub accept: bool,
    #[serde(flatten)]
    pub state: VerificationState,
}

/// One user's standing as reported by the `status` op.
#[derive(Clone, Debug, Serialize)]
pub struct UserStatusReport {
    pub user_id: String,
    pub enrolled_shots: usize,
    pub created_at: i64,
    #[serde(flatten)]
    pub state: VerificationState,
}

/// Service-wide summary as reported by the `status` op without a user.
#[derive(Clone, Debug, Serialize)]
pub struct ServiceStatus {
    pub users: usize,
    pub model_digest: String,
    pub window_seconds: u32,
    pub window_samples: usize,
    pub threshold: f64,
}

/// Errors surfaced by service operations. [`ServiceError::code`] gives the
/// stable wire code for each.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("user {0:?} is not enrolled")]
    NotEnrolled(String),
    #[error("enrollment needs at least one window")]
    NoEnrollment,
    #[error("enrollment accepts at most {MAX_SHOTS} windows, got {0}")]
    TooManyShots(usize),
    #[error("user {0:?} is not in fallback")]
    NotInFallback(String),
    #[error("operator token rejected")]
    Unauthorized,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("enrollment for {user} was written by model {record}, this service runs {serving}")]
    DigestMismatch { user: String, record: String, serving: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model: {0}")]
    Model(ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// The stable error code carried in wire responses.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotEnrolled(_) => "not_enrolled",
            ServiceError::NoEnrollment => "no_enrollment",
            ServiceError::TooManyShots(_) | ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotInFallback(_) => "not_in_fallback",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Shape(_) => "shape_error",
            ServiceError::DigestMismatch { .. } => "digest_mismatch",
            ServiceError::Store(_) => "store_error",
            ServiceError::Model(ModelError::NotCalibrated) => "not_calibrated",
            ServiceError::Model(_) | ServiceError::Io(_) => "internal",
        }
    }
}

fn lift_model(e: ModelError) -> ServiceError {
    match e {
        ModelError::NoEnrollment => ServiceError::NoEnrollment,
        ModelError::Nn(NnError::ShapeError(m)) => ServiceError::Shape(m),
        other => ServiceError::Model(other),
    }
}

fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

/// The service core: a calibrated model plus the journal-backed user state.
pub struct AuthService {
    model: Arc<AuthModel>,
    model_digest: String,
    operator_token: String,
    store: Mutex<Store>,
}

impl AuthService {
    /// Wrap a calibrated model around the journal at `store_path` (created if
    /// missing). Refuses uncalibrated models and stores written by a model
    /// with a different digest.
    pub fn new(model: AuthModel, store_path: &Path, operator_token: &str) -> Result<AuthService, ServiceError> {
        if model.threshold.is_none() {
            return Err(ServiceError::Model(ModelError::NotCalibrated));
        }
        let model_digest = model.digest();
        let store = Store::open(store_path)?;
        for rec in store.iter_records() {
            if rec.model_digest != model_digest {
                return Err(ServiceError::DigestMismatch {
                    user: rec.user_id.clone(),
                    record: rec.model_digest.clone(),
                    serving: model_digest,
                });
            }
        }
        Ok(AuthService {
            model: Arc::new(model),
            model_digest,
            operator_token: operator_token.to_string(),
            store: Mutex::new(store),
        })
    }

    /// Load the model file at `model_path` and open the service on it.
    pub fn open(model_path: &Path, store_path: &Path, operator_token: &str) -> Result<AuthService, ServiceError> {
        let model = AuthModel::load(model_path).map_err(lift_model)?;
        AuthService::new(model, store_path, operator_token)
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The serving model.
    pub fn model(&self) -> &AuthModel {
        &self.model
    }

    /// The serving model's digest.
    pub fn digest(&self) -> &str {
        &self.model_digest
    }

    /// Enroll (or re-enroll) a user from raw channel-major window rows.
    /// Embeddings are computed here; the store never sees motion data.
    pub fn enroll_values(&self, user_id: &str, rows: &[Vec<f32>]) -> Result<EnrollmentRecord, ServiceError> {
        if user_id.is_empty() {
            return Err(ServiceError::BadRequest("user_id must be non-empty".into()));
        }
        if rows.is_empty() {
            return Err(ServiceError::NoEnrollment);
        }
        if rows.len() > MAX_SHOTS {
            return Err(ServiceError::TooManyShots(rows.len()));
        }
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let embedded = self.model.embed_rows(&refs).map_err(lift_model)?;
        let dim = crate::model::EMBED_DIM;
        let embeddings: Vec<Vec<f32>> =
            (0..rows.len()).map(|i| embedded.data()[i * dim..(i + 1) * dim].to_vec()).collect();
        let record = EnrollmentRecord {
            user_id: user_id.to_string(),
            embeddings,
            created_at: now_ms(),
            model_digest: self.model_digest.clone(),
        };
        self.store().put_record(record.clone())?;
        Ok(record)
    }

    /// Enroll from prepared [`Window`]s.
    pub fn enroll_windows(&self, user_id: &str, windows: &[Window]) -> Result<EnrollmentRecord, ServiceError> {
        let rows: Vec<Vec<f32>> = windows.iter().map(|w| w.values.clone()).collect();
        self.enroll_values(user_id, &rows)
    }

    /// Verify one probe (raw channel-major values) against a user's template
    /// and advance the failure counter.
    pub fn verify_values(&self, user_id: &str, values: &[f32]) -> Result<VerifyOutcome, ServiceError> {
        let enrollment = {
            let store = self.store();
            store
                .record(user_id)
                .ok_or_else(|| ServiceError::NotEnrolled(user_id.to_string()))?
                .embeddings
                .clone()
        };
        // Inference runs outside the lock; only the counter update below
        // needs mutual exclusion.
        let probe = Window {
            user_id: user_id.to_string(),
            source_session_id: String::new(),
            offset_index: 0,
            window_seconds: self.model.window_seconds,
            values: values.to_vec(),
        };
        let (score, accept) = self.model.verify_nshot(&probe, &enrollment).map_err(lift_model)?;
        let mut store = self.store();
        let state = VerificationState::from_failures(store.failures(user_id)).after(accept);
        store.set_failures(user_id, state.consecutive_failures)?;
        Ok(VerifyOutcome { score, accept, state })
    }

    /// Verify a prepared [`Window`].
    pub fn verify_window(&self, user_id: &str, probe: &Window) -> Result<VerifyOutcome, ServiceError> {
        self.verify_values(user_id, &probe.values)
    }

    /// Clear a fallback after the out-of-band factor succeeded. The token is
    /// checked first so an unauthorized caller learns nothing about who is
    /// enrolled.
    pub fn reset_fallback(&self, user_id: &str, operator_token: &str) -> Result<VerificationState, ServiceError> {
        if operator_token != self.operator_token {
            return Err(ServiceError::Unauthorized);
        }
        let mut store = self.store();
        if store.record(user_id).is_none() {
            return Err(ServiceError::NotEnrolled(user_id.to_string()));
        }
        if store.failures(user_id) < FALLBACK_AFTER {
            return Err(ServiceError::NotInFallback(user_id.to_string()));
        }
        store.audit_reset(user_id)?;
        Ok(VerificationState::from_failures(0))
    }

    /// One user's standing.
    pub fn user_status(&self, user_id: &str) -> Result<UserStatusReport, ServiceError> {
        let store = self.store();
        let rec = store.record(user_id).ok_or_else(|| ServiceError::NotEnrolled(user_id.to_string()))?;
        Ok(UserStatusReport {
            user_id: rec.user_id.clone(),
            enrolled_shots: rec.embeddings.len(),
            created_at: rec.created_at,
            state: VerificationState::from_failures(store.failures(user_id)),
        })
    }

    /// Service-wide summary.
    pub fn status(&self) -> ServiceStatus {
        ServiceStatus {
            users: self.store().n_users(),
            model_digest: self.model_digest.clone(),
            window_seconds: self.model.window_seconds,
            window_samples: self.model.window_samples(),
            threshold: self.model.threshold.expect("constructor requires calibration"),
        }
    }

    /// Compact and fsync the journal (graceful-shutdown path).
    pub fn flush(&self) -> Result<(), ServiceError> {
        let mut store = self.store();
        store.compact()?;
        store.sync()?;
        Ok(())
    }
}
