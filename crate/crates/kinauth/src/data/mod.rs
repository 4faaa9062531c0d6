//! Dataset pipeline: sensor CSV ingest, resampling, sliding windows, user
//! splits, pair sampling, the on-disk window cache, and a synthetic
//! multi-user generator used by tests and the bundled demo flow.
//!
//! Stage order mirrors deployment: raw per-sensor CSVs →
//! [`SessionRecording`] → [`ResampledSession`] (uniform 5 ms grid) →
//! [`Window`]s (sliding, step = 1/10 window length) → pools, splits, and
//! pair sets for training and evaluation.

mod manifest;
mod pairs;
mod resample;
mod split;
mod synth;
mod types;
mod window;

pub use manifest::*;
pub use pairs::*;
pub use resample::*;
pub use split::*;
pub use synth::*;
pub use types::*;
pub use window::*;

use thiserror::Error;

/// Errors across the dataset pipeline.
#[derive(Debug, Error)]
pub enum DataError {
    /// A session is missing one of the three sensor series.
    #[error("session {session}: missing {sensor} series")]
    MissingModality { session: String, sensor: SensorKind },
    /// A sensor CSV (or series) is structurally invalid.
    #[error("malformed series in {path}{}: {msg}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    MalformedSeries { path: String, line: Option<u64>, msg: String },
    /// The three sensors' time ranges do not intersect (or the intersection
    /// is shorter than one grid period).
    #[error("session {session}: sensor time ranges do not overlap")]
    NoOverlap { session: String },
    /// Channels are shorter than one window.
    #[error("channel length {len} shorter than one window of {window} samples")]
    TooShort { len: usize, window: usize },
    /// split_users was given counts that do not sum to the user count.
    #[error("split counts sum to {expected} but {users} users were given")]
    BadSplitCounts { users: usize, expected: usize },
    /// Pair sampling needs ≥ 2 users and ≥ 1 user with ≥ 2 windows.
    #[error("insufficient users for pair sampling: {0}")]
    InsufficientUsers(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}
