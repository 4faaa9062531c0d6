//! Append-only enrollment store: a JSON-lines journal with compaction.
//!
//! Every state change is one journal line — an `enroll` event carrying a full
//! [`EnrollmentRecord`], a `counter` event with a user's new consecutive-failure
//! count, or a `reset` event auditing an operator fallback reset. Loading
//! replays the journal in order, so the last event per user wins and the file
//! doubles as an audit trail. Compaction rewrites the journal as a minimal
//! snapshot (one `enroll` per user plus one `counter` per nonzero counter)
//! through a temp-file rename, so a crash never leaves a half-written store.
//! A torn final line (an append interrupted before its newline) is dropped on
//! load; any other unparsable line is treated as corruption and refused.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Most embeddings one enrollment record may hold.
pub const MAX_SHOTS: usize = 16;

/// Tolerance on the unit norm of stored embeddings.
const NORM_TOL: f64 = 1e-3;

/// Journal appends between automatic compactions.
const COMPACT_EVERY: usize = 1024;

/// Errors from loading or writing the journal.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

/// One user's enrolled template: unit-norm embeddings plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub user_id: String,
    /// 1–16 unit-norm embedding vectors, one per enrollment window.
    pub embeddings: Vec<Vec<f32>>,
    /// Unix timestamp in milliseconds when the record was created.
    pub created_at: i64,
    /// Digest of the model that produced the embeddings.
    pub model_digest: String,
}

/// One journal line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum StoreEvent {
    Enroll(EnrollmentRecord),
    Counter { user_id: String, consecutive_failures: u32 },
    Reset { user_id: String },
}

/// The journal-backed store: in-memory state plus the append handle.
///
/// All mutators write the journal line before updating memory, flushed to the
/// OS per event, so a killed process loses at most the torn tail the loader
/// already tolerates. The store is single-writer by construction — exactly one
/// `Store` should own a journal file at a time.
pub struct Store {
    path: PathBuf,
    writer: BufWriter<File>,
    records: BTreeMap<String, EnrollmentRecord>,
    failures: BTreeMap<String, u32>,
    appends: usize,
    /// Appends between automatic compactions; tests lower it.
    pub compact_every: usize,
}

fn validate_record(rec: &EnrollmentRecord) -> Result<(), StoreError> {
    if rec.user_id.is_empty() {
        return Err(StoreError::Corrupt("enrollment record with empty user_id".into()));
    }
    let n = rec.embeddings.len();
    if n == 0 || n > MAX_SHOTS {
        return Err(StoreError::Corrupt(format!(
            "enrollment for {} holds {n} embeddings (expected 1–{MAX_SHOTS})",
            rec.user_id
        )));
    }
    let dim = rec.embeddings[0].len();
    for e in &rec.embeddings {
        if e.len() != dim || dim == 0 {
            return Err(StoreError::Corrupt(format!("ragged embeddings for {}", rec.user_id)));
        }
        let norm2: f64 = e.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if !norm2.is_finite() || (norm2.sqrt() - 1.0).abs() > NORM_TOL {
            return Err(StoreError::Corrupt(format!(
                "embedding for {} is not unit-norm (|e| = {:.6})",
                rec.user_id,
                norm2.sqrt()
            )));
        }
    }
    Ok(())
}

impl Store {
    /// Open (or create) the journal at `path` and replay it.
    pub fn open(path: &Path) -> Result<Store, StoreError> {
        let mut records = BTreeMap::new();
        let mut failures = BTreeMap::new();
        if path.exists() {
            let content = std::fs::read_to_string(path)?;
            let mut rest = content.as_str();
            while !rest.is_empty() {
                let (line, terminated, tail) = match rest.find('\n') {
                    Some(i) => (&rest[..i], true, &rest[i + 1..]),
                    None => (rest, false, ""),
                };
                rest = tail;
                if line.trim().is_empty() {
                    continue;
                }
                let event: StoreEvent = match serde_json::from_str(line) {
                    Ok(ev) => ev,
                    // An unterminated tail is a torn append from a crash mid-
                    // write; everything before it must parse.
                    Err(_) if !terminated => break,
                    Err(e) => return Err(StoreError::Corrupt(format!("bad journal line: {e}"))),
                };
                Store::apply(&mut records, &mut failures, event)?;
            }
        }
        let writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Store {
            path: path.to_path_buf(),
            writer,
            records,
            failures,
            appends: 0,
            compact_every: COMPACT_EVERY,
        })
    }

    fn apply(
        records: &mut BTreeMap<String, EnrollmentRecord>,
        failures: &mut BTreeMap<String, u32>,
        event: StoreEvent,
    ) -> Result<(), StoreError> {
        match event {
            StoreEvent::Enroll(rec) => {
                validate_record(&rec)?;
                records.insert(rec.user_id.clone(), rec);
            }
            StoreEvent::Counter { user_id, consecutive_failures } => {
                if !records.contains_key(&user_id) {
                    return Err(StoreError::Corrupt(format!("counter event for unknown user {user_id}")));
                }
                failures.insert(user_id, consecutive_failures);
            }
            StoreEvent::Reset { user_id } => {
                if !records.contains_key(&user_id) {
                    return Err(StoreError::Corrupt(format!("reset event for unknown user {user_id}")));
                }
                failures.insert(user_id, 0);
            }
        }
        Ok(())
    }

    fn append(&mut self, event: &StoreEvent) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(event)
            .map_err(|e| StoreError::Corrupt(format!("event does not serialize: {e}")))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        self.appends += 1;
        if self.appends >= self.compact_every {
            self.compact()?;
        }
        Ok(())
    }

    /// Insert or replace a user's enrollment. The failure counter, if any, is
    /// left untouched: re-enrolling changes the template, not the user's
    /// standing.
    pub fn put_record(&mut self, rec: EnrollmentRecord) -> Result<(), StoreError> {
        validate_record(&rec)?;
        self.append(&StoreEvent::Enroll(rec.clone()))?;
        self.records.insert(rec.user_id.clone(), rec);
        Ok(())
    }

    /// Persist a user's consecutive-failure count.
    pub fn set_failures(&mut self, user_id: &str, consecutive_failures: u32) -> Result<(), StoreError> {
        if !self.records.contains_key(user_id) {
            return Err(StoreError::Corrupt(format!("counter update for unknown user {user_id}")));
        }
        self.append(&StoreEvent::Counter {
            user_id: user_id.to_string(),
            consecutive_failures,
        })?;
        self.failures.insert(user_id.to_string(), consecutive_failures);
        Ok(())
    }

    /// Clear a user's failure counter with an audited `reset` event.
    pub fn audit_reset(&mut self, user_id: &str) -> Result<(), StoreError> {
        if !self.records.contains_key(user_id) {
            return Err(StoreError::Corrupt(format!("reset for unknown user {user_id}")));
        }
        self.append(&StoreEvent::Reset { user_id: user_id.to_string() })?;
        self.failures.insert(user_id.to_string(), 0);
        Ok(())
    }

    /// A user's enrollment, if any.
    pub fn record(&self, user_id: &str) -> Option<&EnrollmentRecord> {
        self.records.get(user_id)
    }

    /// A user's consecutive-failure count (0 if never recorded).
    pub fn failures(&self, user_id: &str) -> u32 {
        self.failures.get(user_id).copied().unwrap_or(0)
    }

    /// All enrollments, in user order.
    pub fn iter_records(&self) -> impl Iterator<Item = &EnrollmentRecord> {
        self.records.values()
    }

    /// Number of enrolled users.
    pub fn n_users(&self) -> usize {
        self.records.len()
    }

    /// Rewrite the journal as a minimal snapshot via temp file + rename.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for rec in self.records.values() {
                let mut line = serde_json::to_string(&StoreEvent::Enroll(rec.clone()))
                    .map_err(|e| StoreError::Corrupt(format!("record does not serialize: {e}")))?;
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
            for (user_id, &n) in &self.failures {
                if n == 0 || !self.records.contains_key(user_id) {
                    continue;
                }
                let mut line = serde_json::to_string(&StoreEvent::Counter {
                    user_id: user_id.clone(),
                    consecutive_failures: n,
                })
                .map_err(|e| StoreError::Corrupt(format!("counter does not serialize: {e}")))?;
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        self.writer = BufWriter::new(OpenOptions::new().append(true).open(&self.path)?);
        self.appends = 0;
        Ok(())
    }

    /// Flush buffered writes and fsync the journal.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.writer.flush()?;
        self.writer.get_ref().sync_all()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_vec(dim: usize, hot: usize) -> Vec<f32> {
        let mut v = vec![0.0f32; dim];
        v[hot % dim] = 1.0;
        v
    }

    fn record(user: &str, shots: usize) -> EnrollmentRecord {
        EnrollmentRecord {
            user_id: user.to_string(),
            embeddings: (0..shots).map(|i| unit_vec(8, i)).collect(),
            created_at: 1_700_000_000_000,
            model_digest: "digest-a".to_string(),
        }
    }

    #[test]
    fn roundtrip_restart_preserves_records_and_counters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut s = Store::open(&path).unwrap();
            s.put_record(record("alice", 3)).unwrap();
            s.put_record(record("bob", 1)).unwrap();
            s.set_failures("alice", 2).unwrap();
            s.set_failures("bob", 4).unwrap();
        }
        let s = Store::open(&path).unwrap();
        assert_eq!(s.n_users(), 2);
        assert_eq!(s.record("alice").unwrap(), &record("alice", 3));
        assert_eq!(s.record("bob").unwrap(), &record("bob", 1));
        assert_eq!(s.failures("alice"), 2);
        assert_eq!(s.failures("bob"), 4);
        assert_eq!(s.failures("carol"), 0);
    }

    #[test]
    fn reenroll_replaces_and_keeps_counter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut s = Store::open(&path).unwrap();
        s.put_record(record("alice", 3)).unwrap();
        s.set_failures("alice", 2).unwrap();
        s.put_record(record("alice", 5)).unwrap();
        assert_eq!(s.n_users(), 1);
        assert_eq!(s.record("alice").unwrap().embeddings.len(), 5);
        assert_eq!(s.failures("alice"), 2);
        drop(s);
        let s = Store::open(&path).unwrap();
        assert_eq!(s.record("alice").unwrap().embeddings.len(), 5);
        assert_eq!(s.failures("alice"), 2);
    }

    #[test]
    fn counter_replay_takes_last_value_and_reset_clears() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut s = Store::open(&path).unwrap();
            s.put_record(record("alice", 1)).unwrap();
            for n in 1..=5 {
                s.set_failures("alice", n).unwrap();
            }
            s.audit_reset("alice").unwrap();
        }
        let s = Store::open(&path).unwrap();
        assert_eq!(s.failures("alice"), 0);
    }

    #[test]
    fn compaction_shrinks_journal_and_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut s = Store::open(&path).unwrap();
        s.put_record(record("alice", 2)).unwrap();
        s.put_record(record("bob", 2)).unwrap();
        for n in 1..=50 {
            s.set_failures("alice", n).unwrap();
        }
        s.set_failures("bob", 0).unwrap();
        s.compact().unwrap();
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        // Two enroll lines plus alice's nonzero counter; bob's zero counter
        // is the default and is dropped.
        assert_eq!(lines, 3);
        let s2 = Store::open(&path).unwrap();
        assert_eq!(s2.failures("alice"), 50);
        assert_eq!(s2.failures("bob"), 0);
        assert_eq!(s2.record("bob").unwrap(), &record("bob", 2));
    }

    #[test]
    fn auto_compaction_triggers_after_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut s = Store::open(&path).unwrap();
        s.compact_every = 8;
        s.put_record(record("alice", 1)).unwrap();
        for n in 1..=20 {
            s.set_failures("alice", n % 4).unwrap();
        }
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert!(lines < 8, "journal should have been compacted, has {lines} lines");
        let s2 = Store::open(&path).unwrap();
        assert_eq!(s2.failures("alice"), 20 % 4);
    }

    #[test]
    fn torn_tail_is_dropped_but_corrupt_line_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut s = Store::open(&path).unwrap();
            s.put_record(record("alice", 1)).unwrap();
        }
        // Torn append: no trailing newline — ignored.
        let mut content = std::fs::read_to_string(&path).unwrap();
        content.push_str("{\"type\":\"counter\",\"user_id\":\"ali");
        std::fs::write(&path, &content).unwrap();
        let s = Store::open(&path).unwrap();
        assert_eq!(s.failures("alice"), 0);
        // The same garbage with a newline is a corrupt interior line.
        let mut content = std::fs::read_to_string(&path).unwrap();
        content.push_str("{\"type\":\"counter\",\"user_id\":\"ali\n");
        content.push_str("{\"type\":\"reset\",\"user_id\":\"alice\"}\n");
        std::fs::write(&path, &content).unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn counter_for_unknown_user_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(&path, "{\"type\":\"counter\",\"user_id\":\"ghost\",\"consecutive_failures\":1}\n")
            .unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn non_unit_or_malformed_embeddings_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut bad_norm = record("alice", 1);
        bad_norm.embeddings[0][0] = 2.0;
        let mut none = record("bob", 1);
        none.embeddings.clear();
        let mut too_many = record("carol", 1);
        too_many.embeddings = (0..MAX_SHOTS + 1).map(|i| unit_vec(8, i)).collect();
        for rec in [bad_norm, none, too_many] {
            let line = format!("{}\n", serde_json::to_string(&StoreEvent::Enroll(rec)).unwrap());
            std::fs::write(&path, &line).unwrap();
            assert!(matches!(Store::open(&path), Err(StoreError::Corrupt(_))));
        }
    }

    #[test]
    fn put_record_rejects_invalid_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut s = Store::open(&path).unwrap();
        let mut bad = record("alice", 1);
        bad.embeddings[0][0] = 0.5;
        assert!(matches!(s.put_record(bad), Err(StoreError::Corrupt(_))));
        assert_eq!(s.n_users(), 0);
    }

    #[test]
    fn open_creates_missing_journal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fresh.jsonl");
        let s = Store::open(&path).unwrap();
        assert_eq!(s.n_users(), 0);
        assert!(path.exists());
    }
}
