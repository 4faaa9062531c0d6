//! Sliding windows over resampled sessions, plus an optional binary cache.
//!
//! A window of `window_seconds` covers `window_seconds × 1000 / period`
//! samples per channel; the stride is one tenth of that (integer division),
//! and each window concatenates the 9 channels' contiguous slices in fixed
//! channel order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, ResampledSession, Window, N_CHANNELS};

/// Start offsets (in samples) of the sliding windows over a channel of
/// `len` samples with `window` samples per window. The stride is
/// `window / 10` (integer division, floored at 1), so the offsets are
/// `0, step, 2·step, …` and their count is `⌊(len − window)/step⌋ + 1`.
/// Returns an empty vector when `len < window`.
pub fn window_offsets(len: usize, window: usize) -> Vec<usize> {
    if len < window || window == 0 {
        return Vec::new();
    }
    let step = (window / 10).max(1);
    (0..=(len - window) / step).map(|k| k * step).collect()
}

/// Samples per channel for a window of `window_seconds` at `period_ms`.
pub fn samples_per_channel(window_seconds: u32, period_ms: i64) -> usize {
    assert!(period_ms > 0 && 1000 % period_ms == 0, "period must divide 1000 ms");
    window_seconds as usize * (1000 / period_ms) as usize
}

/// Cut the labeled sliding windows of one resampled session.
pub fn make_windows(rs: &ResampledSession, window_seconds: u32) -> Result<Vec<Window>, DataError> {
    let w = samples_per_channel(window_seconds, rs.period_ms);
    let len = rs.len();
    if len < w {
        return Err(DataError::TooShort { len, window: w });
    }
    let offsets = window_offsets(len, w);
    let mut out = Vec::with_capacity(offsets.len());
    for (k, &off) in offsets.iter().enumerate() {
        let mut values = Vec::with_capacity(N_CHANNELS * w);
        for channel in &rs.channels {
            values.extend_from_slice(&channel[off..off + w]);
        }
        out.push(Window {
            user_id: rs.user_id.clone(),
            source_session_id: rs.session_id.clone(),
            offset_index: k,
            window_seconds,
            values,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    count: usize,
    window_seconds: u32,
    dim: usize,
    user_ids: Vec<String>,
}

/// Write a window pool to a binary cache: one JSON header line
/// `{count, window_seconds, dim, user_ids}` followed by the row-major
/// little-endian f32 payload.
pub fn save_window_cache(path: &Path, windows: &[Window]) -> Result<(), DataError> {
    let dim = windows.first().map(|w| w.values.len()).unwrap_or(0);
    let window_seconds = windows.first().map(|w| w.window_seconds).unwrap_or(0);
    for w in windows {
        if w.values.len() != dim || w.window_seconds != window_seconds {
            return Err(DataError::Manifest("window cache requires uniform window size".into()));
        }
    }
    let header = CacheHeader {
        count: windows.len(),
        window_seconds,
        dim,
        user_ids: windows.iter().map(|w| w.user_id.clone()).collect(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(|e| DataError::Manifest(e.to_string()))?;
    out.write_all(b"\n")?;
    for w in windows {
        for v in &w.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Load a window cache written by [`save_window_cache`]. The cache keeps
/// labels and values only; restored windows carry the synthetic session id
/// `"cache"` and their row index as `offset_index`.
pub fn load_window_cache(path: &Path) -> Result<Vec<Window>, DataError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = Vec::new();
    {
        use std::io::BufRead;
        reader.read_until(b'\n', &mut header_line)?;
    }
    let header: CacheHeader = serde_json::from_slice(&header_line)
        .map_err(|e| DataError::Manifest(format!("{}: bad cache header: {e}", path.display())))?;
    if header.user_ids.len() != header.count {
        return Err(DataError::Manifest(format!(
            "{}: header lists {} user ids for {} rows",
            path.display(),
            header.user_ids.len(),
            header.count
        )));
    }
    let mut windows = Vec::with_capacity(header.count);
    let mut buf = vec![0u8; header.dim * 4];
    for (row, user_id) in header.user_ids.into_iter().enumerate() {
        reader.read_exact(&mut buf)?;
        let values: Vec<f32> = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        windows.push(Window {
            user_id,
            source_session_id: "cache".into(),
            offset_index: row,
            window_seconds: header.window_seconds,
            values,
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Posture;

    fn toy_session(len: usize) -> ResampledSession {
        let channels = (0..N_CHANNELS)
            .map(|c| (0..len).map(|i| (c * 10_000 + i) as f32).collect())
            .collect();
        ResampledSession {
            user_id: "u7".into(),
            session_id: "u7_s0".into(),
            posture: Posture::Standing,
            period_ms: 5,
            t0_ms: 0,
            channels,
        }
    }

    #[test]
    fn count_matches_the_stride_formula() {
        assert_eq!(window_offsets(18_000, 200).len(), 891);
        assert_eq!(window_offsets(18_000, 600).len(), 291);
        assert_eq!(window_offsets(200, 200), vec![0]);
    }

    #[test]
    fn one_second_windows_over_a_ninety_second_session() {
        let ws = make_windows(&toy_session(18_000), 1).unwrap();
        assert_eq!(ws.len(), 891);
        assert!(ws.iter().all(|w| w.values.len() == 1_800));
        assert!(ws.iter().all(|w| w.user_id == "u7"));
        // Second window starts at sample 20; channel 3's slice follows
        // channels 0..3 in the concatenation.
        assert_eq!(ws[1].offset_index, 1);
        assert_eq!(ws[1].values[0], 20.0);
        assert_eq!(ws[1].channel(3)[0], 30_020.0);
    }

    #[test]
    fn three_second_windows() {
        let ws = make_windows(&toy_session(18_000), 3).unwrap();
        assert_eq!(ws.len(), 291);
        assert_eq!(ws[0].values.len(), 5_400);
    }

    #[test]
    fn exact_fit_yields_one_window() {
        let ws = make_windows(&toy_session(200), 1).unwrap();
        assert_eq!(ws.len(), 1);
    }

    #[test]
    fn short_channel_is_rejected() {
        let err = make_windows(&toy_session(150), 1).unwrap_err();
        assert!(matches!(err, DataError::TooShort { len: 150, window: 200 }), "{err:?}");
    }

    #[test]
    fn cache_roundtrip_preserves_labels_and_values() {
        let ws = make_windows(&toy_session(400), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.bin");
        save_window_cache(&path, &ws).unwrap();
        let back = load_window_cache(&path).unwrap();
        assert_eq!(back.len(), ws.len());
        for (a, b) in ws.iter().zip(&back) {
            assert_eq!(a.user_id, b.user_id);
            assert_eq!(a.window_seconds, b.window_seconds);
            assert_eq!(a.values, b.values);
        }
    }
}
