//! Resampling onto a uniform time grid.
//!
//! The grid starts at the latest of the three sensors' first timestamps and
//! ends at the earliest of their last timestamps, stepping `period_ms`
//! (default 5 ms), so no channel is ever extrapolated. Each grid point takes
//! the mean of the raw samples falling in its half-open bin `[t, t+period)`;
//! an empty bin falls back to linear interpolation between the nearest raw
//! samples straddling `t`. Arithmetic runs in f64 and is truncated to f32 at
//! the end.

use super::{DataError, ResampledSession, SessionRecording, DEFAULT_PERIOD_MS};

/// Resample one axis onto the grid `t0, t0+period, …` (`n` points).
///
/// `ts` must be strictly increasing with `ts[0] <= t0` and
/// `ts[last] >= t0 + (n-1)*period`, which the session-level grid construction
/// guarantees.
fn resample_axis(ts: &[i64], vs: &[f64], t0: i64, period: i64, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize; // first sample with ts[i] >= current grid point
    for k in 0..n {
        let t = t0 + k as i64 * period;
        while i < ts.len() && ts[i] < t {
            i += 1;
        }
        let mut j = i;
        let mut sum = 0.0f64;
        while j < ts.len() && ts[j] < t + period {
            sum += vs[j];
            j += 1;
        }
        let value = if j > i {
            sum / (j - i) as f64
        } else {
            // Empty bin: ts[i-1] < t < ts[i] by the grid-bound guarantees.
            debug_assert!(i > 0 && i < ts.len());
            let (tp, vp) = (ts[i - 1] as f64, vs[i - 1]);
            let (tn, vn) = (ts[i] as f64, vs[i]);
            vp + (vn - vp) * ((t as f64 - tp) / (tn - tp))
        };
        out.push(value as f32);
        i = j;
    }
    out
}

/// Resample a session's three sensors onto one shared uniform grid, producing
/// the 9 fixed-order channels acc(x,y,z), gyro(x,y,z), mag(x,y,z).
pub fn resample(rec: &SessionRecording, period_ms: i64) -> Result<ResampledSession, DataError> {
    assert!(period_ms > 0, "period_ms must be positive");
    let t0 = rec.series.iter().map(|s| s.first_ms()).max().expect("three series");
    let end = rec.series.iter().map(|s| s.last_ms()).min().expect("three series");
    if end < t0 + period_ms {
        return Err(DataError::NoOverlap { session: rec.session_id.clone() });
    }
    let n = ((end - t0) / period_ms) as usize + 1;

    let mut channels = Vec::with_capacity(9);
    for series in &rec.series {
        let ts: Vec<i64> = series.samples.iter().map(|s| s.t_ms).collect();
        for axis in 0..3 {
            let vs: Vec<f64> = series.axis(axis).map(|(_, v)| v as f64).collect();
            channels.push(resample_axis(&ts, &vs, t0, period_ms, n));
        }
    }
    Ok(ResampledSession {
        user_id: rec.user_id.clone(),
        session_id: rec.session_id.clone(),
        posture: rec.posture,
        period_ms,
        t0_ms: t0,
        channels,
    })
}

/// [`resample`] at the default 5 ms period.
pub fn resample_default(rec: &SessionRecording) -> Result<ResampledSession, DataError> {
    resample(rec, DEFAULT_PERIOD_MS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Posture, SensorKind, SensorSample, SensorSeries};

    fn series(kind: SensorKind, pts: &[(i64, f32)]) -> SensorSeries {
        SensorSeries {
            kind,
            samples: pts.iter().map(|&(t, v)| SensorSample { t_ms: t, x: v, y: 2.0 * v, z: -v }).collect(),
        }
    }

    fn session(acc: &[(i64, f32)], gyr: &[(i64, f32)], mag: &[(i64, f32)]) -> SessionRecording {
        SessionRecording {
            user_id: "u".into(),
            session_id: "s".into(),
            posture: Posture::Sitting,
            series: [
                series(SensorKind::Accelerometer, acc),
                series(SensorKind::Gyroscope, gyr),
                series(SensorKind::Magnetometer, mag),
            ],
        }
    }

    #[test]
    fn gap_is_linearly_interpolated() {
        let pts = [(0, 0.0), (10, 10.0)];
        let rs = resample(&session(&pts, &pts, &pts), 5).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs.channels[0], vec![0.0, 5.0, 10.0]);
        assert_eq!(rs.channels[1], vec![0.0, 10.0, 20.0]); // y axis = 2v
        assert_eq!(rs.channels[8], vec![0.0, -5.0, -10.0]); // z axis = -v
    }

    #[test]
    fn dense_bin_takes_the_mean() {
        // Four samples inside the first bin [0, 5): their mean lands on t=0.
        let dense = [(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (10, 0.0)];
        let sparse = [(0, 0.0), (10, 0.0)];
        let rs = resample(&session(&dense, &sparse, &sparse), 5).unwrap();
        // The dense series begins at 1 ms, so t0 = 1 and the first bin [1, 6)
        // holds the values 1, 2, 3, 4.
        assert_eq!(rs.t0_ms, 1);
        assert_eq!(rs.channels[0][0], 2.5);
    }

    #[test]
    fn bin_mean_at_a_shared_origin() {
        // Same four-sample bin but all series start at 0, so the grid point
        // t = 0 owns the bin [0, 5) containing values 1, 2, 3, 4.
        let dense = [(0, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (10, 0.0)];
        let sparse = [(0, 0.0), (10, 0.0)];
        let rs = resample(&session(&dense, &sparse, &sparse), 5).unwrap();
        assert_eq!(rs.t0_ms, 0);
        assert_eq!(rs.channels[0][0], 2.5);
    }

    #[test]
    fn grid_covers_the_intersection_of_time_ranges() {
        let every = |a: i64, b: i64| -> Vec<(i64, f32)> { (a..=b).step_by(5).map(|t| (t, t as f32)).collect() };
        let rec = session(&every(0, 90_000), &every(1_000, 91_000), &every(0, 95_000));
        let rs = resample(&rec, 5).unwrap();
        assert_eq!(rs.t0_ms, 1_000);
        assert_eq!(rs.len(), 17_801); // floor(89000/5) + 1
    }

    #[test]
    fn uniform_input_is_reproduced_exactly() {
        let pts: Vec<(i64, f32)> = (0..200).map(|i| (i * 5, (i as f32 * 0.37).sin())).collect();
        let rs = resample(&session(&pts, &pts, &pts), 5).unwrap();
        let want: Vec<f32> = pts.iter().map(|&(_, v)| v).collect();
        assert_eq!(rs.channels[0], want);
    }

    #[test]
    fn disjoint_ranges_are_rejected() {
        let a = [(0, 0.0), (100, 1.0)];
        let b = [(500, 0.0), (600, 1.0)];
        let err = resample(&session(&a, &b, &a), 5).unwrap_err();
        assert!(matches!(err, DataError::NoOverlap { .. }), "{err:?}");
    }
}
