//! Core dataset types shared across the pipeline.

use serde::{Deserialize, Serialize};

/// Nominal resampling period (ms).
pub const DEFAULT_PERIOD_MS: i64 = 5;

/// Number of concatenated channels in a window: 3 axes × 3 sensors.
pub const N_CHANNELS: usize = 9;

/// Window lengths (seconds) the evaluation grid covers.
pub const WINDOW_SECONDS: [u32; 5] = [1, 3, 5, 10, 15];

/// One of the three motion sensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Accelerometer,
    Gyroscope,
    Magnetometer,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Accelerometer, SensorKind::Gyroscope, SensorKind::Magnetometer];

    /// Index of this sensor's first channel in the fixed 9-channel order
    /// acc(x,y,z), gyro(x,y,z), mag(x,y,z).
    pub fn channel_base(self) -> usize {
        match self {
            SensorKind::Accelerometer => 0,
            SensorKind::Gyroscope => 3,
            SensorKind::Magnetometer => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Accelerometer => "accelerometer",
            SensorKind::Gyroscope => "gyroscope",
            SensorKind::Magnetometer => "magnetometer",
        }
    }
}

impl std::fmt::Display for SensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Phone placement during a recording session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Sitting,
    Standing,
    OnTable,
}

impl Posture {
    pub const ALL: [Posture; 3] = [Posture::Sitting, Posture::Standing, Posture::OnTable];

    /// Position of this posture in [`Posture::ALL`].
    pub fn index(self) -> usize {
        match self {
            Posture::Sitting => 0,
            Posture::Standing => 1,
            Posture::OnTable => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Posture::Sitting => "sitting",
            Posture::Standing => "standing",
            Posture::OnTable => "on_table",
        }
    }
}

impl std::fmt::Display for Posture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw sensor sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorSample {
    pub t_ms: i64,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

/// One sensor's raw time series. Invariants (checked at parse/build time):
/// timestamps strictly increasing, at least 2 samples.
#[derive(Clone, Debug)]
pub struct SensorSeries {
    pub kind: SensorKind,
    pub samples: Vec<SensorSample>,
}

impl SensorSeries {
    pub fn first_ms(&self) -> i64 {
        self.samples.first().map(|s| s.t_ms).unwrap_or(0)
    }

    pub fn last_ms(&self) -> i64 {
        self.samples.last().map(|s| s.t_ms).unwrap_or(0)
    }

    /// Values of one axis (0 = x, 1 = y, 2 = z) as (t, v) pairs.
    pub fn axis(&self, axis: usize) -> impl Iterator<Item = (i64, f32)> + '_ {
        self.samples.iter().map(move |s| {
            let v = match axis {
                0 => s.x,
                1 => s.y,
                _ => s.z,
            };
            (s.t_ms, v)
        })
    }
}

/// One recording session: all three sensors for one user in one posture.
#[derive(Clone, Debug)]
pub struct SessionRecording {
    pub user_id: String,
    pub session_id: String,
    pub posture: Posture,
    /// Exactly one series per sensor kind, in [`SensorKind::ALL`] order.
    pub series: [SensorSeries; 3],
}

/// A session resampled onto a uniform grid: 9 equal-length channels in the
/// fixed order acc(x,y,z), gyro(x,y,z), mag(x,y,z).
#[derive(Clone, Debug)]
pub struct ResampledSession {
    pub user_id: String,
    pub session_id: String,
    pub posture: Posture,
    pub period_ms: i64,
    /// First grid timestamp (max of the sensors' first timestamps).
    pub t0_ms: i64,
    pub channels: Vec<Vec<f32>>,
}

impl ResampledSession {
    /// Grid length (samples per channel).
    pub fn len(&self) -> usize {
        self.channels.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One sliding window: the 9 channels' contiguous slices concatenated in
/// fixed channel order, so `values.len() = 9 × samples_per_channel`.
/// `offset_index` is the window ordinal within its session (the sample
/// offset is `offset_index × step`).
#[derive(Clone, Debug)]
pub struct Window {
    pub user_id: String,
    pub source_session_id: String,
    pub offset_index: usize,
    pub window_seconds: u32,
    pub values: Vec<f32>,
}

impl Window {
    /// Samples per channel.
    pub fn samples_per_channel(&self) -> usize {
        self.values.len() / N_CHANNELS
    }

    /// The contiguous slice of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let w = self.samples_per_channel();
        &self.values[c * w..][..w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_channel_bases_cover_the_nine_channels() {
        let bases: Vec<usize> = SensorKind::ALL.iter().map(|s| s.channel_base()).collect();
        assert_eq!(bases, vec![0, 3, 6]);
    }

    #[test]
    fn posture_serde_uses_snake_case() {
        assert_eq!(serde_json::to_string(&Posture::OnTable).unwrap(), "\"on_table\"");
        let p: Posture = serde_json::from_str("\"sitting\"").unwrap();
        assert_eq!(p, Posture::Sitting);
    }
}
