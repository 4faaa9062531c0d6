//! Session/dataset manifests and sensor CSV ingest.
//!
//! A session manifest is a JSON object naming the user, the session, the
//! posture, and one CSV per sensor. A dataset manifest is a JSON array of
//! session manifests. Sensor CSVs carry the header `timestamp_ms,x,y,z`;
//! relative CSV paths are resolved against the manifest's directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Posture, SensorKind, SensorSample, SensorSeries, SessionRecording};

/// Expected header row of every sensor CSV.
pub const CSV_HEADER: &str = "timestamp_ms,x,y,z";

/// On-disk description of one recording session.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionManifest {
    pub user_id: String,
    pub session_id: String,
    pub posture: Posture,
    pub accelerometer: String,
    pub gyroscope: String,
    pub magnetometer: String,
}

impl SessionManifest {
    fn sensor_path(&self, kind: SensorKind) -> &str {
        match kind {
            SensorKind::Accelerometer => &self.accelerometer,
            SensorKind::Gyroscope => &self.gyroscope,
            SensorKind::Magnetometer => &self.magnetometer,
        }
    }
}

/// Parse one sensor CSV into a validated series.
pub fn parse_sensor_csv(path: &Path, kind: SensorKind) -> Result<SensorSeries, DataError> {
    let display = path.display().to_string();
    let malformed = |line: Option<u64>, msg: String| DataError::MalformedSeries {
        path: display.clone(),
        line,
        msg,
    };

    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    {
        let headers = reader.headers().map_err(|e| malformed(Some(1), e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["timestamp_ms", "x", "y", "z"] {
            return Err(malformed(Some(1), format!("expected header `{CSV_HEADER}`, got `{}`", got.join(","))));
        }
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map(|p| p.line());
        if record.len() != 4 {
            return Err(malformed(line, format!("expected 4 fields, got {}", record.len())));
        }
        let t_ms: i64 = record[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad timestamp `{}`", &record[0])))?;
        let mut axes = [0.0f32; 3];
        for (i, v) in axes.iter_mut().enumerate() {
            let field = &record[i + 1];
            *v = field
                .parse()
                .map_err(|_| malformed(line, format!("bad value `{field}`")))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("non-finite value `{field}`")));
            }
        }
        if let Some(prev) = samples.last() {
            let prev: &SensorSample = prev;
            if t_ms <= prev.t_ms {
                return Err(malformed(
                    line,
                    format!("timestamps not strictly increasing ({} after {})", t_ms, prev.t_ms),
                ));
            }
        }
        samples.push(SensorSample { t_ms, x: axes[0], y: axes[1], z: axes[2] });
    }

    if samples.len() < 2 {
        return Err(malformed(None, format!("series needs at least 2 samples, got {}", samples.len())));
    }
    Ok(SensorSeries { kind, samples })
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load the session a manifest describes, reading and validating all three
/// sensor CSVs.
pub fn load_session(manifest: &SessionManifest, base_dir: &Path) -> Result<SessionRecording, DataError> {
    let mut series = Vec::with_capacity(3);
    for kind in SensorKind::ALL {
        let path = resolve(base_dir, manifest.sensor_path(kind));
        if !path.is_file() {
            return Err(DataError::MissingModality { session: manifest.session_id.clone(), sensor: kind });
        }
        series.push(parse_sensor_csv(&path, kind)?);
    }
    let series: [SensorSeries; 3] = series.try_into().expect("exactly three sensors");
    if manifest.user_id.is_empty() {
        return Err(DataError::Manifest(format!("session {}: empty user_id", manifest.session_id)));
    }
    Ok(SessionRecording {
        user_id: manifest.user_id.clone(),
        session_id: manifest.session_id.clone(),
        posture: manifest.posture,
        series,
    })
}

/// Parse a single-session manifest file into a [`SessionRecording`].
pub fn parse_session(manifest_path: &Path) -> Result<SessionRecording, DataError> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: SessionManifest = serde_json::from_str(&text)
        .map_err(|e| DataError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    load_session(&manifest, base)
}

/// Parse a dataset manifest (JSON array of session manifests) and load every
/// session it names.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SessionRecording>, DataError> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifests: Vec<SessionManifest> = serde_json::from_str(&text)
        .map_err(|e| DataError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifests.iter().map(|m| load_session(m, base)).collect()
}
