//! Deterministic synthetic multi-user dataset generator.
//!
//! Each synthetic user is a profile of per-channel sinusoid parameters
//! (base frequency, amplitude, phase — emitted together with a second
//! harmonic at 2f and 0.4× amplitude), AR(1)-smoothed Gaussian noise, and
//! per-posture channel offsets. Sessions are emitted at jittered timestamps
//! (nominal 5 ms ± 2 ms) with a small per-sensor start offset, so the
//! resampler's mean/interpolation paths are both exercised. Everything is a
//! pure function of the seeds, which makes generated corpora byte-stable.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{SessionManifest, CSV_HEADER};
use super::{DataError, Posture, SensorKind, SensorSample, SensorSeries, SessionRecording};
use crate::rng::{self, derive_seed};

const TAG_PROFILE: u64 = 0x50524f46;
const TAG_SESSION: u64 = 0x53455353;
const TAG_USER: u64 = 0x55534552;

/// Default noise level for generated corpora (stationary std of the AR(1)
/// component, in the same units as the sinusoid amplitudes).
pub const DEFAULT_NOISE_STD: f64 = 0.3;

/// The per-user signal model.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthUserProfile {
    pub user_id: String,
    /// Base sinusoid frequency per channel (Hz), all > 0.
    pub freqs_hz: [f64; 9],
    /// Sinusoid amplitude per channel.
    pub amplitudes: [f64; 9],
    /// Sinusoid phase per channel (radians).
    pub phases: [f64; 9],
    /// AR(1) smoothness coefficient of the noise, in [0, 1).
    pub ar_coeff: f64,
    /// Stationary standard deviation of the noise, ≥ 0.
    pub noise_std: f64,
    /// Additive per-channel bias, indexed by [`Posture::index`].
    pub posture_offsets: [[f64; 9]; 3],
}

/// Draw a deterministic user profile from a user seed.
pub fn gen_profile(user_seed: u64) -> SynthUserProfile {
    let mut rng = rng::sub_rng(user_seed, &[TAG_PROFILE]);
    let mut freqs_hz = [0.0; 9];
    let mut amplitudes = [0.0; 9];
    let mut phases = [0.0; 9];
    for c in 0..9 {
        freqs_hz[c] = rng.gen_range(0.8..3.2);
        amplitudes[c] = rng.gen_range(0.6..1.4);
        phases[c] = rng.gen_range(0.0..TAU);
    }
    let ar_coeff = rng.gen_range(0.55..0.9);
    let mut posture_offsets = [[0.0; 9]; 3];
    for row in &mut posture_offsets {
        for v in row.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    SynthUserProfile {
        user_id: format!("user{user_seed}"),
        freqs_hz,
        amplitudes,
        phases,
        ar_coeff,
        noise_std: DEFAULT_NOISE_STD,
        posture_offsets,
    }
}

/// Standard normal draw (Box–Muller).
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Noiseless part of a channel's signal at time `t_s` (seconds).
fn clean_signal(p: &SynthUserProfile, posture: Posture, c: usize, t_s: f64) -> f64 {
    let base = p.amplitudes[c] * (TAU * p.freqs_hz[c] * t_s + p.phases[c]).sin();
    let harmonic = 0.4 * p.amplitudes[c] * (2.0 * TAU * p.freqs_hz[c] * t_s + 2.0 * p.phases[c]).sin();
    base + harmonic + p.posture_offsets[posture.index()][c]
}

/// Generate one session of `duration_s` seconds for a profile. Fully
/// determined by `(profile, posture, session_seed)`.
pub fn gen_session(
    profile: &SynthUserProfile,
    duration_s: u32,
    posture: Posture,
    session_seed: u64,
) -> SessionRecording {
    assert!(duration_s >= 2, "sessions must be at least 2 s long");
    let user_tag = fnv1a(&profile.user_id);
    let duration_ms = duration_s as i64 * 1000;
    // Noise increments scaled so the AR(1) state's stationary std equals
    // noise_std: n_k = ar·n_{k-1} + std·sqrt(1-ar²)·g_k.
    let sigma_step = profile.noise_std * (1.0 - profile.ar_coeff * profile.ar_coeff).sqrt();

    let mut series = Vec::with_capacity(3);
    for (si, kind) in SensorKind::ALL.into_iter().enumerate() {
        let mut rng = rng::rng(derive_seed(session_seed, &[TAG_SESSION, user_tag, posture.index() as u64, si as u64]));
        let mut t = rng.gen_range(0..=10i64); // per-sensor start offset
        let mut state = [0.0f64; 3];
        let mut samples = Vec::with_capacity(duration_ms as usize / 4);
        while t <= duration_ms {
            let t_s = t as f64 / 1000.0;
            let mut axes = [0.0f32; 3];
            for (axis, v) in axes.iter_mut().enumerate() {
                let c = si * 3 + axis;
                state[axis] = profile.ar_coeff * state[axis] + sigma_step * gauss(&mut rng);
                *v = (clean_signal(profile, posture, c, t_s) + state[axis]) as f32;
            }
            samples.push(SensorSample { t_ms: t, x: axes[0], y: axes[1], z: axes[2] });
            t += rng.gen_range(3..=7i64); // nominal 5 ms ± 2 ms jitter
        }
        series.push(SensorSeries { kind, samples });
    }

    SessionRecording {
        user_id: profile.user_id.clone(),
        session_id: format!("{}-{}-{}", profile.user_id, posture.as_str(), session_seed),
        posture,
        series: series.try_into().expect("exactly three sensors"),
    }
}

/// Shape of a generated corpus.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub duration_s: u32,
    pub seed: u64,
    /// Overrides every profile's noise level when set.
    pub noise_std: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_users: 45, sessions_per_user: 3, duration_s: 90, seed: 7, noise_std: None }
    }
}

/// Generate a full corpus: per user one profile, then `sessions_per_user`
/// sessions cycling through the postures in [`Posture::ALL`] order.
pub fn gen_dataset(cfg: &SynthConfig) -> Vec<SessionRecording> {
    let mut out = Vec::with_capacity(cfg.n_users * cfg.sessions_per_user);
    for u in 0..cfg.n_users {
        let mut profile = gen_profile(derive_seed(cfg.seed, &[TAG_USER, u as u64]));
        profile.user_id = format!("user{u:03}");
        if let Some(ns) = cfg.noise_std {
            profile.noise_std = ns;
        }
        for k in 0..cfg.sessions_per_user {
            let posture = Posture::ALL[k % 3];
            let session_seed = derive_seed(cfg.seed, &[TAG_SESSION, u as u64, k as u64]);
            let mut rec = gen_session(&profile, cfg.duration_s, posture, session_seed);
            rec.session_id = format!("user{u:03}_s{k:02}");
            out.push(rec);
        }
    }
    out
}

/// Write sessions as sensor CSVs plus a dataset manifest (`manifest.json`)
/// into `dir`; returns the manifest path. Output is byte-stable for equal
/// inputs.
pub fn write_dataset(dir: &Path, recs: &[SessionRecording]) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir)?;
    let mut manifests = Vec::with_capacity(recs.len());
    for rec in recs {
        let mut names = Vec::with_capacity(3);
        for series in &rec.series {
            let name = format!("{}_{}.csv", rec.session_id, series.kind);
            let mut f = BufWriter::new(File::create(dir.join(&name))?);
            writeln!(f, "{CSV_HEADER}")?;
            for s in &series.samples {
                writeln!(f, "{},{},{},{}", s.t_ms, s.x, s.y, s.z)?;
            }
            f.flush()?;
            names.push(name);
        }
        manifests.push(SessionManifest {
            user_id: rec.user_id.clone(),
            session_id: rec.session_id.clone(),
            posture: rec.posture,
            accelerometer: names[0].clone(),
            gyroscope: names[1].clone(),
            magnetometer: names[2].clone(),
        });
    }
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifests).map_err(|e| DataError::Manifest(e.to_string()))?;
    text.push('\n');
    std::fs::write(&manifest_path, text)?;
    Ok(manifest_path)
}
