//! The assembled verification model.
//!
//! An [`AuthModel`] bundles the Siamese embedding network (shared weights
//! serve both branches), the element-wise absolute-difference distance
//! function, the decision network, the calibrated accept threshold, and the
//! n-shot verifier, plus save/load for the whole artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SensorKind, Window, N_CHANNELS};
use crate::nn::{forward_infer, Activation, LayerSpec, NetSpec, NnError, ParamSet, Tensor};
use crate::rng::derive_seed;

/// Dimension of the embedding space (unit hypersphere).
pub const EMBED_DIM: usize = 32;

/// On-disk model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The 9 channel names in fixed concatenation order.
pub const CHANNEL_NAMES: [&str; 9] =
    ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z"];

const TAG_EMBED_INIT: u64 = 0x454d4249;
const TAG_DECIDE_INIT: u64 = 0x44454349;

/// Which sensor channels a model consumes: all nine, or one sensor's three
/// (single-modality models feed score fusion).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSubset {
    All,
    Single(SensorKind),
}

impl ChannelSubset {
    pub fn n_channels(self) -> usize {
        match self {
            ChannelSubset::All => N_CHANNELS,
            ChannelSubset::Single(_) => 3,
        }
    }

    /// Indices into the fixed 9-channel order.
    pub fn channel_indices(self) -> Vec<usize> {
        match self {
            ChannelSubset::All => (0..N_CHANNELS).collect(),
            ChannelSubset::Single(kind) => (kind.channel_base()..kind.channel_base() + 3).collect(),
        }
    }

    pub fn channel_names(self) -> Vec<String> {
        self.channel_indices().into_iter().map(|i| CHANNEL_NAMES[i].to_string()).collect()
    }

    pub fn label(self) -> String {
        match self {
            ChannelSubset::All => "all".into(),
            ChannelSubset::Single(kind) => kind.as_str().into(),
        }
    }
}

impl std::fmt::Display for ChannelSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Errors raised by model assembly, inference, and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("enrollment is empty")]
    NoEnrollment,
    #[error("model has no calibrated threshold")]
    NotCalibrated,
    #[error("incompatible model file: {0}")]
    Incompatible(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn lift(e: NnError) -> ModelError {
    match e {
        NnError::Incompatible(m) => ModelError::Incompatible(m),
        NnError::Corrupt(m) => ModelError::Corrupt(m),
        other => ModelError::Nn(other),
    }
}

/// The embedding network: three widening convolutions (64→128→256, kernels
/// 5/5/3, L2 1e-3), each followed by batch norm and ReLU, then max-pool 4,
/// flatten, a linear projection to 32 units, and L2 normalization onto the
/// unit sphere. Input shape `[window_samples, channels]`.
pub fn embedding_net_spec(window_samples: usize, channels: usize) -> NetSpec {
    NetSpec::new(
        vec![window_samples, channels],
        vec![
            LayerSpec::Conv1d { filters: 64, kernel: 5, l2: 1e-3 },
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::Conv1d { filters: 128, kernel: 5, l2: 1e-3 },
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::Conv1d { filters: 256, kernel: 3, l2: 1e-3 },
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::MaxPool1d { pool: 4 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: EMBED_DIM, activation: Activation::None, l2: 0.0 },
            LayerSpec::L2Normalize,
        ],
    )
}

/// The decision network: dense layers of decreasing width (32→16→1, ReLU,
/// L2 1e-3) with batch norm after the first two and dropout 0.25 before the
/// final sigmoid unit. Input: the 32-dim distance vector.
pub fn decision_net_spec() -> NetSpec {
    NetSpec::new(
        vec![EMBED_DIM],
        vec![
            LayerSpec::Dense { units: 32, activation: Activation::Relu, l2: 1e-3 },
            LayerSpec::batch_norm(),
            LayerSpec::Dense { units: 16, activation: Activation::Relu, l2: 1e-3 },
            LayerSpec::batch_norm(),
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid, l2: 0.0 },
        ],
    )
}

/// Element-wise absolute difference of two embeddings; its L2 norm equals
/// their Euclidean distance.
pub fn distance_vector(e1: &[f32], e2: &[f32]) -> Vec<f32> {
    assert_eq!(e1.len(), e2.len(), "embedding dimensions differ");
    e1.iter().zip(e2).map(|(a, b)| (a - b).abs()).collect()
}

/// Stack raw channel-major window values (nine `window_samples`-long channel
/// slices per row) into a `[B, W, C]` network input, keeping only the
/// channels named by `subset`.
pub fn stack_windows(
    rows: &[&[f32]],
    window_samples: usize,
    subset: ChannelSubset,
) -> Result<Tensor<f32>, NnError> {
    let w = window_samples;
    let channels = subset.channel_indices();
    let c = channels.len();
    let mut x = Tensor::zeros(&[rows.len(), w, c]);
    let data = x.data_mut();
    for (b, row) in rows.iter().enumerate() {
        if row.len() != N_CHANNELS * w {
            return Err(NnError::ShapeError(format!(
                "window has {} values, expected {} ({} channels × {} samples)",
                row.len(),
                N_CHANNELS * w,
                N_CHANNELS,
                w
            )));
        }
        for (ci, &ch) in channels.iter().enumerate() {
            let src = &row[ch * w..(ch + 1) * w];
            for (t, &v) in src.iter().enumerate() {
                data[(b * w + t) * c + ci] = v;
            }
        }
    }
    Ok(x)
}

/// How n-shot per-enrollment scores aggregate into one verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NShotAggregation {
    /// Mean of the per-shot probabilities, accepted iff ≥ threshold.
    MeanScore,
    /// Fraction of shots whose probability meets the threshold, accepted iff
    /// a strict majority does (ties reject).
    MajorityVote,
}

fn mean_score(per_shot: &[f64]) -> f64 {
    per_shot.iter().sum::<f64>() / per_shot.len() as f64
}

/// A complete verification model, trained and optionally calibrated.
#[derive(Clone, Debug)]
pub struct AuthModel {
    pub embedding_spec: NetSpec,
    pub decision_spec: NetSpec,
    pub embedding: ParamSet<f32>,
    pub decision: ParamSet<f32>,
    pub window_seconds: u32,
    pub period_ms: i64,
    pub channel_subset: ChannelSubset,
    /// Accept threshold in (0,1); present only after calibration.
    pub threshold: Option<f64>,
    /// Free-form provenance (seeds, config digests).
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    window_seconds: u32,
    period_ms: i64,
    channel_subset: ChannelSubset,
    channel_order: Vec<String>,
    threshold: Option<f64>,
    embedding_spec: NetSpec,
    decision_spec: NetSpec,
    meta: BTreeMap<String, String>,
}

impl AuthModel {
    /// Freshly initialized (untrained, uncalibrated) model.
    pub fn new_untrained(
        window_seconds: u32,
        channel_subset: ChannelSubset,
        seed: u64,
    ) -> Result<AuthModel, ModelError> {
        let window_samples = crate::data::samples_per_channel(window_seconds, crate::data::DEFAULT_PERIOD_MS);
        let embedding_spec = embedding_net_spec(window_samples, channel_subset.n_channels());
        let decision_spec = decision_net_spec();
        let embedding = embedding_spec.init_params::<f32>(derive_seed(seed, &[TAG_EMBED_INIT]))?;
        let decision = decision_spec.init_params::<f32>(derive_seed(seed, &[TAG_DECIDE_INIT]))?;
        Ok(AuthModel {
            embedding_spec,
            decision_spec,
            embedding,
            decision,
            window_seconds,
            period_ms: crate::data::DEFAULT_PERIOD_MS,
            channel_subset,
            threshold: None,
            meta: BTreeMap::new(),
        })
    }

    /// Samples per channel the model expects.
    pub fn window_samples(&self) -> usize {
        crate::data::samples_per_channel(self.window_seconds, self.period_ms)
    }

    /// Record the calibrated accept threshold.
    pub fn set_threshold(&mut self, t: f64) {
        assert!(t > 0.0 && t < 1.0, "threshold must lie in (0,1), got {t}");
        self.threshold = Some(t);
    }

    /// Stack raw channel-major window values `[9 × W]` into the network's
    /// `[B, W, C]` input, selecting the model's channel subset.
    fn to_input(&self, rows: &[&[f32]]) -> Result<Tensor<f32>, ModelError> {
        stack_windows(rows, self.window_samples(), self.channel_subset).map_err(lift)
    }

    /// Embed a batch of windows (inference mode): returns `[B, 32]`.
    pub fn embed_batch(&self, windows: &[Window]) -> Result<Tensor<f32>, ModelError> {
        let rows: Vec<&[f32]> = windows.iter().map(|w| w.values.as_slice()).collect();
        let x = self.to_input(&rows)?;
        forward_infer(&self.embedding_spec, &self.embedding, &x).map_err(lift)
    }

    /// Embed a batch of raw channel-major value rows: returns `[B, 32]`.
    pub fn embed_rows(&self, rows: &[&[f32]]) -> Result<Tensor<f32>, ModelError> {
        let x = self.to_input(rows)?;
        forward_infer(&self.embedding_spec, &self.embedding, &x).map_err(lift)
    }

    /// Embed one window (inference mode): a unit-norm 32-vector.
    pub fn embed_window(&self, window: &Window) -> Result<Vec<f32>, ModelError> {
        Ok(self.embed_batch(std::slice::from_ref(window))?.into_data())
    }

    /// Embed raw channel-major values (`9 × W`, fixed channel order).
    pub fn embed_values(&self, values: &[f32]) -> Result<Vec<f32>, ModelError> {
        let x = self.to_input(&[values])?;
        Ok(forward_infer(&self.embedding_spec, &self.embedding, &x).map_err(lift)?.into_data())
    }

    /// Decision probability for a batch of distance vectors `[B, 32]`.
    pub fn decide_batch(&self, d: &Tensor<f32>) -> Result<Vec<f64>, ModelError> {
        let y = forward_infer(&self.decision_spec, &self.decision, d).map_err(lift)?;
        Ok(y.data().iter().map(|&v| v as f64).collect())
    }

    /// Decision probability (same user) for one 32-dim distance vector.
    pub fn decide(&self, d: &[f32]) -> Result<f64, ModelError> {
        let t = Tensor::from_vec(&[1, d.len()], d.to_vec()).map_err(ModelError::Nn)?;
        Ok(self.decide_batch(&t)?[0])
    }

    /// Per-enrollment decision probabilities for one probe.
    fn per_shot_scores(&self, probe: &Window, enrollment: &[Vec<f32>]) -> Result<Vec<f64>, ModelError> {
        if enrollment.is_empty() {
            return Err(ModelError::NoEnrollment);
        }
        let probe_e = self.embed_window(probe)?;
        let mut d = Tensor::zeros(&[enrollment.len(), EMBED_DIM]);
        for (i, e) in enrollment.iter().enumerate() {
            let dv = distance_vector(&probe_e, e);
            d.data_mut()[i * EMBED_DIM..(i + 1) * EMBED_DIM].copy_from_slice(&dv);
        }
        self.decide_batch(&d)
    }

    /// n-shot score: mean decision probability of the probe against each
    /// enrollment embedding.
    pub fn score_nshot(&self, probe: &Window, enrollment: &[Vec<f32>]) -> Result<f64, ModelError> {
        Ok(mean_score(&self.per_shot_scores(probe, enrollment)?))
    }

    /// n-shot verification with the given aggregation rule.
    pub fn verify_nshot_with(
        &self,
        probe: &Window,
        enrollment: &[Vec<f32>],
        agg: NShotAggregation,
    ) -> Result<(f64, bool), ModelError> {
        let threshold = self.threshold.ok_or(ModelError::NotCalibrated)?;
        let shots = self.per_shot_scores(probe, enrollment)?;
        Ok(match agg {
            NShotAggregation::MeanScore => {
                let score = mean_score(&shots);
                (score, score >= threshold)
            }
            NShotAggregation::MajorityVote => {
                let accepts = shots.iter().filter(|&&s| s >= threshold).count();
                let score = accepts as f64 / shots.len() as f64;
                (score, 2 * accepts > shots.len())
            }
        })
    }

    /// n-shot verification with mean-score aggregation: accept iff the mean
    /// probability is ≥ the calibrated threshold.
    pub fn verify_nshot(&self, probe: &Window, enrollment: &[Vec<f32>]) -> Result<(f64, bool), ModelError> {
        self.verify_nshot_with(probe, enrollment, NShotAggregation::MeanScore)
    }

    /// Combined digest over both parameter sets (hex SHA-256).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.embedding.digest().as_bytes());
        h.update(self.decision.digest().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write the model artifact: one JSON metadata line, then the embedding
    /// and decision parameter blocks.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            window_seconds: self.window_seconds,
            period_ms: self.period_ms,
            channel_subset: self.channel_subset,
            channel_order: self.channel_subset.channel_names(),
            threshold: self.threshold,
            embedding_spec: self.embedding_spec.clone(),
            decision_spec: self.decision_spec.clone(),
            meta: self.meta.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        let line = serde_json::to_string(&header).expect("header serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        self.embedding.save(&mut w).map_err(lift)?;
        self.decision.save(&mut w).map_err(lift)?;
        w.flush()?;
        Ok(())
    }

    /// Read a model artifact written by [`AuthModel::save`].
    pub fn load(path: &Path) -> Result<AuthModel, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        {
            use std::io::BufRead;
            if r.read_line(&mut line)? == 0 {
                return Err(ModelError::Corrupt("empty model file".into()));
            }
        }
        let header: ModelHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| ModelError::Corrupt(format!("bad metadata: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Incompatible(format!(
                "model format_version {} (supported: {MODEL_FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.channel_order != header.channel_subset.channel_names() {
            return Err(ModelError::Corrupt("channel order does not match channel subset".into()));
        }
        let embedding = ParamSet::<f32>::load(&mut r).map_err(lift)?;
        let decision = ParamSet::<f32>::load(&mut r).map_err(lift)?;
        let model = AuthModel {
            embedding_spec: header.embedding_spec,
            decision_spec: header.decision_spec,
            embedding,
            decision,
            window_seconds: header.window_seconds,
            period_ms: header.period_ms,
            channel_subset: header.channel_subset,
            threshold: header.threshold,
            meta: header.meta,
        };
        model.validate_shapes()?;
        Ok(model)
    }

    /// Check that the loaded parameters carry exactly the names and shapes
    /// the specs define.
    fn validate_shapes(&self) -> Result<(), ModelError> {
        for (spec, params, which) in [
            (&self.embedding_spec, &self.embedding, "embedding"),
            (&self.decision_spec, &self.decision, "decision"),
        ] {
            let reference = spec.init_params::<f32>(0).map_err(ModelError::Nn)?;
            if reference.len() != params.len() {
                return Err(ModelError::Corrupt(format!(
                    "{which} parameters: {} tensors, spec defines {}",
                    params.len(),
                    reference.len()
                )));
            }
            for (name, entry) in reference.iter() {
                let got = params
                    .get(name)
                    .map_err(|_| ModelError::Corrupt(format!("{which} parameters: missing tensor {name}")))?;
                if got.shape() != entry.tensor.shape() {
                    return Err(ModelError::Corrupt(format!(
                        "{which} parameters: tensor {name} has shape {:?}, spec defines {:?}",
                        got.shape(),
                        entry.tensor.shape()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_window(seed: u64, samples: usize) -> Window {
        let mut rng = crate::rng::rng(seed);
        use rand::Rng;
        Window {
            user_id: "u".into(),
            source_session_id: "s".into(),
            offset_index: 0,
            window_seconds: 1,
            values: (0..N_CHANNELS * samples).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn tiny_model() -> AuthModel {
        // A real 1 s model is exercised in integration tests; unit tests use
        // the same architecture on full-size input but run few forwards.
        AuthModel::new_untrained(1, ChannelSubset::All, 42).unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let m = tiny_model();
        let w = toy_window(1, m.window_samples());
        let e1 = m.embed_window(&w).unwrap();
        let e2 = m.embed_window(&w).unwrap();
        assert_eq!(e1.len(), EMBED_DIM);
        assert_eq!(e1, e2);
        let norm: f32 = e1.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
    }

    #[test]
    fn shape_pipeline_matches_the_derived_table() {
        // 1 s: [200,9] → … → [50,256] → 12,800 flattened features.
        let upto_flatten = |w: usize| {
            let mut spec = embedding_net_spec(w, 9);
            spec.layers.truncate(11); // through Flatten
            spec.output_dim().unwrap()
        };
        assert_eq!(upto_flatten(200), 12_800);
        assert_eq!(upto_flatten(600), 38_400); // 3 s: 150 × 256
        assert_eq!(embedding_net_spec(200, 9).output_dim().unwrap(), EMBED_DIM);
        assert_eq!(decision_net_spec().output_dim().unwrap(), 1);
    }

    #[test]
    fn distance_vector_examples() {
        let mut e1 = vec![0.0f32; EMBED_DIM];
        let mut e2 = vec![0.0f32; EMBED_DIM];
        e1[0] = 1.0;
        e2[1] = 1.0;
        assert_eq!(distance_vector(&e1, &e1), vec![0.0; EMBED_DIM]);
        let d = distance_vector(&e1, &e2);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 1.0);
        let norm: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 2.0f32.sqrt()).abs() < 1e-6);
        assert_eq!(distance_vector(&e1, &e2), distance_vector(&e2, &e1));
    }

    #[test]
    fn decide_stays_in_the_open_unit_interval() {
        let m = tiny_model();
        let mut rng = crate::rng::rng(4);
        use rand::Rng;
        for _ in 0..16 {
            let d: Vec<f32> = (0..EMBED_DIM).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = m.decide(&d).unwrap();
            assert!(p > 0.0 && p < 1.0, "{p}");
        }
        let err = m.decide(&[0.0; 16]).unwrap_err();
        assert!(matches!(err, ModelError::Nn(NnError::ShapeError(_))), "{err:?}");
    }

    #[test]
    fn nshot_mean_aggregation_arithmetic() {
        let score = mean_score(&[0.9, 0.7, 0.8]);
        assert!((score - 0.8).abs() < 1e-12);
        assert!(score >= 0.276); // accepted at the calibrated example threshold
        assert!(mean_score(&[0.1, 0.1, 0.1]) < 0.276);
        assert_eq!(mean_score(&[0.42]), 0.42);
    }

    #[test]
    fn verify_nshot_thresholds_and_errors() {
        let mut m = tiny_model();
        let probe = toy_window(2, m.window_samples());
        let enroll: Vec<Vec<f32>> = (0..3)
            .map(|i| m.embed_window(&toy_window(10 + i, m.window_samples())).unwrap())
            .collect();

        assert!(matches!(m.verify_nshot(&probe, &enroll), Err(ModelError::NotCalibrated)));
        m.set_threshold(0.5);
        assert!(matches!(m.verify_nshot(&probe, &[]), Err(ModelError::NoEnrollment)));

        let (score, _) = m.verify_nshot(&probe, &enroll).unwrap();
        let single = m.score_nshot(&probe, &enroll[..1].to_vec()).unwrap();
        let d = distance_vector(&m.embed_window(&probe).unwrap(), &enroll[0]);
        assert!((single - m.decide(&d).unwrap()).abs() < 1e-9);

        // Permutation invariance of the enrollment sequence.
        let mut rev = enroll.clone();
        rev.reverse();
        let (score_rev, _) = m.verify_nshot(&probe, &rev).unwrap();
        assert!((score - score_rev).abs() < 1e-9);

        // Accept iff score ≥ threshold, at the boundary too.
        m.set_threshold(score.clamp(1e-9, 1.0 - 1e-9));
        let (_, accept) = m.verify_nshot(&probe, &enroll).unwrap();
        assert!(accept);
        m.set_threshold((score + 1e-6).clamp(1e-9, 1.0 - 1e-9));
        let (_, accept) = m.verify_nshot(&probe, &enroll).unwrap();
        assert!(!accept);
    }

    #[test]
    fn majority_vote_requires_a_strict_majority() {
        let mut m = tiny_model();
        m.set_threshold(0.5);
        let probe = toy_window(3, m.window_samples());
        let e = m.embed_window(&probe).unwrap(); // identical probe → distance 0
        let far = m.embed_window(&toy_window(99, m.window_samples())).unwrap();
        let (score_same, _) = m.verify_nshot_with(&probe, &[e.clone()], NShotAggregation::MajorityVote).unwrap();
        let (score_far, _) = m.verify_nshot_with(&probe, &[far], NShotAggregation::MajorityVote).unwrap();
        // Vote scores are shot fractions: 0 or 1 for a single shot.
        assert!(score_same == 0.0 || score_same == 1.0);
        assert!(score_far == 0.0 || score_far == 1.0);
    }

    #[test]
    fn single_modality_models_use_three_channels() {
        let m = AuthModel::new_untrained(1, ChannelSubset::Single(SensorKind::Gyroscope), 7).unwrap();
        assert_eq!(m.embedding_spec.input, vec![200, 3]);
        let w = toy_window(5, m.window_samples());
        let e = m.embed_window(&w).unwrap();
        let norm: f32 = e.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(m.channel_subset.channel_names(), vec!["gyro_x", "gyro_y", "gyro_z"]);
        // Zeroing the gyro channels changes the embedding; zeroing acc does not.
        let mut w2 = w.clone();
        for v in &mut w2.values[0..200] {
            *v = 0.0;
        }
        assert_eq!(m.embed_window(&w2).unwrap(), e);
        let mut w3 = w.clone();
        for v in &mut w3.values[600..800] {
            *v = 0.0;
        }
        assert_ne!(m.embed_window(&w3).unwrap(), e);
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut m = tiny_model();
        m.set_threshold(0.276);
        m.meta.insert("train_seed".into(), "7".into());
        m.save(&path).unwrap();
        let back = AuthModel::load(&path).unwrap();
        assert_eq!(back.threshold, Some(0.276));
        assert_eq!(back.meta.get("train_seed").map(String::as_str), Some("7"));
        assert_eq!(back.digest(), m.digest());
        let w = toy_window(8, m.window_samples());
        assert_eq!(m.embed_window(&w).unwrap(), back.embed_window(&w).unwrap());
    }

    #[test]
    fn truncated_and_future_version_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let m = tiny_model();
        m.save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        match AuthModel::load(&cut) {
            Err(ModelError::Corrupt(_)) | Err(ModelError::Io(_)) => {}
            other => panic!("expected corrupt/io error, got {other:?}"),
        }

        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[..header_end]).unwrap();
        header["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION + 1);
        let mut patched = serde_json::to_vec(&header).unwrap();
        patched.push(b'\n');
        patched.extend_from_slice(&bytes[header_end + 1..]);
        let fut = dir.path().join("future.bin");
        std::fs::write(&fut, patched).unwrap();
        assert!(matches!(AuthModel::load(&fut), Err(ModelError::Incompatible(_))));
    }
}
