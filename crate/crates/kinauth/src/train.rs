//! Two-stage training: metric learning for the embedding network, a
//! frozen-backbone decision stage, and threshold calibration.
//!
//! Stage 1 ([`train_siamese`]) fits the shared embedding network with online
//! semi-hard triplet mining (or the contrastive baseline) over a pool of
//! fixed-length windows. Stage 2 ([`train_decision`]) freezes those weights,
//! embeds the pool once, and fits the small decision head on labeled pairs
//! with binary cross-entropy. [`calibrate_threshold`] then picks the accept
//! threshold at the equal-error point of validation pair scores, and
//! [`train_pipeline`] chains all three into a calibrated [`AuthModel`].
//!
//! Every random choice — weight init, epoch shuffles, mining, dropout, pair
//! sampling — is drawn from a stream derived from the config seed and a
//! purpose tag, so a config fully determines the trained weights.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_pairs, DataError, PairSet, Window};
use crate::eval::{self, EvalError, ScoredTrial};
use crate::metric::{
    bce_batch_loss_grad, contrastive_batch_loss_grad, mine_semihard, triplet_batch_loss_grad,
    EmbeddingBatch, IndexPair, MetricError, TripletConfig,
};
use crate::model::{
    decision_net_spec, distance_vector, embedding_net_spec, stack_windows, AuthModel,
    ChannelSubset, ModelError, EMBED_DIM,
};
use crate::nn::{
    adam_step, backward, forward_infer, forward_train, l2_penalty, sgd_step, AdamConfig, NetSpec,
    NnError, OptimizerKind, ParamSet, Tensor,
};
use crate::rng::{derive_seed, sub_rng};

/// Seed-derivation tags (one per independent random stream).
const TAG_SIAMESE_INIT: u64 = 0x53_49_4e_49; // "SINI"
const TAG_DECISION_INIT: u64 = 0x44_49_4e_49; // "DINI"
const TAG_SHUFFLE: u64 = 0x53_48_55_46; // "SHUF"
const TAG_MINE: u64 = 0x4d_49_4e_45; // "MINE"
const TAG_DROPOUT: u64 = 0x44_52_4f_50; // "DROP"
const TAG_TRAIN_PAIRS: u64 = 0x54_50_41_52; // "TPAR"
const TAG_VAL_PAIRS: u64 = 0x56_50_41_52; // "VPAR"

/// Batches smaller than this are dropped: batch norm needs more than one
/// sample, and tiny remainders add gradient noise without signal.
const MIN_BATCH: usize = 4;

/// Training errors.
#[derive(Debug, Error)]
pub enum TrainError {
    /// An entire epoch produced no valid triplets (or, for the contrastive
    /// loss, no balanced pairs) — e.g. the pool holds a single user.
    #[error("training stalled at epoch {epoch}: no batch produced a usable loss")]
    TrainingStalled { epoch: usize },
    /// The pair set is unusable for decision training.
    #[error("bad pair set: {0}")]
    BadPairSet(String),
    /// All calibration scores are identical; no threshold separates anything.
    #[error("degenerate scores: all validation pair scores are identical")]
    DegenerateScores,
    /// The hyperparameter lattice has no points.
    #[error("empty search space")]
    EmptySearchSpace,
    /// A loss went NaN/Inf; training aborts rather than continue diverged.
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Stage-1 loss selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Triplet loss on squared distances with online semi-hard mining.
    SemiHardTriplet,
    /// Contrastive loss on unsquared distances over balanced in-batch pairs.
    Contrastive,
}

/// Stage-1 (embedding network) training configuration. Deserializes with
/// per-field defaults, so config files may name only what they override.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SiameseTrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Triplet margin on squared distances.
    pub alpha: f64,
    pub loss: LossKind,
    /// Margin for the contrastive baseline (unsquared distance).
    pub contrastive_margin: f64,
    pub seed: u64,
    pub channel_subset: ChannelSubset,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            alpha: 0.03,
            loss: LossKind::SemiHardTriplet,
            contrastive_margin: 1.0,
            seed: 7,
            channel_subset: ChannelSubset::All,
        }
    }
}

/// Stage-2 (decision network) training configuration. Deserializes with
/// per-field defaults, like [`SiameseTrainConfig`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionTrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Pairs drawn from the training pool for stage 2.
    pub n_train_pairs: usize,
    /// Pairs drawn from held-out users for calibration.
    pub n_test_pairs: usize,
    pub seed: u64,
}

impl Default for DecisionTrainConfig {
    fn default() -> Self {
        DecisionTrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            batch_size: 64,
            epochs: 10,
            n_train_pairs: 50_000,
            n_test_pairs: 10_000,
            seed: 7,
        }
    }
}

/// Aggregate mining behavior over a whole training run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MiningSummary {
    /// Ordered same-label pairs examined.
    pub pairs: usize,
    /// Mined triplets (semi-hard draws plus fallbacks).
    pub triplets: usize,
    /// Batches that contributed a gradient step.
    pub batches: usize,
    /// Fraction of pairs whose negative came from the semi-hard set.
    pub semi_hard_rate: f64,
    /// Fraction of pairs that fell back to the easiest hard negative.
    pub fallback_rate: f64,
    /// Fraction of pairs dropped for lack of any usable negative.
    pub skip_rate: f64,
    pub triplets_per_batch: f64,
}

/// What one training stage did: per-epoch mean losses (always exactly one
/// entry per configured epoch), the digest of the trained parameters, and,
/// for stage 1 with triplet loss, the mining summary.
#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub params_digest: String,
    /// Stage 2 only: digest of the frozen embedding parameters, recorded
    /// before and verified after training.
    pub frozen_digest: Option<String>,
    pub wall_time_s: f64,
    /// Echo of the config the stage actually ran with.
    pub config: serde_json::Value,
    pub mining: Option<MiningSummary>,
}

/// Output of threshold calibration on validation pairs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub eer: f64,
    pub far_at_t: f64,
    pub frr_at_t: f64,
}

/// Render a loss curve as a two-column CSV (epoch, mean loss).
pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        out.push_str(&format!("{e},{l:.6}\n"));
    }
    out
}

// ── stage 1: embedding network ──────────────────────────────────────────────

/// Map window owners to dense label ids (sorted user order).
fn window_labels(windows: &[Window]) -> Vec<usize> {
    let users: BTreeSet<&str> = windows.iter().map(|w| w.user_id.as_str()).collect();
    let ids: BTreeMap<&str, usize> =
        users.into_iter().enumerate().map(|(i, u)| (u, i)).collect();
    windows.iter().map(|w| ids[w.user_id.as_str()]).collect()
}

/// Draw balanced in-batch pairs for the contrastive loss: `⌊B/2⌋` pairs,
/// half genuine (a user with two windows in the batch) and half impostor.
/// Returns an empty vector when the batch cannot supply both kinds.
fn batch_pairs(labels: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<IndexPair> {
    use rand::Rng;
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let multi: Vec<&Vec<usize>> = by_label.values().filter(|v| v.len() >= 2).collect();
    let distinct: Vec<&Vec<usize>> = by_label.values().collect();
    if multi.is_empty() || distinct.len() < 2 {
        return Vec::new();
    }
    let n_pairs = labels.len() / 2;
    let n_pos = n_pairs / 2;
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pos {
        let group = multi[rng.gen_range(0..multi.len())];
        let i = rng.gen_range(0..group.len());
        let j = {
            let j = rng.gen_range(0..group.len() - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        };
        out.push(IndexPair { a: group[i], b: group[j], genuine: true });
    }
    for _ in 0..n_pairs - n_pos {
        let gi = rng.gen_range(0..distinct.len());
        let gj = {
            let j = rng.gen_range(0..distinct.len() - 1);
            if j >= gi {
                j + 1
            } else {
                j
            }
        };
        let a = distinct[gi][rng.gen_range(0..distinct[gi].len())];
        let b = distinct[gj][rng.gen_range(0..distinct[gj].len())];
        out.push(IndexPair { a, b, genuine: false });
    }
    out
}

/// Train the embedding network on a pool of uniform windows.
///
/// Each epoch reshuffles the pool (seeded), walks it in batches, embeds each
/// batch in training mode, mines triplets (or draws balanced pairs), and
/// applies one optimizer step per contributing batch. Gradients include the
/// L2 weight penalty, but the reported per-epoch loss is the batch mean of
/// the data term alone (mean triplet or contrastive loss). An epoch in
/// which no batch yields a usable loss aborts with
/// [`TrainError::TrainingStalled`]; a NaN/Inf objective aborts with
/// diagnostics.
pub fn train_siamese(
    windows: &[Window],
    cfg: &SiameseTrainConfig,
) -> Result<(ParamSet<f32>, TrainReport), TrainError> {
    assert!(!windows.is_empty(), "empty window pool");
    assert!(cfg.epochs >= 1, "epochs must be at least 1");
    assert!(cfg.batch_size >= MIN_BATCH, "batch size must be at least {MIN_BATCH}");
    assert!(cfg.lr.is_finite() && cfg.lr > 0.0, "learning rate must be positive");
    assert!(cfg.alpha > 0.0, "triplet margin must be positive");
    let start = Instant::now();

    let samples = windows[0].samples_per_channel();
    assert!(
        windows.iter().all(|w| w.samples_per_channel() == samples),
        "window pool is not uniform"
    );
    let labels = window_labels(windows);
    let rows: Vec<&[f32]> = windows.iter().map(|w| w.values.as_slice()).collect();

    let spec = embedding_net_spec(samples, cfg.channel_subset.n_channels());
    let mut params: ParamSet<f32> =
        spec.init_params(derive_seed(cfg.seed, &[TAG_SIAMESE_INIT]))?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let triplet_cfg = TripletConfig { alpha: cfg.alpha };

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut mining = MiningSummary::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut sub_rng(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut rng = sub_rng(cfg.seed, &[TAG_MINE, epoch as u64]);

        let mut epoch_loss = 0.0;
        let mut contributed = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < MIN_BATCH {
                continue;
            }
            let batch_rows: Vec<&[f32]> = chunk.iter().map(|&i| rows[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = stack_windows(&batch_rows, samples, cfg.channel_subset)?;
            let (y, tape) = forward_train(&spec, &mut params, &x, &mut rng)?;

            let (data_loss, grad_y) = match cfg.loss {
                LossKind::SemiHardTriplet => {
                    let batch = EmbeddingBatch::new(&y, &batch_labels)?;
                    match mine_semihard(&batch, &triplet_cfg, &mut rng) {
                        Ok((triplets, stats)) => {
                            mining.pairs += stats.pairs;
                            mining.semi_hard_rate += stats.semi_hard as f64;
                            mining.fallback_rate += stats.fallback as f64;
                            mining.skip_rate += stats.skipped as f64;
                            mining.triplets += triplets.len();
                            let (l, g) =
                                triplet_batch_loss_grad(&y, &triplets, cfg.alpha as f32)?;
                            (f64::from(l), g)
                        }
                        Err(MetricError::NoValidTriplets) => continue,
                        Err(e) => return Err(e.into()),
                    }
                }
                LossKind::Contrastive => {
                    let pairs = batch_pairs(&batch_labels, &mut rng);
                    if pairs.is_empty() {
                        continue;
                    }
                    let (l, g) =
                        contrastive_batch_loss_grad(&y, &pairs, cfg.contrastive_margin as f32)?;
                    (f64::from(l), g)
                }
            };
            let objective = data_loss + f64::from(l2_penalty(&spec, &params)?);
            if !objective.is_finite() {
                return Err(TrainError::NonFinite(format!(
                    "stage-1 objective is {objective} at epoch {epoch}, batch {bi}"
                )));
            }
            let (grads, _) = backward(&spec, &params, &tape, &grad_y)?;
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(&mut params, &grads, &adam)?,
                OptimizerKind::Sgd => sgd_step(&mut params, &grads, cfg.lr)?,
            }
            epoch_loss += data_loss;
            contributed += 1;
        }
        if contributed == 0 {
            return Err(TrainError::TrainingStalled { epoch });
        }
        mining.batches += contributed;
        curve.push(epoch_loss / contributed as f64);
    }

    if mining.pairs > 0 {
        let pairs = mining.pairs as f64;
        mining.semi_hard_rate /= pairs;
        mining.fallback_rate /= pairs;
        mining.skip_rate /= pairs;
        mining.triplets_per_batch = mining.triplets as f64 / mining.batches as f64;
    }
    let report = TrainReport {
        loss_curve: curve,
        params_digest: params.digest(),
        frozen_digest: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        mining: match cfg.loss {
            LossKind::SemiHardTriplet => Some(mining),
            LossKind::Contrastive => None,
        },
    };
    Ok((params, report))
}

// ── stage 2: decision network ────────────────────────────────────────────────

/// Embed every window referenced by `pairs` once (inference mode, frozen
/// weights) and return the embeddings keyed by window index.
fn embed_referenced(
    spec: &NetSpec,
    params: &ParamSet<f32>,
    subset: ChannelSubset,
    windows: &[Window],
    pairs: &PairSet,
) -> Result<BTreeMap<usize, Vec<f32>>, TrainError> {
    let samples = windows[0].samples_per_channel();
    let need: Vec<usize> = pairs
        .pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<BTreeSet<usize>>()
        .into_iter()
        .collect();
    let mut out = BTreeMap::new();
    for chunk in need.chunks(128) {
        let rows: Vec<&[f32]> = chunk.iter().map(|&i| windows[i].values.as_slice()).collect();
        let x = stack_windows(&rows, samples, subset)?;
        let e = forward_infer(spec, params, &x)?;
        for (k, &i) in chunk.iter().enumerate() {
            out.insert(i, e.data()[k * EMBED_DIM..(k + 1) * EMBED_DIM].to_vec());
        }
    }
    Ok(out)
}

/// Train the decision network on frozen embeddings.
///
/// The embedding parameters are never touched: every referenced window is
/// embedded once in inference mode, and only the decision head sees
/// gradients. The frozen parameters' digest is recorded before training and
/// checked after as a guard against accidental mutation. Rejects pair sets
/// whose class counts differ by more than one or that lack a class entirely.
pub fn train_decision(
    embedding_spec: &NetSpec,
    embedding: &ParamSet<f32>,
    subset: ChannelSubset,
    windows: &[Window],
    pairs: &PairSet,
    cfg: &DecisionTrainConfig,
) -> Result<(ParamSet<f32>, TrainReport), TrainError> {
    assert!(cfg.epochs >= 1, "epochs must be at least 1");
    assert!(cfg.batch_size >= MIN_BATCH, "batch size must be at least {MIN_BATCH}");
    let start = Instant::now();

    let n_pos = pairs.pairs.iter().filter(|p| p.genuine).count();
    let n_neg = pairs.pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::BadPairSet(format!(
            "both classes required, got {n_pos} genuine / {n_neg} impostor"
        )));
    }
    if n_pos.abs_diff(n_neg) > 1 {
        return Err(TrainError::BadPairSet(format!(
            "classes must balance within one pair, got {n_pos} genuine / {n_neg} impostor"
        )));
    }

    let frozen_digest = embedding.digest();
    let cache = embed_referenced(embedding_spec, embedding, subset, windows, pairs)?;

    let spec = decision_net_spec();
    let mut params: ParamSet<f32> =
        spec.init_params(derive_seed(cfg.seed, &[TAG_DECISION_INIT]))?;
    let adam = AdamConfig::with_lr(cfg.lr);

    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.pairs.len()).collect();
        order.shuffle(&mut sub_rng(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut dropout_rng = sub_rng(cfg.seed, &[TAG_DROPOUT, epoch as u64]);

        let mut epoch_loss = 0.0;
        let mut contributed = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < MIN_BATCH {
                continue;
            }
            let mut x = Tensor::zeros(&[chunk.len(), EMBED_DIM]);
            let mut targets = Vec::with_capacity(chunk.len());
            for (row, &pi) in chunk.iter().enumerate() {
                let p = &pairs.pairs[pi];
                let dv = distance_vector(&cache[&p.a], &cache[&p.b]);
                x.data_mut()[row * EMBED_DIM..(row + 1) * EMBED_DIM].copy_from_slice(&dv);
                targets.push(p.genuine);
            }
            let (y, tape) = forward_train(&spec, &mut params, &x, &mut dropout_rng)?;
            let (bce, grad_y) = bce_batch_loss_grad(&y, &targets)?;
            let objective = f64::from(bce) + f64::from(l2_penalty(&spec, &params)?);
            if !objective.is_finite() {
                return Err(TrainError::NonFinite(format!(
                    "stage-2 objective is {objective} at epoch {epoch}, batch {bi}"
                )));
            }
            let (grads, _) = backward(&spec, &params, &tape, &grad_y)?;
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(&mut params, &grads, &adam)?,
                OptimizerKind::Sgd => sgd_step(&mut params, &grads, cfg.lr)?,
            }
            epoch_loss += f64::from(bce);
            contributed += 1;
        }
        if contributed == 0 {
            return Err(TrainError::TrainingStalled { epoch });
        }
        curve.push(epoch_loss / contributed as f64);
    }

    assert_eq!(embedding.digest(), frozen_digest, "frozen embedding parameters were mutated");
    let report = TrainReport {
        loss_curve: curve,
        params_digest: params.digest(),
        frozen_digest: Some(frozen_digest),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        mining: None,
    };
    Ok((params, report))
}

// ── calibration ──────────────────────────────────────────────────────────────

/// Pick the accept threshold at the equal-error point of validation pair
/// scores. Fails with [`TrainError::DegenerateScores`] when every pair gets
/// the same score (an untrainable or collapsed model).
pub fn calibrate_threshold(
    model: &AuthModel,
    windows: &[Window],
    pairs: &PairSet,
) -> Result<CalibrationResult, TrainError> {
    let trials: Vec<ScoredTrial> = eval::score_pairs(model, windows, &pairs.pairs)?;
    let first = trials.first().map(|t| t.score);
    if trials.iter().all(|t| Some(t.score) == first) {
        return Err(TrainError::DegenerateScores);
    }
    let point = eval::eer(&trials)?;
    Ok(CalibrationResult {
        threshold: point.threshold,
        eer: point.eer,
        far_at_t: point.far,
        frr_at_t: point.frr,
    })
}

// ── full pipeline ────────────────────────────────────────────────────────────

/// Reports from both stages plus calibration.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub siamese: TrainReport,
    pub decision: TrainReport,
    pub calibration: CalibrationResult,
}

/// Run the full two-stage pipeline and return a calibrated model.
///
/// Stage-2 pairs are drawn from the training pool; calibration pairs come
/// from `val_windows`, which must belong to users the model never trained
/// on. The window length and sample period are inferred from the pool.
pub fn train_pipeline(
    train_windows: &[Window],
    val_windows: &[Window],
    siamese_cfg: &SiameseTrainConfig,
    decision_cfg: &DecisionTrainConfig,
) -> Result<(AuthModel, PipelineReport), TrainError> {
    assert!(!train_windows.is_empty(), "empty training pool");
    assert!(!val_windows.is_empty(), "empty validation pool");
    let samples = train_windows[0].samples_per_channel();
    let window_seconds = train_windows[0].window_seconds;
    let period_ms = i64::from(window_seconds) * 1000 / samples as i64;
    assert_eq!(
        (i64::from(window_seconds) * 1000) % samples as i64,
        0,
        "window length must be a whole number of sample periods"
    );

    let (embedding, siamese_report) = train_siamese(train_windows, siamese_cfg)?;
    let embedding_spec = embedding_net_spec(samples, siamese_cfg.channel_subset.n_channels());

    let train_pairs = sample_pairs(
        train_windows,
        decision_cfg.n_train_pairs,
        derive_seed(decision_cfg.seed, &[TAG_TRAIN_PAIRS]),
    )?;
    let (decision, decision_report) = train_decision(
        &embedding_spec,
        &embedding,
        siamese_cfg.channel_subset,
        train_windows,
        &train_pairs,
        decision_cfg,
    )?;

    let mut meta = BTreeMap::new();
    meta.insert("stage1.seed".into(), siamese_cfg.seed.to_string());
    meta.insert("stage1.loss".into(), format!("{:?}", siamese_cfg.loss));
    meta.insert("stage1.digest".into(), siamese_report.params_digest.clone());
    meta.insert("stage2.seed".into(), decision_cfg.seed.to_string());
    meta.insert("stage2.digest".into(), decision_report.params_digest.clone());
    let mut model = AuthModel {
        embedding_spec,
        decision_spec: decision_net_spec(),
        embedding,
        decision,
        window_seconds,
        period_ms,
        channel_subset: siamese_cfg.channel_subset,
        threshold: None,
        meta,
    };

    let val_pairs = sample_pairs(
        val_windows,
        decision_cfg.n_test_pairs,
        derive_seed(decision_cfg.seed, &[TAG_VAL_PAIRS]),
    )?;
    let calibration = calibrate_threshold(&model, val_windows, &val_pairs)?;
    model.set_threshold(calibration.threshold);

    Ok((model, PipelineReport { siamese: siamese_report, decision: decision_report, calibration }))
}

/// Train a single-modality matcher: the same pipeline restricted to one
/// sensor's three channels (the windows still carry all nine).
pub fn train_single_modality(
    train_windows: &[Window],
    val_windows: &[Window],
    kind: crate::data::SensorKind,
    siamese_cfg: &SiameseTrainConfig,
    decision_cfg: &DecisionTrainConfig,
) -> Result<(AuthModel, PipelineReport), TrainError> {
    let cfg = SiameseTrainConfig {
        channel_subset: ChannelSubset::Single(kind),
        ..siamese_cfg.clone()
    };
    train_pipeline(train_windows, val_windows, &cfg, decision_cfg)
}

// ── hyperparameter search ────────────────────────────────────────────────────

/// Hyperparameter lattice for [`grid_search`]. The default space is the
/// reference grid: 2 optimizers × 6 learning rates × 4 batch sizes × 7
/// margins = 336 points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSpace {
    pub optimizers: Vec<OptimizerKind>,
    pub lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            lrs: vec![1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5],
            batch_sizes: vec![64, 128, 256, 1024],
            alphas: vec![0.01, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2],
        }
    }
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.optimizers.len() * self.lrs.len() * self.batch_sizes.len() * self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One evaluated lattice point.
#[derive(Clone, Debug, Serialize)]
pub struct SearchOutcome {
    pub config: SiameseTrainConfig,
    /// Pair-level F1 on validation pairs at the calibrated threshold.
    pub f1: f64,
    pub eer: f64,
    pub threshold: f64,
}

/// True iff `a` beats `b`: higher F1, ties broken by lower learning rate,
/// then smaller batch size.
fn better(a: &SearchOutcome, b: &SearchOutcome) -> bool {
    if a.f1 != b.f1 {
        return a.f1 > b.f1;
    }
    if a.config.lr != b.config.lr {
        return a.config.lr < b.config.lr;
    }
    a.config.batch_size < b.config.batch_size
}

/// Exhaustive search over the lattice, maximizing validation F1.
///
/// Each point runs the full pipeline with `search_epochs` stage-1 epochs
/// when given (a cheaper proxy for ranking; rerun the winner at full length
/// afterwards). Returns the winning outcome plus every evaluated point in
/// lattice order.
pub fn grid_search(
    train_windows: &[Window],
    val_windows: &[Window],
    base: &SiameseTrainConfig,
    decision_cfg: &DecisionTrainConfig,
    space: &SearchSpace,
    search_epochs: Option<usize>,
) -> Result<(SearchOutcome, Vec<SearchOutcome>), TrainError> {
    if space.is_empty() {
        return Err(TrainError::EmptySearchSpace);
    }
    let mut table: Vec<SearchOutcome> = Vec::with_capacity(space.len());
    let mut best: Option<usize> = None;
    for &optimizer in &space.optimizers {
        for &lr in &space.lrs {
            for &batch_size in &space.batch_sizes {
                for &alpha in &space.alphas {
                    let cfg = SiameseTrainConfig {
                        optimizer,
                        lr,
                        batch_size,
                        alpha,
                        epochs: search_epochs.unwrap_or(base.epochs),
                        ..base.clone()
                    };
                    let (model, report) =
                        train_pipeline(train_windows, val_windows, &cfg, decision_cfg)?;
                    let val_pairs = sample_pairs(
                        val_windows,
                        decision_cfg.n_test_pairs,
                        derive_seed(decision_cfg.seed, &[TAG_VAL_PAIRS]),
                    )?;
                    let trials = eval::score_pairs(&model, val_windows, &val_pairs.pairs)?;
                    let threshold = report.calibration.threshold;
                    let (m, _) = eval::metrics_at(&trials, threshold)?;
                    let outcome = SearchOutcome {
                        config: cfg,
                        f1: m.f1,
                        eer: report.calibration.eer,
                        threshold,
                    };
                    match best {
                        Some(b) if !better(&outcome, &table[b]) => {}
                        _ => best = Some(table.len()),
                    }
                    table.push(outcome);
                }
            }
        }
    }
    let winner = table[best.expect("non-empty lattice")].clone();
    Ok((winner, table))
}
