//! Score normalization and score-level fusion.
//!
//! A [`ScoreMatrix`] holds one matching score per trial and matcher (here:
//! the three single-modality verifiers). Normalizer statistics are fit on
//! training scores only and frozen; five fusion methods then map a
//! normalized score row to a single decision score in (0, 1):
//!
//! * plain sum and EER-weighted sum, each followed by a sigmoid-activated
//!   linear calibration of the fused scalar,
//! * linear regression (least squares on 0/1 labels, sigmoid at decision
//!   time),
//! * logistic regression and a one-hidden-layer MLP, both trained with
//!   binary cross-entropy on the shared nn machinery.
//!
//! Every fitted model carries its normalizer and an equal-error-rate
//! threshold calibrated on its own training scores, so evaluation on held-out
//! trials needs nothing but the raw score matrix.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, ScoredTrial};
use crate::metric::{bce_batch_loss_grad, MetricError};
use crate::nn::{
    adam_step, backward, forward_infer, forward_train, Activation, AdamConfig, LayerSpec,
    NetSpec, NnError, ParamSet, Tensor,
};
use crate::rng::{derive_seed, sub_rng};

const TAG_FUSION_INIT: u64 = 0x4655_494e; // "FUIN"
const TAG_FUSION_EPOCH: u64 = 0x4655_4550; // "FUEP"

/// Smallest per-matcher EER used when weighting; zero EERs are clamped here
/// so a perfect matcher dominates the sum without zeroing everyone else out.
pub const MIN_EER: f64 = 1e-6;

/// Errors from normalization, fitting, or score-file handling.
#[derive(Debug, Error)]
pub enum FusionError {
    /// A normalizer statistic is undefined (constant column).
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),
    /// A fit cannot be computed (single-class labels, singular system, …).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    /// Mismatched row/weight/matcher counts.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A score file does not parse.
    #[error("bad score file: {0}")]
    BadScoreFile(String),
    /// A method or normalization name does not parse.
    #[error("unknown name: {0}")]
    UnknownName(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

// ── score matrix ─────────────────────────────────────────────────────────────

/// Per-trial matching scores of `R` matchers, with genuine/impostor labels.
///
/// Rows are trials, columns are matchers; all scores must be finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    matcher_names: Vec<String>,
    labels: Vec<bool>,
    /// Row-major `[n_trials × n_matchers]`.
    scores: Vec<f64>,
}

impl ScoreMatrix {
    /// Build a matrix from row-major scores; `scores.len()` must equal
    /// `labels.len() × matcher_names.len()` and every value must be finite.
    pub fn new(
        matcher_names: Vec<String>,
        labels: Vec<bool>,
        scores: Vec<f64>,
    ) -> Result<Self, FusionError> {
        if matcher_names.is_empty() {
            return Err(FusionError::ShapeMismatch("need at least one matcher".into()));
        }
        if scores.len() != labels.len() * matcher_names.len() {
            return Err(FusionError::ShapeMismatch(format!(
                "{} scores for {} trials × {} matchers",
                scores.len(),
                labels.len(),
                matcher_names.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(FusionError::ShapeMismatch(format!("non-finite score {bad}")));
        }
        Ok(ScoreMatrix { matcher_names, labels, scores })
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn n_matchers(&self) -> usize {
        self.matcher_names.len()
    }

    pub fn matcher_names(&self) -> &[String] {
        &self.matcher_names
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Scores of trial `i`, one per matcher.
    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.n_matchers();
        &self.scores[i * r..(i + 1) * r]
    }

    /// Scores of matcher `j` across all trials.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_trials()).map(|i| self.row(i)[j]).collect()
    }

    /// Matcher `j`'s scores as labeled trials (for per-matcher metrics).
    pub fn column_trials(&self, j: usize) -> Vec<ScoredTrial> {
        (0..self.n_trials())
            .map(|i| ScoredTrial { score: self.row(i)[j], genuine: self.labels[i] })
            .collect()
    }

    fn check_two_classes(&self) -> Result<(), FusionError> {
        let genuine = self.labels.iter().filter(|&&g| g).count();
        if genuine == 0 || genuine == self.labels.len() {
            return Err(FusionError::DegenerateFit(format!(
                "need both classes, got {genuine} genuine of {} trials",
                self.labels.len()
            )));
        }
        Ok(())
    }

    fn select(&self, idx: &[usize]) -> ScoreMatrix {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let mut scores = Vec::with_capacity(idx.len() * self.n_matchers());
        for &i in idx {
            scores.extend_from_slice(self.row(i));
        }
        ScoreMatrix { matcher_names: self.matcher_names.clone(), labels, scores }
    }
}

const TAG_FUSION_SPLIT: u64 = 0x4655_5350; // "FUSP"

/// Split trials into fit/eval halves, stratified by label (a seeded shuffle
/// within each class, `train_frac` of each class to the first half, original
/// trial order preserved within halves). Both halves must end up with at
/// least one trial of each class.
pub fn split_scores(
    m: &ScoreMatrix,
    train_frac: f64,
    seed: u64,
) -> Result<(ScoreMatrix, ScoreMatrix), FusionError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(FusionError::ShapeMismatch(format!(
            "train fraction must lie in (0,1), got {train_frac}"
        )));
    }
    let mut rng = sub_rng(seed, &[TAG_FUSION_SPLIT]);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..m.n_trials()).filter(|&i| m.labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(FusionError::DegenerateFit(format!(
                "stratified split needs ≥ 2 trials per class, got {} {}",
                idx.len(),
                if class { "genuine" } else { "impostor" }
            )));
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64) * train_frac).round() as usize;
        let k = k.clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..k]);
        test_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((m.select(&train_idx), m.select(&test_idx)))
}

// ── normalization ────────────────────────────────────────────────────────────

/// Which normalization to apply before fusing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    ZScore,
    MinMax,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::None, NormKind::ZScore, NormKind::MinMax];
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::None => "none",
            NormKind::ZScore => "zscore",
            NormKind::MinMax => "minmax",
        })
    }
}

impl std::str::FromStr for NormKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NormKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| FusionError::UnknownName(format!("normalization {s:?}")))
    }
}

/// Frozen per-matcher normalization statistics, fit on training scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Normalizer {
    /// Pass scores through unchanged.
    None { n_matchers: usize },
    /// `(s − μ_j)/σ_j` with the population standard deviation.
    ZScore { means: Vec<f64>, stds: Vec<f64> },
    /// `(s − min_j)/(max_j − min_j)`. Training values map into [0, 1]; test
    /// values outside the training range fall outside it (the method is not
    /// robust to unseen extremes, by design).
    MinMax { mins: Vec<f64>, maxs: Vec<f64> },
}

impl Normalizer {
    pub fn kind(&self) -> NormKind {
        match self {
            Normalizer::None { .. } => NormKind::None,
            Normalizer::ZScore { .. } => NormKind::ZScore,
            Normalizer::MinMax { .. } => NormKind::MinMax,
        }
    }

    pub fn n_matchers(&self) -> usize {
        match self {
            Normalizer::None { n_matchers } => *n_matchers,
            Normalizer::ZScore { means, .. } => means.len(),
            Normalizer::MinMax { mins, .. } => mins.len(),
        }
    }

    /// Normalize one score row in place of the raw values.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, FusionError> {
        if row.len() != self.n_matchers() {
            return Err(FusionError::ShapeMismatch(format!(
                "row has {} scores, normalizer knows {} matchers",
                row.len(),
                self.n_matchers()
            )));
        }
        Ok(match self {
            Normalizer::None { .. } => row.to_vec(),
            Normalizer::ZScore { means, stds } => row
                .iter()
                .zip(means.iter().zip(stds))
                .map(|(s, (m, sd))| (s - m) / sd)
                .collect(),
            Normalizer::MinMax { mins, maxs } => row
                .iter()
                .zip(mins.iter().zip(maxs))
                .map(|(s, (lo, hi))| (s - lo) / (hi - lo))
                .collect(),
        })
    }
}

/// Fit normalization statistics on training scores only.
pub fn fit_normalizer(train: &ScoreMatrix, kind: NormKind) -> Result<Normalizer, FusionError> {
    let r = train.n_matchers();
    if train.n_trials() == 0 {
        return Err(FusionError::DegenerateColumn("no training scores".into()));
    }
    match kind {
        NormKind::None => Ok(Normalizer::None { n_matchers: r }),
        NormKind::ZScore => {
            let n = train.n_trials() as f64;
            let mut means = Vec::with_capacity(r);
            let mut stds = Vec::with_capacity(r);
            for j in 0..r {
                let col = train.column(j);
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                if std <= 0.0 {
                    return Err(FusionError::DegenerateColumn(format!(
                        "matcher `{}` has zero variance",
                        train.matcher_names[j]
                    )));
                }
                means.push(mean);
                stds.push(std);
            }
            Ok(Normalizer::ZScore { means, stds })
        }
        NormKind::MinMax => {
            let mut mins = Vec::with_capacity(r);
            let mut maxs = Vec::with_capacity(r);
            for j in 0..r {
                let col = train.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi <= lo {
                    return Err(FusionError::DegenerateColumn(format!(
                        "matcher `{}` has a constant score range",
                        train.matcher_names[j]
                    )));
                }
                mins.push(lo);
                maxs.push(hi);
            }
            Ok(Normalizer::MinMax { mins, maxs })
        }
    }
}

/// Apply a fitted normalizer to a whole matrix (labels and names carry over).
pub fn apply_normalizer(n: &Normalizer, m: &ScoreMatrix) -> Result<ScoreMatrix, FusionError> {
    let mut scores = Vec::with_capacity(m.scores.len());
    for i in 0..m.n_trials() {
        scores.extend(n.apply_row(m.row(i))?);
    }
    Ok(ScoreMatrix { matcher_names: m.matcher_names.clone(), labels: m.labels.clone(), scores })
}

// ── fusion rules ─────────────────────────────────────────────────────────────

/// Weighted sum of one normalized score row.
pub fn fuse_sum(ns: &[f64], weights: &[f64]) -> Result<f64, FusionError> {
    if ns.len() != weights.len() {
        return Err(FusionError::ShapeMismatch(format!(
            "{} scores vs {} weights",
            ns.len(),
            weights.len()
        )));
    }
    Ok(ns.iter().zip(weights).map(|(s, w)| s * w).sum())
}

/// Inverse-EER weights: `w_j = (1/EER_j) / Σ_k (1/EER_k)`, summing to 1, so a
/// more accurate matcher gets a strictly larger weight. EERs at or below
/// [`MIN_EER`] are clamped to it (a zero-EER matcher would otherwise soak up
/// all the weight); callers that consider that an error should validate first.
pub fn eer_weights(eers: &[f64]) -> Result<Vec<f64>, FusionError> {
    if eers.is_empty() {
        return Err(FusionError::ShapeMismatch("no matcher EERs".into()));
    }
    let inv: Vec<f64> = eers.iter().map(|e| 1.0 / e.max(MIN_EER)).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / total).collect())
}

// ── fitted models ────────────────────────────────────────────────────────────

/// Which fusion rule a [`FusionModel`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Sum,
    EerWeightedSum,
    LinearRegression,
    LogisticRegression,
    Mlp,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Sum,
        FusionKind::EerWeightedSum,
        FusionKind::LinearRegression,
        FusionKind::LogisticRegression,
        FusionKind::Mlp,
    ];
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Sum => "sum",
            FusionKind::EerWeightedSum => "eer_weighted_sum",
            FusionKind::LinearRegression => "linear_regression",
            FusionKind::LogisticRegression => "logistic_regression",
            FusionKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for FusionKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| FusionError::ShapeMismatch(format!("unknown fusion method {s:?}")))
    }
}

/// The fitted parameters behind a fusion model.
#[derive(Clone, Debug)]
enum FusionFit {
    /// Fixed fusion weights, then `sigmoid(scale·fused + bias)` from a
    /// least-squares calibration of the fused scalar against 0/1 labels.
    WeightedSum { weights: Vec<f64>, scale: f64, bias: f64 },
    /// `sigmoid(w·ns + bias)` with least-squares `w`, `bias`.
    Linear { weights: Vec<f64>, bias: f64 },
    /// Logistic regression or MLP as a small dense network.
    Net { spec: NetSpec, params: ParamSet<f32> },
}

/// A fitted score-fusion model: normalizer, fusion rule, and the
/// equal-error-rate decision threshold calibrated on its training scores.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub normalizer: Normalizer,
    fit: FusionFit,
    /// Per-matcher training EERs (EER-weighted sum only).
    pub matcher_eers: Option<Vec<f64>>,
    /// Accept iff fused score ≥ threshold.
    pub threshold: f64,
}

impl FusionModel {
    /// The fusion weights, where the rule has per-matcher weights.
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.fit {
            FusionFit::WeightedSum { weights, .. } | FusionFit::Linear { weights, .. } => {
                Some(weights)
            }
            FusionFit::Net { .. } => None,
        }
    }

    /// Fuse one raw (unnormalized) score row into a decision score in (0, 1).
    pub fn score_row(&self, raw: &[f64]) -> Result<f64, FusionError> {
        let ns = self.normalizer.apply_row(raw)?;
        match &self.fit {
            FusionFit::WeightedSum { weights, scale, bias } => {
                Ok(sigmoid(scale * fuse_sum(&ns, weights)? + bias))
            }
            FusionFit::Linear { weights, bias } => Ok(sigmoid(fuse_sum(&ns, weights)? + bias)),
            FusionFit::Net { spec, params } => {
                let mut x = Tensor::<f32>::zeros(&[1, ns.len()]);
                for (d, s) in x.data_mut().iter_mut().zip(&ns) {
                    *d = *s as f32;
                }
                let y = forward_infer(spec, params, &x)?;
                Ok(f64::from(y.data()[0]))
            }
        }
    }

    /// Score every trial of a raw matrix, keeping its labels.
    pub fn score_matrix(&self, m: &ScoreMatrix) -> Result<Vec<ScoredTrial>, FusionError> {
        // Nets score in one batched pass; the rest are cheap per row.
        if let FusionFit::Net { spec, params } = &self.fit {
            let nm = apply_normalizer(&self.normalizer, m)?;
            let mut x = Tensor::<f32>::zeros(&[nm.n_trials(), nm.n_matchers()]);
            for (d, s) in x.data_mut().iter_mut().zip(&nm.scores) {
                *d = *s as f32;
            }
            let y = forward_infer(spec, params, &x)?;
            return Ok(y
                .data()
                .iter()
                .zip(&nm.labels)
                .map(|(&s, &genuine)| ScoredTrial { score: f64::from(s), genuine })
                .collect());
        }
        (0..m.n_trials())
            .map(|i| {
                Ok(ScoredTrial { score: self.score_row(m.row(i))?, genuine: m.labels[i] })
            })
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Gradient-descent settings for the logistic and MLP fits (full-batch Adam).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionFitConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Hidden-layer width of the MLP rule.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for FusionFitConfig {
    fn default() -> Self {
        FusionFitConfig { lr: 5e-2, epochs: 500, hidden: 8, seed: 7 }
    }
}

/// Least-squares fit of `y ≈ X·w + b` for 0/1 labels via the normal
/// equations; `X` has one row per trial. Errors on singular systems.
fn least_squares(ns: &ScoreMatrix) -> Result<(Vec<f64>, f64), FusionError> {
    let (n, r) = (ns.n_trials(), ns.n_matchers());
    let d = r + 1; // weights + intercept
    let mut a = vec![0.0f64; d * d];
    let mut b = vec![0.0f64; d];
    for i in 0..n {
        let row = ns.row(i);
        let y = if ns.labels[i] { 1.0 } else { 0.0 };
        for p in 0..d {
            let xp = if p < r { row[p] } else { 1.0 };
            b[p] += xp * y;
            for q in 0..d {
                let xq = if q < r { row[q] } else { 1.0 };
                a[p * d + q] += xp * xq;
            }
        }
    }
    let x = solve_symmetric(&mut a, &mut b, d)
        .ok_or_else(|| FusionError::DegenerateFit("singular design matrix".into()))?;
    Ok((x[..r].to_vec(), x[r]))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_symmetric(a: &mut [f64], b: &mut [f64], d: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..d {
        let pivot_row = (col..d).max_by(|&p, &q| {
            a[p * d + col].abs().total_cmp(&a[q * d + col].abs())
        })?;
        if a[pivot_row * d + col].abs() < 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for k in 0..d {
                a.swap(col * d + k, pivot_row * d + k);
            }
            b.swap(col, pivot_row);
        }
        for row in (col + 1)..d {
            let f = a[row * d + col] / a[col * d + col];
            for k in col..d {
                a[row * d + k] -= f * a[col * d + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; d];
    for row in (0..d).rev() {
        let mut acc = b[row];
        for k in (row + 1)..d {
            acc -= a[row * d + k] * x[k];
        }
        x[row] = acc / a[row * d + row];
    }
    Some(x)
}

/// One-layer (logistic) or one-hidden-layer (MLP) sigmoid network over the
/// normalized scores; both dense layers carry an L2 penalty of 1e-3.
fn fusion_net_spec(n_matchers: usize, hidden: Option<usize>) -> NetSpec {
    let mut layers = Vec::new();
    if let Some(h) = hidden {
        layers.push(LayerSpec::Dense { units: h, activation: Activation::Sigmoid, l2: 1e-3 });
    }
    layers.push(LayerSpec::Dense { units: 1, activation: Activation::Sigmoid, l2: 1e-3 });
    NetSpec::new(vec![n_matchers], layers)
}

/// Fit a sigmoid network on normalized scores with full-batch Adam + BCE.
fn fit_net(
    ns: &ScoreMatrix,
    hidden: Option<usize>,
    cfg: &FusionFitConfig,
) -> Result<(NetSpec, ParamSet<f32>), FusionError> {
    let spec = fusion_net_spec(ns.n_matchers(), hidden);
    let mut params: ParamSet<f32> =
        spec.init_params(derive_seed(cfg.seed, &[TAG_FUSION_INIT]))?;
    let adam = AdamConfig::with_lr(cfg.lr);

    let mut x = Tensor::<f32>::zeros(&[ns.n_trials(), ns.n_matchers()]);
    for (d, s) in x.data_mut().iter_mut().zip(&ns.scores) {
        *d = *s as f32;
    }
    for epoch in 0..cfg.epochs {
        // No dropout in these nets; the stream only keeps the pass seeded.
        let mut rng = sub_rng(cfg.seed, &[TAG_FUSION_EPOCH, epoch as u64]);
        let (y, tape) = forward_train(&spec, &mut params, &x, &mut rng)?;
        let (loss, grad) = bce_batch_loss_grad(&y, &ns.labels)?;
        if !loss.is_finite() {
            return Err(FusionError::DegenerateFit(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        let (grads, _) = backward(&spec, &params, &tape, &grad)?;
        adam_step(&mut params, &grads, &adam)?;
    }
    Ok((spec, params))
}

/// Fit one fusion model: freeze the normalizer on `train`, fit the rule's
/// parameters, then calibrate the decision threshold at the equal-error point
/// of the fused training scores.
pub fn fit_fusion(
    train: &ScoreMatrix,
    kind: FusionKind,
    norm: NormKind,
    cfg: &FusionFitConfig,
) -> Result<FusionModel, FusionError> {
    train.check_two_classes()?;
    if matches!(kind, FusionKind::Sum | FusionKind::EerWeightedSum) && train.n_matchers() < 2 {
        return Err(FusionError::ShapeMismatch(format!(
            "{kind} fusion needs ≥ 2 matchers, got {}",
            train.n_matchers()
        )));
    }
    let normalizer = fit_normalizer(train, norm)?;
    let ns = apply_normalizer(&normalizer, train)?;

    let mut matcher_eers = None;
    let fit = match kind {
        FusionKind::Sum | FusionKind::EerWeightedSum => {
            let weights = if kind == FusionKind::Sum {
                vec![1.0; ns.n_matchers()]
            } else {
                let eers: Vec<f64> = (0..ns.n_matchers())
                    .map(|j| eval::eer(&ns.column_trials(j)).map(|p| p.eer))
                    .collect::<Result<_, _>>()?;
                let w = eer_weights(&eers)?;
                matcher_eers = Some(eers);
                w
            };
            // Calibrate the fused scalar with a sigmoid-activated linear fit.
            let fused: Vec<f64> = (0..ns.n_trials())
                .map(|i| fuse_sum(ns.row(i), &weights))
                .collect::<Result<_, _>>()?;
            let cal = ScoreMatrix::new(vec!["fused".into()], ns.labels.clone(), fused)?;
            let (w1, bias) = least_squares(&cal)?;
            FusionFit::WeightedSum { weights, scale: w1[0], bias }
        }
        FusionKind::LinearRegression => {
            let (weights, bias) = least_squares(&ns)?;
            FusionFit::Linear { weights, bias }
        }
        FusionKind::LogisticRegression => {
            let (spec, params) = fit_net(&ns, None, cfg)?;
            FusionFit::Net { spec, params }
        }
        FusionKind::Mlp => {
            if cfg.hidden == 0 {
                return Err(FusionError::ShapeMismatch("MLP hidden size must be ≥ 1".into()));
            }
            let (spec, params) = fit_net(&ns, Some(cfg.hidden), cfg)?;
            FusionFit::Net { spec, params }
        }
    };

    let mut model =
        FusionModel { kind, normalizer, fit, matcher_eers, threshold: 0.5 };
    let trials = model.score_matrix(train)?;
    model.threshold = eval::eer(&trials)?.threshold;
    Ok(model)
}

/// Least-squares regression on pre-normalized scores (`linear`) or the
/// logistic fit (`logistic`); thin wrapper over [`fit_fusion`] with no
/// normalization step.
pub fn fit_regression(
    train: &ScoreMatrix,
    logistic: bool,
    cfg: &FusionFitConfig,
) -> Result<FusionModel, FusionError> {
    let kind =
        if logistic { FusionKind::LogisticRegression } else { FusionKind::LinearRegression };
    fit_fusion(train, kind, NormKind::None, cfg)
}

/// One-hidden-layer MLP fusion on pre-normalized scores.
pub fn fit_mlp_fusion(
    train: &ScoreMatrix,
    hidden: usize,
    cfg: &FusionFitConfig,
) -> Result<FusionModel, FusionError> {
    fit_fusion(train, FusionKind::Mlp, NormKind::None, &FusionFitConfig { hidden, ..cfg.clone() })
}

// ── evaluation ───────────────────────────────────────────────────────────────

/// One row of the fusion comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct FusionEvalRow {
    pub method: FusionKind,
    pub normalization: NormKind,
    pub f1: f64,
    pub eer: f64,
}

/// Score held-out trials with each fitted model and report F1 (at the model's
/// own training-calibrated threshold) and the test EER.
pub fn eval_fusion(
    models: &[FusionModel],
    test: &ScoreMatrix,
) -> Result<Vec<FusionEvalRow>, FusionError> {
    let mut rows = Vec::with_capacity(models.len());
    for model in models {
        let trials = model.score_matrix(test)?;
        let eer = eval::eer(&trials)?.eer;
        let (m, _) = eval::metrics_at(&trials, model.threshold)?;
        rows.push(FusionEvalRow {
            method: model.kind,
            normalization: model.normalizer.kind(),
            f1: m.f1,
            eer,
        });
    }
    Ok(rows)
}

// ── score and report files ───────────────────────────────────────────────────

/// Write a score matrix as CSV: `trial_id,label,score_<name>,…` with label
/// 1 = genuine, 0 = impostor. Byte-stable for equal inputs.
pub fn write_scores_csv(path: &Path, m: &ScoreMatrix) -> Result<(), FusionError> {
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "trial_id,label")?;
    for name in &m.matcher_names {
        write!(f, ",score_{name}")?;
    }
    writeln!(f)?;
    for i in 0..m.n_trials() {
        write!(f, "t{i:06},{}", u8::from(m.labels[i]))?;
        for s in m.row(i) {
            write!(f, ",{s}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Read a score matrix written by [`write_scores_csv`] (or shaped like it).
pub fn read_scores_csv(path: &Path) -> Result<ScoreMatrix, FusionError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(bad_csv)?;
    let headers = reader.headers().map_err(bad_csv)?.clone();
    let mut fields = headers.iter();
    if fields.next() != Some("trial_id") || fields.next() != Some("label") {
        return Err(FusionError::BadScoreFile(format!(
            "expected header `trial_id,label,score_…`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let matcher_names: Vec<String> = fields
        .map(|h| {
            h.strip_prefix("score_").map(String::from).ok_or_else(|| {
                FusionError::BadScoreFile(format!("score column `{h}` lacks `score_` prefix"))
            })
        })
        .collect::<Result<_, _>>()?;
    if matcher_names.is_empty() {
        return Err(FusionError::BadScoreFile("no score columns".into()));
    }

    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for (li, record) in reader.records().enumerate() {
        let record = record.map_err(bad_csv)?;
        if record.len() != 2 + matcher_names.len() {
            return Err(FusionError::BadScoreFile(format!(
                "row {}: {} fields, expected {}",
                li + 2,
                record.len(),
                2 + matcher_names.len()
            )));
        }
        labels.push(match &record[1] {
            "1" => true,
            "0" => false,
            other => {
                return Err(FusionError::BadScoreFile(format!(
                    "row {}: label `{other}` is not 0/1",
                    li + 2
                )))
            }
        });
        for field in record.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| {
                FusionError::BadScoreFile(format!("row {}: bad score `{field}`", li + 2))
            })?;
            scores.push(v);
        }
    }
    ScoreMatrix::new(matcher_names, labels, scores)
}

/// Write the fusion comparison table as CSV (`fusion,normalization,f1,eer`).
pub fn write_fusion_report(path: &Path, rows: &[FusionEvalRow]) -> Result<(), FusionError> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "fusion,normalization,f1,eer")?;
    for row in rows {
        writeln!(f, "{},{},{:.6},{:.6}", row.method, row.normalization, row.f1, row.eer)?;
    }
    f.flush()?;
    Ok(())
}

fn bad_csv(e: csv::Error) -> FusionError {
    FusionError::BadScoreFile(e.to_string())
}
