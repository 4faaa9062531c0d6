//! Verification metrics and the n-shot × window-length evaluation grid.
//!
//! Everything scores under one convention: a trial is **accepted iff its
//! score ≥ the threshold**. FAR/FRR/precision/recall/F1 come straight from
//! confusion counts; ROC/AUC sweep the unique scores as thresholds
//! (trapezoidal rule, which gives ties the Mann–Whitney half-credit); EER
//! picks the sweep point where FAR and FRR come closest and reports their
//! mean together with a midpoint threshold. The grid runner evaluates a
//! calibrated model over n-shot trials at each window length, with seeded,
//! replayable enrollment/probe sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Window, WindowPair};
use crate::model::{distance_vector, AuthModel, ModelError, EMBED_DIM};
use crate::nn::Tensor;
use crate::rng::{self, derive_seed};

const TAG_PLAN: u64 = 0x504c414e;
const TAG_CELL: u64 = 0x43454c4c;

/// Errors from metric computation or grid evaluation.
#[derive(Debug, Error)]
pub enum EvalError {
    /// A metric's denominator is empty (e.g. no impostor trials for FAR).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    /// A user has too few windows for the requested enrollment/probe split.
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One scored verification attempt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredTrial {
    pub score: f64,
    /// True iff the probe really belongs to the claimed user.
    pub genuine: bool,
}

/// Confusion counts under the accept-iff-score≥threshold rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count a trial set's confusion outcomes at a threshold.
pub fn confusion(trials: &[ScoredTrial], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for t in trials {
        let accept = t.score >= threshold;
        match (t.genuine, accept) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// False acceptance rate fp/(fp+tn).
pub fn far(c: &ConfusionCounts) -> Result<f64, EvalError> {
    let denom = c.fp + c.tn;
    if denom == 0 {
        return Err(EvalError::UndefinedMetric("FAR needs at least one impostor trial".into()));
    }
    Ok(c.fp as f64 / denom as f64)
}

/// False rejection rate fn/(fn+tp).
pub fn frr(c: &ConfusionCounts) -> Result<f64, EvalError> {
    let denom = c.fn_ + c.tp;
    if denom == 0 {
        return Err(EvalError::UndefinedMetric("FRR needs at least one genuine trial".into()));
    }
    Ok(c.fn_ as f64 / denom as f64)
}

/// Precision tp/(tp+fp), recall tp/(tp+fn), and their harmonic mean
/// (0 when precision+recall = 0).
pub fn precision_recall_f1(c: &ConfusionCounts) -> Result<(f64, f64, f64), EvalError> {
    if c.tp + c.fp == 0 {
        return Err(EvalError::UndefinedMetric("precision needs at least one accepted trial".into()));
    }
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::UndefinedMetric("recall needs at least one genuine trial".into()));
    }
    let pr = c.tp as f64 / (c.tp + c.fp) as f64;
    let re = c.tp as f64 / (c.tp + c.fn_) as f64;
    let f1 = if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) };
    Ok((pr, re, f1))
}

/// Split into sorted genuine/impostor score lists, validating finiteness and
/// the presence of both classes.
fn two_class_scores(trials: &[ScoredTrial]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let mut gen = Vec::new();
    let mut imp = Vec::new();
    for t in trials {
        if !t.score.is_finite() {
            return Err(EvalError::UndefinedMetric(format!("non-finite score {}", t.score)));
        }
        if t.genuine {
            gen.push(t.score);
        } else {
            imp.push(t.score);
        }
    }
    if gen.is_empty() || imp.is_empty() {
        return Err(EvalError::UndefinedMetric(format!(
            "need both classes, got {} genuine / {} impostor trials",
            gen.len(),
            imp.len()
        )));
    }
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    Ok((gen, imp))
}

/// Number of elements in sorted `xs` that are ≥ `t`.
fn count_ge(xs: &[f64], t: f64) -> usize {
    xs.len() - xs.partition_point(|&x| x < t)
}

/// ROC curve (FAR, TPR) by threshold sweep over the unique scores, plus the
/// trapezoidal area under it.
pub fn roc_auc(trials: &[ScoredTrial]) -> Result<(Vec<(f64, f64)>, f64), EvalError> {
    let (gen, imp) = two_class_scores(trials)?;
    let mut thresholds: Vec<f64> = gen.iter().chain(imp.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut curve = Vec::with_capacity(thresholds.len() + 1);
    curve.push((0.0, 0.0)); // threshold above every score accepts nothing
    for &t in thresholds.iter().rev() {
        let far = count_ge(&imp, t) as f64 / imp.len() as f64;
        let tpr = count_ge(&gen, t) as f64 / gen.len() as f64;
        curve.push((far, tpr));
    }
    let auc = curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    Ok((curve, auc))
}

/// The equal-error operating point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EerPoint {
    /// Mean of FAR and FRR at the crossing.
    pub eer: f64,
    /// Accept threshold realizing the crossing (midpoint between the chosen
    /// unique score and its predecessor, so replays reproduce the counts).
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Find the threshold where FAR and FRR come closest (ties prefer the lower
/// mean error, then the lower threshold) and report the crossing.
pub fn eer(trials: &[ScoredTrial]) -> Result<EerPoint, EvalError> {
    let (gen, imp) = two_class_scores(trials)?;
    let mut thresholds: Vec<f64> = gen.iter().chain(imp.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut best: Option<(f64, f64, usize)> = None; // (|far-frr|, mean, index)
    for (k, &t) in thresholds.iter().enumerate() {
        let far = count_ge(&imp, t) as f64 / imp.len() as f64;
        let frr = gen.partition_point(|&x| x < t) as f64 / gen.len() as f64;
        let diff = (far - frr).abs();
        let mean = 0.5 * (far + frr);
        if best.map_or(true, |(bd, bm, _)| (diff, mean) < (bd, bm)) {
            best = Some((diff, mean, k));
        }
    }
    let (_, _, k) = best.expect("at least one threshold");
    let t = thresholds[k];
    let far_v = count_ge(&imp, t) as f64 / imp.len() as f64;
    let frr_v = gen.partition_point(|&x| x < t) as f64 / gen.len() as f64;
    let threshold = if k == 0 { t } else { 0.5 * (thresholds[k - 1] + t) };
    Ok(EerPoint { eer: 0.5 * (far_v + frr_v), threshold, far: far_v, frr: frr_v })
}

/// The four headline metrics of one evaluation cell.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct CellMetrics {
    pub f1: f64,
    pub far: f64,
    pub frr: f64,
    pub auc: f64,
}

/// F1/FAR/FRR at the given threshold plus threshold-free AUC. A cell where
/// nothing is accepted has undefined precision; it reports F1 = 0 so weak
/// models score low instead of erroring.
pub fn metrics_at(trials: &[ScoredTrial], threshold: f64) -> Result<(CellMetrics, ConfusionCounts), EvalError> {
    let c = confusion(trials, threshold);
    let far_v = far(&c)?;
    let frr_v = frr(&c)?;
    let f1 = if c.tp + c.fp == 0 { 0.0 } else { precision_recall_f1(&c)?.2 };
    let (_, auc) = roc_auc(trials)?;
    Ok((CellMetrics { f1, far: far_v, frr: frr_v, auc }, c))
}

/// One planned verification attempt: `probe` window against `target`'s
/// enrollment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedTrial {
    pub target: String,
    pub probe: usize,
    pub genuine: bool,
}

/// A seeded enrollment/probe layout over one window pool. The same plan can
/// be scored by several models (e.g. per-modality matchers), keeping their
/// score vectors trial-aligned for fusion.
#[derive(Clone, Debug)]
pub struct TrialPlan {
    pub n_shot: usize,
    /// Per user: indices of the windows enrolled for that user.
    pub enrollments: BTreeMap<String, Vec<usize>>,
    pub probes: Vec<PlannedTrial>,
}

/// Draw a balanced trial plan: per user, `n_shot` enrollment windows and up
/// to `trials_per_user` genuine probes from the remainder (enrollment and
/// probes never overlap), plus an equal number of impostor probes drawn
/// uniformly (with replacement) from the other users' windows.
pub fn plan_trials(
    windows: &[Window],
    n_shot: usize,
    trials_per_user: usize,
    seed: u64,
) -> Result<TrialPlan, EvalError> {
    assert!(n_shot >= 1 && trials_per_user >= 1, "n_shot and trials_per_user must be ≥ 1");
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_user.entry(&w.user_id).or_default().push(i);
    }
    if by_user.len() < 2 {
        return Err(EvalError::TooFewSamples(format!(
            "trial planning needs at least 2 users, pool has {}",
            by_user.len()
        )));
    }
    for (uid, pool) in &by_user {
        if pool.len() < n_shot + 1 {
            return Err(EvalError::TooFewSamples(format!(
                "user {uid} has {} windows, {} needed for {n_shot}-shot enrollment plus a probe",
                pool.len(),
                n_shot + 1
            )));
        }
    }

    let mut rng = rng::sub_rng(seed, &[TAG_PLAN, n_shot as u64]);
    let mut enrollments = BTreeMap::new();
    let mut probes = Vec::new();
    let mut genuine_counts: Vec<(String, usize)> = Vec::new();

    for (uid, pool) in &by_user {
        let mut idx = pool.clone();
        idx.shuffle(&mut rng);
        let enrolled: Vec<usize> = idx[..n_shot].to_vec();
        let n_probes = trials_per_user.min(idx.len() - n_shot);
        for &probe in &idx[n_shot..n_shot + n_probes] {
            probes.push(PlannedTrial { target: uid.to_string(), probe, genuine: true });
        }
        enrollments.insert(uid.to_string(), enrolled);
        genuine_counts.push((uid.to_string(), n_probes));
    }
    for (uid, count) in genuine_counts {
        let others: Vec<usize> = by_user
            .iter()
            .filter(|(other, _)| **other != uid.as_str())
            .flat_map(|(_, pool)| pool.iter().copied())
            .collect();
        for _ in 0..count {
            let probe = others[rng.gen_range(0..others.len())];
            probes.push(PlannedTrial { target: uid.clone(), probe, genuine: false });
        }
    }
    Ok(TrialPlan { n_shot, enrollments, probes })
}

/// Score every planned trial with a model: each window is embedded once,
/// all per-shot distance vectors run through the decision net in one batch,
/// and per-trial scores are the mean over the target's enrollment.
pub fn score_plan(model: &AuthModel, windows: &[Window], plan: &TrialPlan) -> Result<Vec<ScoredTrial>, EvalError> {
    let mut need: BTreeSet<usize> = plan.enrollments.values().flatten().copied().collect();
    need.extend(plan.probes.iter().map(|p| p.probe));
    let need: Vec<usize> = need.into_iter().collect();

    let mut embeddings: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
    for chunk in need.chunks(128) {
        let rows: Vec<&[f32]> = chunk.iter().map(|&i| windows[i].values.as_slice()).collect();
        let e = model.embed_rows(&rows)?;
        for (k, &i) in chunk.iter().enumerate() {
            embeddings.insert(i, e.data()[k * EMBED_DIM..(k + 1) * EMBED_DIM].to_vec());
        }
    }

    let total_shots: usize = plan.probes.iter().map(|p| plan.enrollments[&p.target].len()).sum();
    let mut d = Tensor::zeros(&[total_shots, EMBED_DIM]);
    let mut row = 0usize;
    for p in &plan.probes {
        let probe_e = &embeddings[&p.probe];
        for &e_idx in &plan.enrollments[&p.target] {
            let dv = distance_vector(probe_e, &embeddings[&e_idx]);
            d.data_mut()[row * EMBED_DIM..(row + 1) * EMBED_DIM].copy_from_slice(&dv);
            row += 1;
        }
    }
    let shot_scores = model.decide_batch(&d)?;

    let mut out = Vec::with_capacity(plan.probes.len());
    let mut cursor = 0usize;
    for p in &plan.probes {
        let n = plan.enrollments[&p.target].len();
        let score = shot_scores[cursor..cursor + n].iter().sum::<f64>() / n as f64;
        cursor += n;
        out.push(ScoredTrial { score, genuine: p.genuine });
    }
    Ok(out)
}

/// Score labeled window pairs (one decision-network probability per pair).
/// Pair indices refer into `windows`; each referenced window is embedded
/// once, in index order, so scoring is deterministic for a fixed model.
pub fn score_pairs(
    model: &AuthModel,
    windows: &[Window],
    pairs: &[WindowPair],
) -> Result<Vec<ScoredTrial>, EvalError> {
    let need: Vec<usize> = pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<BTreeSet<usize>>()
        .into_iter()
        .collect();

    let mut embeddings: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
    for chunk in need.chunks(128) {
        let rows: Vec<&[f32]> = chunk.iter().map(|&i| windows[i].values.as_slice()).collect();
        let e = model.embed_rows(&rows)?;
        for (k, &i) in chunk.iter().enumerate() {
            embeddings.insert(i, e.data()[k * EMBED_DIM..(k + 1) * EMBED_DIM].to_vec());
        }
    }

    let mut d = Tensor::zeros(&[pairs.len(), EMBED_DIM]);
    for (row, p) in pairs.iter().enumerate() {
        let dv = distance_vector(&embeddings[&p.a], &embeddings[&p.b]);
        d.data_mut()[row * EMBED_DIM..(row + 1) * EMBED_DIM].copy_from_slice(&dv);
    }
    let scores = model.decide_batch(&d)?;
    Ok(pairs
        .iter()
        .zip(scores)
        .map(|(p, score)| ScoredTrial { score, genuine: p.genuine })
        .collect())
}

/// Grid evaluation settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub shots: Vec<usize>,
    pub window_lengths: Vec<u32>,
    /// Genuine probes per user per cell (matched by an equal impostor count).
    pub trials_per_user: usize,
    /// Independent seeded repetitions per cell (mean ± sd reported).
    pub repeats: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            shots: (1..=5).collect(),
            window_lengths: crate::data::WINDOW_SECONDS.to_vec(),
            trials_per_user: 20,
            repeats: 1,
            seed: 7,
        }
    }
}

/// Metrics of one populated grid cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub mean: CellMetrics,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub sd: CellMetrics,
    pub threshold: f64,
    /// Per-repeat confusion counts.
    pub counts: Vec<ConfusionCounts>,
    /// Per-repeat raw trials, kept in memory for replay checks.
    #[serde(skip)]
    pub trials: Vec<Vec<ScoredTrial>>,
}

/// A grid cell is either evaluated or explicitly skipped with a reason.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", content = "data", rename_all = "snake_case")]
pub enum CellOutcome {
    Metrics(CellResult),
    Skipped(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct GridCell {
    pub window_seconds: u32,
    pub n_shot: usize,
    pub outcome: CellOutcome,
}

/// The n-shot × window-length evaluation grid.
#[derive(Clone, Debug, Serialize)]
pub struct EvalGrid {
    pub seed: u64,
    pub trials_per_user: usize,
    pub repeats: usize,
    pub cells: Vec<GridCell>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluate one (model, pool, n-shot) cell over `repeats` seeded repetitions.
pub fn eval_cell(
    model: &AuthModel,
    windows: &[Window],
    n_shot: usize,
    cfg: &GridConfig,
) -> Result<CellResult, EvalError> {
    let threshold = model.threshold.ok_or(ModelError::NotCalibrated)?;
    let ws = model.window_seconds;
    let mut metrics = Vec::with_capacity(cfg.repeats);
    let mut counts = Vec::with_capacity(cfg.repeats);
    let mut all_trials = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats.max(1) {
        let cell_seed = derive_seed(cfg.seed, &[TAG_CELL, ws as u64, n_shot as u64, r as u64]);
        let plan = plan_trials(windows, n_shot, cfg.trials_per_user, cell_seed)?;
        let trials = score_plan(model, windows, &plan)?;
        let (m, c) = metrics_at(&trials, threshold)?;
        metrics.push(m);
        counts.push(c);
        all_trials.push(trials);
    }
    let collect = |f: fn(&CellMetrics) -> f64| -> (f64, f64) {
        let xs: Vec<f64> = metrics.iter().map(f).collect();
        mean_sd(&xs)
    };
    let (f1m, f1s) = collect(|m| m.f1);
    let (farm, fars) = collect(|m| m.far);
    let (frrm, frrs) = collect(|m| m.frr);
    let (aucm, aucs) = collect(|m| m.auc);
    Ok(CellResult {
        mean: CellMetrics { f1: f1m, far: farm, frr: frrm, auc: aucm },
        sd: CellMetrics { f1: f1s, far: fars, frr: frrs, auc: aucs },
        threshold,
        counts,
        trials: all_trials,
    })
}

/// Evaluate the full grid. Window lengths without a model or window pool are
/// marked skipped rather than failing the run.
pub fn eval_nshot_grid(
    models: &BTreeMap<u32, &AuthModel>,
    pools: &BTreeMap<u32, Vec<Window>>,
    cfg: &GridConfig,
) -> Result<EvalGrid, EvalError> {
    let mut cells = Vec::with_capacity(cfg.window_lengths.len() * cfg.shots.len());
    for &ws in &cfg.window_lengths {
        for &n in &cfg.shots {
            let outcome = match (models.get(&ws), pools.get(&ws)) {
                (Some(model), Some(pool)) => CellOutcome::Metrics(eval_cell(model, pool, n, cfg)?),
                (None, _) => CellOutcome::Skipped(format!("no model for {ws} s windows")),
                (_, None) => CellOutcome::Skipped(format!("no window pool for {ws} s windows")),
            };
            cells.push(GridCell { window_seconds: ws, n_shot: n, outcome });
        }
    }
    Ok(EvalGrid { seed: cfg.seed, trials_per_user: cfg.trials_per_user, repeats: cfg.repeats, cells })
}

/// Render the grid's mean F1 values as CSV: one row per shot count, one
/// column per window length. Skipped cells are left empty.
pub fn grid_f1_csv(grid: &EvalGrid) -> String {
    let mut lengths: Vec<u32> = grid.cells.iter().map(|c| c.window_seconds).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut shots: Vec<usize> = grid.cells.iter().map(|c| c.n_shot).collect();
    shots.sort_unstable();
    shots.dedup();

    let mut out = String::from("n_shot");
    for ws in &lengths {
        out.push_str(&format!(",{ws}s"));
    }
    out.push('\n');
    for &n in &shots {
        out.push_str(&n.to_string());
        for &ws in &lengths {
            let cell = grid.cells.iter().find(|c| c.window_seconds == ws && c.n_shot == n);
            match cell.map(|c| &c.outcome) {
                Some(CellOutcome::Metrics(r)) => out.push_str(&format!(",{:.4}", r.mean.f1)),
                _ => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Write the F1 CSV table.
pub fn write_grid_csv(path: &Path, grid: &EvalGrid) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(grid_f1_csv(grid).as_bytes())?;
    Ok(())
}

/// Write the full JSON report (per-cell metrics, sds, confusion counts).
pub fn write_grid_report(path: &Path, grid: &EvalGrid) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(grid).expect("grid serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::N_CHANNELS;
    use crate::model::ChannelSubset;

    fn trial(score: f64, genuine: bool) -> ScoredTrial {
        ScoredTrial { score, genuine }
    }

    fn worked_example() -> Vec<ScoredTrial> {
        vec![
            trial(0.9, true),
            trial(0.8, true),
            trial(0.4, true),
            trial(0.1, false),
            trial(0.3, false),
            trial(0.6, false),
        ]
    }

    #[test]
    fn far_frr_arithmetic() {
        let c = ConfusionCounts { tp: 943, fp: 23, tn: 977, fn_: 57 };
        assert!((far(&c).unwrap() - 0.023).abs() < 1e-12);
        assert!((frr(&c).unwrap() - 0.057).abs() < 1e-12);
        let zero_fp = ConfusionCounts { tp: 1, fp: 0, tn: 10, fn_: 0 };
        assert_eq!(far(&zero_fp).unwrap(), 0.0);
        assert_eq!(frr(&zero_fp).unwrap(), 0.0);
        let no_imp = ConfusionCounts { tp: 1, fp: 0, tn: 0, fn_: 1 };
        assert!(matches!(far(&no_imp), Err(EvalError::UndefinedMetric(_))));
        let no_gen = ConfusionCounts { tp: 0, fp: 1, tn: 1, fn_: 0 };
        assert!(matches!(frr(&no_gen), Err(EvalError::UndefinedMetric(_))));
    }

    #[test]
    fn f1_is_the_harmonic_mean() {
        let c = ConfusionCounts { tp: 1, fp: 0, tn: 5, fn_: 1 }; // pr=1, re=0.5
        let (pr, re, f1) = precision_recall_f1(&c).unwrap();
        assert_eq!((pr, re), (1.0, 0.5));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        let c = ConfusionCounts { tp: 1, fp: 1, tn: 0, fn_: 1 };
        let (pr, re, f1) = precision_recall_f1(&c).unwrap();
        assert_eq!((pr, re, f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn f1_matches_direct_formula_on_random_counts() {
        use rand::Rng;
        let mut rng = crate::rng::rng(3);
        for _ in 0..200 {
            let c = ConfusionCounts {
                tp: rng.gen_range(1..100),
                fp: rng.gen_range(0..100),
                tn: rng.gen_range(0..100),
                fn_: rng.gen_range(0..100),
            };
            let (pr, re, f1) = precision_recall_f1(&c).unwrap();
            let want = 2.0 * pr * re / (pr + re);
            assert!((f1 - want).abs() < 1e-12);
            for v in [pr, re, f1, far(&c).unwrap(), frr(&c).unwrap()] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn auc_on_the_worked_example_matches_pair_counting() {
        // Pair counting: of the 9 (genuine, impostor) pairs, 8 rank the
        // genuine score higher (0.4 loses to 0.6 only), so AUC = 8/9.
        let (curve, auc) = roc_auc(&worked_example()).unwrap();
        assert!((auc - 8.0 / 9.0).abs() < 1e-12, "auc {auc}");
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        for w in curve.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "curve not monotone: {w:?}");
        }
    }

    #[test]
    fn auc_perfect_and_chance() {
        let perfect: Vec<ScoredTrial> =
            vec![trial(0.9, true), trial(0.8, true), trial(0.2, false), trial(0.1, false)];
        assert!((roc_auc(&perfect).unwrap().1 - 1.0).abs() < 1e-12);
        let constant: Vec<ScoredTrial> = vec![trial(0.5, true), trial(0.5, false), trial(0.5, true)];
        assert!((roc_auc(&constant).unwrap().1 - 0.5).abs() < 1e-12);
        let one_class: Vec<ScoredTrial> = vec![trial(0.5, true)];
        assert!(matches!(roc_auc(&one_class), Err(EvalError::UndefinedMetric(_))));
    }

    #[test]
    fn eer_on_the_worked_example() {
        let p = eer(&worked_example()).unwrap();
        assert!((p.eer - 1.0 / 3.0).abs() < 1e-12, "eer {}", p.eer);
        assert!((p.threshold - 0.5).abs() < 1e-12, "threshold {}", p.threshold);
        assert!((p.far - p.frr).abs() < 1e-12);
        // Replaying the reported threshold reproduces the crossing counts.
        let c = confusion(&worked_example(), p.threshold);
        assert!((far(&c).unwrap() - p.far).abs() < 1e-12);
        assert!((frr(&c).unwrap() - p.frr).abs() < 1e-12);
    }

    #[test]
    fn eer_of_perfect_separation_is_zero() {
        let perfect: Vec<ScoredTrial> =
            vec![trial(0.9, true), trial(0.8, true), trial(0.2, false), trial(0.1, false)];
        let p = eer(&perfect).unwrap();
        assert_eq!(p.eer, 0.0);
        let c = confusion(&perfect, p.threshold);
        assert_eq!((c.fp, c.fn_), (0, 0));
    }

    fn labeled_pool(users: &[(&str, usize)], samples: usize, seed: u64) -> Vec<Window> {
        use rand::Rng;
        let mut rng = crate::rng::rng(seed);
        let mut out = Vec::new();
        for &(uid, n) in users {
            for k in 0..n {
                out.push(Window {
                    user_id: uid.into(),
                    source_session_id: format!("{uid}_s0"),
                    offset_index: k,
                    window_seconds: 1,
                    values: (0..N_CHANNELS * samples).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                });
            }
        }
        out
    }

    #[test]
    fn plans_are_balanced_disjoint_and_deterministic() {
        let pool = labeled_pool(&[("a", 10), ("b", 10), ("c", 8)], 4, 1);
        let plan = plan_trials(&pool, 3, 5, 42).unwrap();
        let again = plan_trials(&pool, 3, 5, 42).unwrap();
        assert_eq!(plan.probes, again.probes);
        assert_eq!(plan.enrollments, again.enrollments);

        let genuine = plan.probes.iter().filter(|p| p.genuine).count();
        assert_eq!(genuine * 2, plan.probes.len());
        for p in &plan.probes {
            let owner = &pool[p.probe].user_id;
            assert_eq!(p.genuine, owner == &p.target);
            if p.genuine {
                assert!(!plan.enrollments[&p.target].contains(&p.probe), "probe overlaps enrollment");
            }
        }
        for enrolled in plan.enrollments.values() {
            assert_eq!(enrolled.len(), 3);
        }
    }

    #[test]
    fn plans_reject_undersized_users() {
        let pool = labeled_pool(&[("a", 3), ("b", 10)], 4, 2);
        let err = plan_trials(&pool, 3, 5, 0).unwrap_err();
        assert!(matches!(err, EvalError::TooFewSamples(_)), "{err:?}");
    }

    #[test]
    fn grid_runs_populate_and_skip_cells() {
        let mut model = AuthModel::new_untrained(1, ChannelSubset::All, 5).unwrap();
        model.set_threshold(0.5);
        let pool = labeled_pool(&[("a", 6), ("b", 6)], model.window_samples(), 3);
        let models: BTreeMap<u32, &AuthModel> = [(1u32, &model)].into_iter().collect();
        let pools: BTreeMap<u32, Vec<Window>> = [(1u32, pool)].into_iter().collect();
        let cfg = GridConfig {
            shots: vec![1, 2],
            window_lengths: vec![1, 3],
            trials_per_user: 2,
            repeats: 2,
            seed: 11,
        };
        let grid = eval_nshot_grid(&models, &pools, &cfg).unwrap();
        assert_eq!(grid.cells.len(), 4);
        let populated = grid
            .cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Metrics(_)))
            .count();
        assert_eq!(populated, 2); // the 3 s column has no model → skipped

        for cell in &grid.cells {
            if let CellOutcome::Metrics(r) = &cell.outcome {
                assert_eq!(r.counts.len(), 2);
                assert_eq!(r.trials.len(), 2);
                // Replay: metrics recomputed from the stored trials match.
                let (m0, c0) = metrics_at(&r.trials[0], r.threshold).unwrap();
                assert_eq!(c0, r.counts[0]);
                let (m1, _) = metrics_at(&r.trials[1], r.threshold).unwrap();
                for (got, a, b) in [
                    (r.mean.f1, m0.f1, m1.f1),
                    (r.mean.auc, m0.auc, m1.auc),
                    (r.mean.far, m0.far, m1.far),
                    (r.mean.frr, m0.frr, m1.frr),
                ] {
                    assert!((got - 0.5 * (a + b)).abs() < 1e-12);
                }
            }
        }

        let csv = grid_f1_csv(&grid);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("n_shot,1s,3s"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with(','), "skipped cell should be empty");
    }

    #[test]
    fn score_plan_matches_the_nshot_api() {
        let mut model = AuthModel::new_untrained(1, ChannelSubset::All, 6).unwrap();
        model.set_threshold(0.5);
        let pool = labeled_pool(&[("a", 4), ("b", 4)], model.window_samples(), 9);
        let plan = plan_trials(&pool, 2, 1, 77).unwrap();
        let scores = score_plan(&model, &pool, &plan).unwrap();
        assert_eq!(scores.len(), plan.probes.len());
        for (p, s) in plan.probes.iter().zip(&scores) {
            let enrollment: Vec<Vec<f32>> = plan.enrollments[&p.target]
                .iter()
                .map(|&i| model.embed_window(&pool[i]).unwrap())
                .collect();
            let want = model.score_nshot(&pool[p.probe], &enrollment).unwrap();
            assert!((s.score - want).abs() < 1e-6, "{} vs {want}", s.score);
        }
    }
}
