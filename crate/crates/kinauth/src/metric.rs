//! Metric-learning primitives: pairwise distances, the triplet loss and its
//! batch gradient, triplet categorization, online semi-hard mining, and the
//! contrastive / binary-cross-entropy losses.
//!
//! Distance conventions, fixed once to avoid silent mismatches:
//! - *Squared* L2 distances everywhere inside the triplet machinery (the loss
//!   is `max(d_ap² − d_an² + α, 0)`).
//! - *Unsquared* L2 inside the contrastive loss (`Y·D² + (1−Y)·max(m−D,0)²`).
//!
//! Mining selects, for every ordered same-label pair (anchor, positive) with
//! `anchor ≠ positive`, one negative: uniformly at random among the pair's
//! semi-hard candidates (`d_ap² < d_an² < d_ap² + α`), falling back to the
//! *easiest hard* negative (maximal `d_an²` among candidates with
//! `d_an² ≤ d_ap²`) when no semi-hard candidate exists — aggressive hardest
//! negatives tend to collapse training. Pairs with neither kind of candidate
//! are skipped; a batch where every pair is skipped has no valid triplets.

use crate::nn::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    /// No (anchor, positive, negative) triple can be formed from the batch.
    #[error("no valid triplets in batch")]
    NoValidTriplets,
    /// Embeddings/labels disagree or have unusable shapes.
    #[error("bad embedding batch: {0}")]
    BadBatch(String),
}

/// Triplet mining configuration. Mining strategy and fallback are fixed
/// (semi-hard with easiest-hard-negative fallback); the margin is the only
/// tunable.
#[derive(Clone, Copy, Debug)]
pub struct TripletConfig {
    /// Margin α of the triplet loss; must be > 0. Default 0.03.
    pub alpha: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { alpha: 0.03 }
    }
}

/// A batch of embeddings with per-row user labels (dense indices).
pub struct EmbeddingBatch<'a, T> {
    pub embeddings: &'a Tensor<T>,
    pub labels: &'a [usize],
}

impl<'a, T: Scalar> EmbeddingBatch<'a, T> {
    pub fn new(embeddings: &'a Tensor<T>, labels: &'a [usize]) -> Result<Self, MetricError> {
        if embeddings.rank() != 2 {
            return Err(MetricError::BadBatch(format!("expected [B,D] embeddings, got {:?}", embeddings.shape())));
        }
        if embeddings.dim(0) != labels.len() {
            return Err(MetricError::BadBatch(format!(
                "{} embedding rows but {} labels",
                embeddings.dim(0),
                labels.len()
            )));
        }
        Ok(EmbeddingBatch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

// ── distances ───────────────────────────────────────────────────────────────

/// All-pairs squared L2 distances: `D[i,j] = ‖e_i − e_j‖²`, symmetric, zero
/// diagonal, clamped at 0 against negative round-off.
pub fn pairwise_sq_distances<T: Scalar>(embeddings: &Tensor<T>) -> Tensor<T> {
    let (b, d) = (embeddings.dim(0), embeddings.dim(1));
    let e = embeddings.data();
    let mut out = Tensor::zeros(&[b, b]);
    let od = out.data_mut();
    for i in 0..b {
        let ei = &e[i * d..][..d];
        for j in (i + 1)..b {
            let ej = &e[j * d..][..d];
            let mut s = T::zero();
            for k in 0..d {
                let df = ei[k] - ej[k];
                s += df * df;
            }
            if s < T::zero() {
                s = T::zero();
            }
            od[i * b + j] = s;
            od[j * b + i] = s;
        }
    }
    out
}

// ── losses ──────────────────────────────────────────────────────────────────

/// Triplet loss on squared distances: `max(d_ap² − d_an² + α, 0)`.
pub fn triplet_loss<T: Scalar>(d_ap_sq: T, d_an_sq: T, alpha: T) -> T {
    (d_ap_sq - d_an_sq + alpha).max(T::zero())
}

/// Contrastive loss on an *unsquared* distance:
/// `Y·D² + (1−Y)·max(margin − D, 0)²`.
pub fn contrastive_loss<T: Scalar>(genuine: bool, d: T, margin: T) -> T {
    if genuine {
        d * d
    } else {
        let m = (margin - d).max(T::zero());
        m * m
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(p: T, y: bool) -> T {
    let lo = T::from_f(1e-7);
    let hi = T::one() - lo;
    let p = p.max(lo).min(hi);
    if y {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

// ── triplet categorization & mining ─────────────────────────────────────────

/// How a triplet relates to the margin, on squared distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripletCategory {
    /// `d_ap² + α ≤ d_an²`: zero loss.
    Easy,
    /// `d_ap² < d_an² < d_ap² + α`: positive loss, ordering still correct.
    SemiHard,
    /// `d_an² ≤ d_ap²`: ordering violated.
    Hard,
}

/// Classify a triplet by its squared anchor-positive / anchor-negative
/// distances. Boundary ties: `d_an² = d_ap²` is hard, `d_an² = d_ap² + α`
/// is easy.
pub fn categorize_triplet<T: Scalar>(d_ap_sq: T, d_an_sq: T, alpha: T) -> TripletCategory {
    if d_an_sq <= d_ap_sq {
        TripletCategory::Hard
    } else if d_ap_sq + alpha <= d_an_sq {
        TripletCategory::Easy
    } else {
        TripletCategory::SemiHard
    }
}

/// One mined triplet (batch indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinedTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// True if the negative came from the easiest-hard-negative fallback
    /// rather than the semi-hard set.
    pub fallback: bool,
}

/// Per-batch mining accounting. `semi_hard + fallback + skipped` equals the
/// number of valid (anchor, positive) pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MiningStats {
    /// Valid ordered same-label pairs considered.
    pub pairs: usize,
    /// Pairs whose negative was drawn from the semi-hard set.
    pub semi_hard: usize,
    /// Pairs that used the easiest-hard-negative fallback.
    pub fallback: usize,
    /// Pairs with no semi-hard and no hard negative (dropped).
    pub skipped: usize,
}

/// Online semi-hard mining over one batch (see module docs for the rule).
/// The random choice among a pair's semi-hard candidates is drawn from `rng`;
/// the fallback is deterministic (max `d_an²`, lowest index on ties).
pub fn mine_semihard<T: Scalar>(
    batch: &EmbeddingBatch<'_, T>,
    cfg: &TripletConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<MinedTriplet>, MiningStats), MetricError> {
    debug_assert!(cfg.alpha > 0.0);
    let b = batch.len();
    let dist = pairwise_sq_distances(batch.embeddings);
    let dd = dist.data();
    let alpha = T::from_f(cfg.alpha);
    let mut out = Vec::new();
    let mut stats = MiningStats::default();
    let mut semi: Vec<usize> = Vec::with_capacity(b);
    for a in 0..b {
        for p in 0..b {
            if a == p || batch.labels[a] != batch.labels[p] {
                continue;
            }
            stats.pairs += 1;
            let d_ap = dd[a * b + p];
            semi.clear();
            let mut best_hard: Option<(usize, T)> = None;
            for n in 0..b {
                if batch.labels[n] == batch.labels[a] {
                    continue;
                }
                let d_an = dd[a * b + n];
                match categorize_triplet(d_ap, d_an, alpha) {
                    TripletCategory::SemiHard => semi.push(n),
                    TripletCategory::Hard => match best_hard {
                        Some((_, best)) if d_an <= best => {}
                        _ => best_hard = Some((n, d_an)),
                    },
                    TripletCategory::Easy => {}
                }
            }
            if !semi.is_empty() {
                let n = semi[rng.gen_range(0..semi.len())];
                out.push(MinedTriplet { anchor: a, positive: p, negative: n, fallback: false });
                stats.semi_hard += 1;
            } else if let Some((n, _)) = best_hard {
                out.push(MinedTriplet { anchor: a, positive: p, negative: n, fallback: true });
                stats.fallback += 1;
            } else {
                stats.skipped += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(MetricError::NoValidTriplets);
    }
    Ok((out, stats))
}

// ── batch losses with gradients ─────────────────────────────────────────────

/// Mean triplet loss over mined triplets plus its gradient with respect to
/// the embeddings. Active triplets (positive loss) contribute
/// `∂/∂e_a = 2(e_n − e_p)`, `∂/∂e_p = 2(e_p − e_a)`, `∂/∂e_n = 2(e_a − e_n)`,
/// scaled by `1/len(triplets)`.
pub fn triplet_batch_loss_grad<T: Scalar>(
    embeddings: &Tensor<T>,
    triplets: &[MinedTriplet],
    alpha: T,
) -> Result<(T, Tensor<T>), MetricError> {
    if triplets.is_empty() {
        return Err(MetricError::NoValidTriplets);
    }
    let (b, d) = (embeddings.dim(0), embeddings.dim(1));
    let e = embeddings.data();
    let mut grad = Tensor::zeros(&[b, d]);
    let gd = grad.data_mut();
    let mut total = T::zero();
    let scale = T::one() / T::from_f(triplets.len() as f64);
    let two = T::from_f(2.0);
    for t in triplets {
        let (a, p, n) = (t.anchor, t.positive, t.negative);
        let (ea, ep, en) = (&e[a * d..][..d], &e[p * d..][..d], &e[n * d..][..d]);
        let mut d_ap = T::zero();
        let mut d_an = T::zero();
        for k in 0..d {
            let dp = ea[k] - ep[k];
            let dn = ea[k] - en[k];
            d_ap += dp * dp;
            d_an += dn * dn;
        }
        let loss = triplet_loss(d_ap, d_an, alpha);
        total += loss * scale;
        if loss > T::zero() {
            let c = two * scale;
            for k in 0..d {
                gd[a * d + k] += c * (en[k] - ep[k]);
                gd[p * d + k] += c * (ep[k] - ea[k]);
                gd[n * d + k] += c * (ea[k] - en[k]);
            }
        }
    }
    Ok((total, grad))
}

/// A labeled index pair for contrastive training.
#[derive(Clone, Copy, Debug)]
pub struct IndexPair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

/// Mean contrastive loss over index pairs plus its gradient with respect to
/// the embeddings. Uses the unsquared distance `D = ‖e_a − e_b‖`; for
/// impostor pairs inside the margin, `∂D/∂e` is undefined at `D = 0`, where
/// the gradient is taken as 0.
pub fn contrastive_batch_loss_grad<T: Scalar>(
    embeddings: &Tensor<T>,
    pairs: &[IndexPair],
    margin: T,
) -> Result<(T, Tensor<T>), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::BadBatch("no pairs".into()));
    }
    let (b, dim) = (embeddings.dim(0), embeddings.dim(1));
    let e = embeddings.data();
    let mut grad = Tensor::zeros(&[b, dim]);
    let gd = grad.data_mut();
    let mut total = T::zero();
    let scale = T::one() / T::from_f(pairs.len() as f64);
    let two = T::from_f(2.0);
    let tiny = T::from_f(1e-12);
    for p in pairs {
        let (i, j) = (p.a, p.b);
        let (ei, ej) = (&e[i * dim..][..dim], &e[j * dim..][..dim]);
        let mut sq = T::zero();
        for k in 0..dim {
            let df = ei[k] - ej[k];
            sq += df * df;
        }
        let dist = sq.sqrt();
        total += contrastive_loss(p.genuine, dist, margin) * scale;
        if p.genuine {
            // ∂(D²)/∂e_i = 2(e_i − e_j)
            let c = two * scale;
            for k in 0..dim {
                let df = ei[k] - ej[k];
                gd[i * dim + k] += c * df;
                gd[j * dim + k] -= c * df;
            }
        } else if dist < margin && dist > tiny {
            // ∂ max(m−D,0)² /∂e_i = −2(m−D)·(e_i−e_j)/D
            let c = two * scale * (margin - dist) / dist;
            for k in 0..dim {
                let df = ei[k] - ej[k];
                gd[i * dim + k] -= c * df;
                gd[j * dim + k] += c * df;
            }
        }
    }
    Ok((total, grad))
}

/// Mean BCE over a batch of predicted probabilities `p [B,1]` plus the
/// gradient with respect to `p`. The clamp in [`bce_loss`] is mirrored here:
/// outside the clamp range the gradient uses the clamped probability.
pub fn bce_batch_loss_grad<T: Scalar>(p: &Tensor<T>, y: &[bool]) -> Result<(T, Tensor<T>), MetricError> {
    if p.len() != y.len() {
        return Err(MetricError::BadBatch(format!("{} probabilities but {} labels", p.len(), y.len())));
    }
    let n = T::from_f(y.len() as f64);
    let lo = T::from_f(1e-7);
    let hi = T::one() - lo;
    let mut grad = Tensor::zeros(p.shape());
    let gd = grad.data_mut();
    let mut total = T::zero();
    for (i, (&pi, &yi)) in p.data().iter().zip(y).enumerate() {
        total += bce_loss(pi, yi) / n;
        let pc = pi.max(lo).min(hi);
        let target = if yi { T::one() } else { T::zero() };
        gd[i] = (pc - target) / (pc * (T::one() - pc)) / n;
    }
    Ok((total, grad))
}

// ── tests ───────────────────────────────────────────────────────────────────
