//! Balanced window-pair sampling for decision training and evaluation.

use std::collections::BTreeMap;

use rand::Rng;

use super::{DataError, Window};
use crate::rng;

/// Seed tag for the pair-sampling stream.
const TAG_PAIRS: u64 = 0x50414952;

/// One sampled pair, by index into the window pool it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPair {
    pub a: usize,
    pub b: usize,
    /// True iff both windows belong to the same user.
    pub genuine: bool,
}

/// A balanced set of genuine/impostor pairs over a window pool.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<WindowPair>,
    pub positive_fraction: f64,
}

/// Sample `n_pairs` pairs: `⌊n/2⌋` genuine (same user, two distinct windows)
/// and the rest impostor (two distinct users, one window each), all drawn
/// uniformly from the pool and determined by `seed`.
///
/// A genuine pair picks a user uniformly among those with ≥ 2 windows, then
/// two distinct windows of that user; an impostor pair picks two distinct
/// users uniformly, then one window of each.
pub fn sample_pairs(windows: &[Window], n_pairs: usize, seed: u64) -> Result<PairSet, DataError> {
    assert!(n_pairs > 0, "n_pairs must be positive");
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_user.entry(&w.user_id).or_default().push(i);
    }
    if by_user.len() < 2 {
        return Err(DataError::InsufficientUsers(format!(
            "pair sampling needs at least 2 users, pool has {}",
            by_user.len()
        )));
    }
    let users: Vec<&Vec<usize>> = by_user.values().collect();
    let multi: Vec<&Vec<usize>> = users.iter().copied().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() {
        return Err(DataError::InsufficientUsers("no user has 2 windows for genuine pairs".into()));
    }

    let mut rng = rng::sub_rng(seed, &[TAG_PAIRS]);
    let n_pos = n_pairs / 2;
    let mut pairs = Vec::with_capacity(n_pairs);

    for _ in 0..n_pos {
        let pool = multi[rng.gen_range(0..multi.len())];
        let i = rng.gen_range(0..pool.len());
        let mut j = rng.gen_range(0..pool.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push(WindowPair { a: pool[i], b: pool[j], genuine: true });
    }
    for _ in 0..n_pairs - n_pos {
        let u = rng.gen_range(0..users.len());
        let mut v = rng.gen_range(0..users.len() - 1);
        if v >= u {
            v += 1;
        }
        let a = users[u][rng.gen_range(0..users[u].len())];
        let b = users[v][rng.gen_range(0..users[v].len())];
        pairs.push(WindowPair { a, b, genuine: false });
    }

    Ok(PairSet { pairs, positive_fraction: n_pos as f64 / n_pairs as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(users: &[(&str, usize)]) -> Vec<Window> {
        let mut out = Vec::new();
        for &(uid, n) in users {
            for k in 0..n {
                out.push(Window {
                    user_id: uid.to_string(),
                    source_session_id: format!("{uid}_s0"),
                    offset_index: k,
                    window_seconds: 1,
                    values: vec![k as f32; 4],
                });
            }
        }
        out
    }

    #[test]
    fn labels_agree_with_user_ids_and_halves_balance() {
        let windows = pool(&[("a", 5), ("b", 4), ("c", 3)]);
        let set = sample_pairs(&windows, 1_000, 3).unwrap();
        assert_eq!(set.pairs.len(), 1_000);
        assert_eq!(set.positive_fraction, 0.5);
        let positives = set.pairs.iter().filter(|p| p.genuine).count();
        assert_eq!(positives, 500);
        for p in &set.pairs {
            let same = windows[p.a].user_id == windows[p.b].user_id;
            assert_eq!(same, p.genuine);
            assert_ne!(p.a, p.b);
        }
    }

    #[test]
    fn smallest_balanced_set() {
        let windows = pool(&[("a", 2), ("b", 2)]);
        let set = sample_pairs(&windows, 2, 0).unwrap();
        let positives = set.pairs.iter().filter(|p| p.genuine).count();
        assert_eq!((positives, set.pairs.len()), (1, 2));
    }

    #[test]
    fn odd_counts_round_positives_down() {
        let windows = pool(&[("a", 3), ("b", 3)]);
        let set = sample_pairs(&windows, 9, 1).unwrap();
        let positives = set.pairs.iter().filter(|p| p.genuine).count();
        assert_eq!(positives, 4);
        assert!((set.positive_fraction - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_pool_is_rejected() {
        let windows = pool(&[("a", 10)]);
        let err = sample_pairs(&windows, 10, 0).unwrap_err();
        assert!(matches!(err, DataError::InsufficientUsers(_)), "{err:?}");
    }

    #[test]
    fn same_seed_reproduces_pairs() {
        let windows = pool(&[("a", 5), ("b", 5)]);
        let x = sample_pairs(&windows, 50, 9).unwrap();
        let y = sample_pairs(&windows, 50, 9).unwrap();
        assert_eq!(x.pairs, y.pairs);
    }
}
