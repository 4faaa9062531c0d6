//! Seeded user splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::DataError;
use crate::rng;

/// Seed tag for the split shuffle stream.
const TAG_SPLIT: u64 = 0x53504c49;

/// Default (train, validation, test) user counts.
pub const DEFAULT_SPLIT_COUNTS: (usize, usize, usize) = (35, 3, 7);

/// A disjoint, exhaustive partition of the user set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSplit {
    pub train_users: BTreeSet<String>,
    pub validation_users: BTreeSet<String>,
    pub test_users: BTreeSet<String>,
    pub seed: u64,
}

/// Partition `user_ids` into train/validation/test groups of the given sizes,
/// uniformly at random but fully determined by `seed`. The ids are sorted
/// before the seeded shuffle so the partition does not depend on input order.
pub fn split_users(
    user_ids: &BTreeSet<String>,
    seed: u64,
    counts: (usize, usize, usize),
) -> Result<UserSplit, DataError> {
    let (n_train, n_val, n_test) = counts;
    let expected = n_train + n_val + n_test;
    if user_ids.len() != expected {
        return Err(DataError::BadSplitCounts { users: user_ids.len(), expected });
    }
    let mut ids: Vec<&String> = user_ids.iter().collect();
    ids.shuffle(&mut rng::sub_rng(seed, &[TAG_SPLIT]));

    let take = |slice: &[&String]| -> BTreeSet<String> { slice.iter().map(|s| (*s).clone()).collect() };
    Ok(UserSplit {
        train_users: take(&ids[..n_train]),
        validation_users: take(&ids[n_train..n_train + n_val]),
        test_users: take(&ids[n_train + n_val..]),
        seed,
    })
}
