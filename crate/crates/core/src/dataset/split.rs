use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EpisodeSet;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Val,
    Test,
}

/// Patient indices per fold, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `n` patients with `seed` and carves off a test fraction, then a
/// validation fraction of the remainder. Counts round to the nearest patient.
pub fn split_indices(n: usize, seed: u64, test_frac: f64, val_frac: f64) -> Result<SplitIndices> {
    let valid = |f: f64| f > 0.0 && f < 1.0;
    if !valid(test_frac) || !valid(val_frac) || test_frac + val_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions must lie in (0, 1) and sum below 1 (test {test_frac}, val {val_frac})"
        )));
    }
    if n < 5 {
        return Err(Error::Config(format!("need at least 5 patients to split, got {n}")));
    }
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 2);
    let rest = n - n_test;
    let n_val = ((rest as f64 * val_frac).round() as usize).clamp(1, rest - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut util::rng(seed));
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    let test = take(0..n_test);
    let val = take(n_test..n_test + n_val);
    let train = take(n_test + n_val..n);
    Ok(SplitIndices { train, val, test })
}

/// Patient-level train/validation/test split.
pub fn split_dataset(
    episodes: &EpisodeSet,
    seed: u64,
    test_frac: f64,
    val_frac: f64,
) -> Result<(EpisodeSet, EpisodeSet, EpisodeSet)> {
    let idx = split_indices(episodes.len(), seed, test_frac, val_frac)?;
    Ok((episodes.subset(&idx.train), episodes.subset(&idx.val), episodes.subset(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn hundred_patients_split_64_16_20() {
        let s = split_indices(100, 3, 0.2, 0.2).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 20));
    }

    #[test]
    fn ten_patients_split_6_2_2() {
        let s = split_indices(10, 3, 0.2, 0.2).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn same_seed_same_split() {
        assert_eq!(split_indices(57, 11, 0.2, 0.2).unwrap(), split_indices(57, 11, 0.2, 0.2).unwrap());
        assert_ne!(split_indices(57, 11, 0.2, 0.2).unwrap(), split_indices(57, 12, 0.2, 0.2).unwrap());
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        assert!(matches!(split_indices(100, 0, 0.0, 0.2), Err(Error::Config(_))));
        assert!(matches!(split_indices(100, 0, 0.6, 0.4), Err(Error::Config(_))));
        assert!(matches!(split_indices(100, 0, 0.2, 1.2), Err(Error::Config(_))));
        assert!(matches!(split_indices(4, 0, 0.2, 0.2), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn folds_partition_patients(n in 5usize..400, seed in any::<u64>()) {
            let s = split_indices(n, seed, 0.2, 0.2).unwrap();
            let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
        }
    }
}
