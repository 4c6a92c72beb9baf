use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Target-train / surrogate-train / test / verification fractions.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.4, 0.4, 0.1, 0.1];

/// Four pairwise-disjoint node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub target_train: Vec<usize>,
    pub surrogate_train: Vec<usize>,
    pub test: Vec<usize>,
    /// The verification set `D_v`.
    pub verification: Vec<usize>,
}

impl DataSplit {
    pub fn sizes(&self) -> [usize; 4] {
        [
            self.target_train.len(),
            self.surrogate_train.len(),
            self.test.len(),
            self.verification.len(),
        ]
    }
}

/// Shuffle `0..node_count` with `seed` and cut it into four parts.
///
/// The first three parts get `floor(fraction * n)` nodes; whatever remains
/// goes to the verification part.
pub fn split_dataset(node_count: usize, fractions: [f64; 4], seed: u64) -> Result<DataSplit> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid(format!(
            "split fractions must lie in [0, 1], got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }

    let mut order: Vec<usize> = (0..node_count).collect();
    order.shuffle(&mut seed::rng(seed));

    // guard against 0.4 * 3025 = 1209.9999...
    let size = |f: f64| ((f * node_count as f64) + 1e-9).floor() as usize;
    let a = size(fractions[0]);
    let b = size(fractions[1]);
    let c = size(fractions[2]);

    let mut rest = order.into_iter();
    let target_train = rest.by_ref().take(a).collect();
    let surrogate_train = rest.by_ref().take(b).collect();
    let test = rest.by_ref().take(c).collect();
    let verification = rest.collect();
    Ok(DataSplit {
        target_train,
        surrogate_train,
        test,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn acm_sized_split() {
        let split = split_dataset(3025, DEFAULT_FRACTIONS, 0).unwrap();
        let [a, b, c, d] = split.sizes();
        assert_eq!((a, b), (1210, 1210));
        assert!((302..=303).contains(&c));
        assert!((302..=303).contains(&d));
        assert_eq!(a + b + c + d, 3025);
    }

    #[test]
    fn ten_nodes() {
        let split = split_dataset(10, DEFAULT_FRACTIONS, 7).unwrap();
        assert_eq!(split.sizes(), [4, 4, 1, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(500, DEFAULT_FRACTIONS, 11).unwrap();
        let b = split_dataset(500, DEFAULT_FRACTIONS, 11).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(500, DEFAULT_FRACTIONS, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(split_dataset(10, [0.5, 0.5, 0.1, 0.1], 0).is_err());
        assert!(split_dataset(10, [1.2, -0.2, 0.0, 0.0], 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn splits_are_disjoint(seed in any::<u64>(), n in 1usize..400) {
            let split = split_dataset(n, DEFAULT_FRACTIONS, seed).unwrap();
            let mut seen = HashSet::new();
            for part in [&split.target_train, &split.surrogate_train, &split.test, &split.verification] {
                for &v in part.iter() {
                    prop_assert!(v < n);
                    prop_assert!(seen.insert(v));
                }
            }
            prop_assert_eq!(seen.len(), n);
        }
    }
}
