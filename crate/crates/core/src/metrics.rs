//! Adjusted Rand Index and cluster counting.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Pair counts between two labelings of the same items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    /// Same cluster in both.
    pub a: u64,
    /// Same in the first, different in the second.
    pub b: u64,
    /// Different in the first, same in the second.
    pub c: u64,
    /// Different in both.
    pub d: u64,
}

fn check_lengths(n1: usize, n2: usize) -> Result<()> {
    if n1 != n2 {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length ({n1} vs {n2})"
        )));
    }
    if n1 < 2 {
        return Err(Error::InvalidInput("ARI needs at least 2 items".into()));
    }
    Ok(())
}

fn dense_codes<T: Hash + Eq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut seen = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(l).or_insert(next)
        })
        .collect();
    (codes, seen.len())
}

fn choose2(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Pair counts from the contingency table, `O(n + K₁K₂)`.
pub fn pair_counts<T: Hash + Eq, U: Hash + Eq>(truth: &[T], est: &[U]) -> Result<PairCounts> {
    check_lengths(truth.len(), est.len())?;
    let (t, kt) = dense_codes(truth);
    let (e, ke) = dense_codes(est);
    let mut table = vec![0u64; kt * ke];
    let mut rows = vec![0u64; kt];
    let mut cols = vec![0u64; ke];
    for (&i, &j) in t.iter().zip(&e) {
        table[i * ke + j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    let a: u64 = table.iter().map(|&x| choose2(x)).sum();
    let same_truth: u64 = rows.iter().map(|&x| choose2(x)).sum();
    let same_est: u64 = cols.iter().map(|&x| choose2(x)).sum();
    let total = choose2(truth.len() as u64);
    let b = same_truth - a;
    let c = same_est - a;
    Ok(PairCounts {
        a,
        b,
        c,
        d: total - a - b - c,
    })
}

/// Pair counts by visiting every pair. Quadratic; kept as a reference.
pub fn pair_counts_naive<T: PartialEq, U: PartialEq>(truth: &[T], est: &[U]) -> Result<PairCounts> {
    check_lengths(truth.len(), est.len())?;
    let mut pc = PairCounts { a: 0, b: 0, c: 0, d: 0 };
    for i in 0..truth.len() {
        for j in i + 1..truth.len() {
            match (truth[i] == truth[j], est[i] == est[j]) {
                (true, true) => pc.a += 1,
                (true, false) => pc.b += 1,
                (false, true) => pc.c += 1,
                (false, false) => pc.d += 1,
            }
        }
    }
    Ok(pc)
}

impl PairCounts {
    /// ARI from pair counts. Numerator and denominator are exact integers;
    /// only the final division rounds.
    ///
    /// When the denominator vanishes (both labelings trivial) the result is
    /// 1 if the partitions agree on every pair and 0 otherwise.
    pub fn ari(&self) -> f64 {
        let (a, b, c, d) = (self.a as i128, self.b as i128, self.c as i128, self.d as i128);
        let total = a + b + c + d;
        let expected = (a + b) * (a + c) + (c + d) * (b + d);
        let num = total * (a + d) - expected;
        let den = total * total - expected;
        if den == 0 {
            return if b == 0 && c == 0 { 1.0 } else { 0.0 };
        }
        num as f64 / den as f64
    }
}

/// Adjusted Rand Index between two labelings; labels can be any hashable type.
pub fn ari<T: Hash + Eq, U: Hash + Eq>(truth: &[T], est: &[U]) -> Result<f64> {
    Ok(pair_counts(truth, est)?.ari())
}

/// Number of distinct labels.
pub fn cluster_count<T: Hash + Eq>(labels: &[T]) -> usize {
    dense_codes(labels).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let pc = pair_counts(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert_eq!(pc, PairCounts { a: 0, b: 2, c: 2, d: 2 });
        assert_eq!(pc.ari(), -0.5);
    }

    #[test]
    fn identical_is_one() {
        assert_eq!(ari(&[0, 0, 1, 2, 2], &["x", "x", "y", "z", "z"]).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_denominator() {
        assert_eq!(ari(&[1, 1, 1], &[5, 5, 5]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 2, 3], &[4, 5, 6]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 1, 1], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(ari(&[1, 2], &[1]).is_err());
        assert!(ari(&[1], &[1]).is_err());
    }

    #[test]
    fn counts_distinct() {
        assert_eq!(cluster_count(&[1, 1, 1]), 1);
        assert_eq!(cluster_count(&["a", "b", "a", "c"]), 3);
    }

    proptest! {
        #[test]
        fn fast_path_matches_pair_loop(pairs in prop::collection::vec((0u8..6, 0u8..4), 2..120)) {
            let (t, e): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            prop_assert_eq!(pair_counts(&t, &e).unwrap(), pair_counts_naive(&t, &e).unwrap());
        }

        #[test]
        fn symmetric_and_bounded(pairs in prop::collection::vec((0u8..5, 0u8..5), 2..80)) {
            let (t, e): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let x = ari(&t, &e).unwrap();
            prop_assert_eq!(x, ari(&e, &t).unwrap());
            prop_assert!(x <= 1.0);
        }

        #[test]
        fn relabel_invariant(pairs in prop::collection::vec((0u8..5, 0u8..5), 2..80), shift in 1u8..50) {
            let (t, e): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let relabeled: Vec<u8> = e.iter().map(|x| x.wrapping_mul(7).wrapping_add(shift)).collect();
            prop_assert_eq!(ari(&t, &e).unwrap(), ari(&t, &relabeled).unwrap());
        }
    }
}
