//! Ranks, argmins and the tie-breaking rules shared by every algorithm.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ranks of `dists`: `ranks[j]` is the position of `j` after a stable sort,
/// so equal distances are ranked by index and the result is a permutation.
pub fn ranks_from_distances(dists: &[f64], ranks: &mut [u32]) {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    for (r, &j) in order.iter().enumerate() {
        ranks[j] = r as u32;
    }
}

/// Lowest-index argmin.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// How equal criterion values between candidate prototypes are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Smallest data index wins.
    #[default]
    LowestIndex,
    /// A seeded random priority per candidate decides; identical across
    /// implementations for the same seed.
    Seeded { seed: u64 },
    /// The first candidate reached in scan order keeps the place. Results
    /// then depend on the candidate ordering.
    FirstVisited,
}

/// Resolves ties between candidates with equal criterion values.
#[derive(Debug, Clone)]
pub(crate) struct TieBreak {
    priority: Option<Vec<u32>>,
    first_visited: bool,
}

impl TieBreak {
    pub(crate) fn new(policy: TiePolicy, n: usize, epoch: usize) -> Self {
        match policy {
            TiePolicy::LowestIndex => Self { priority: None, first_visited: false },
            TiePolicy::FirstVisited => Self { priority: None, first_visited: true },
            TiePolicy::Seeded { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut p: Vec<u32> = (0..n as u32).collect();
                p.shuffle(&mut rng);
                Self { priority: Some(p), first_visited: false }
            }
        }
    }

    /// Whether candidate `l` with value `v` replaces the incumbent.
    #[inline]
    pub(crate) fn better(&self, v: f64, l: usize, best_v: f64, best_l: usize) -> bool {
        if v < best_v {
            return true;
        }
        if v > best_v || self.first_visited {
            return false;
        }
        match &self.priority {
            None => l < best_l,
            Some(p) => p[l] < p[best_l],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranks(d: &[f64]) -> Vec<u32> {
        let mut r = vec![0; d.len()];
        ranks_from_distances(d, &mut r);
        r
    }

    #[test]
    fn rank_examples() {
        assert_eq!(ranks(&[4.0, 1.0, 9.0]), vec![1, 0, 2]);
        assert_eq!(ranks(&[3.0, 3.0, 3.0]), vec![0, 1, 2]);
        assert_eq!(ranks(&[2.0, 2.0, 1.0, 5.0]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn argmin_lowest_index() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0]), 1);
        assert_eq!(argmin(&[0.0]), 0);
    }

    #[test]
    fn tie_break_rules() {
        let t = TieBreak::new(TiePolicy::LowestIndex, 5, 0);
        assert!(t.better(1.0, 3, 1.0, 4));
        assert!(!t.better(1.0, 4, 1.0, 3));
        assert!(t.better(0.5, 4, 1.0, 3));
        let f = TieBreak::new(TiePolicy::FirstVisited, 5, 0);
        assert!(!f.better(1.0, 0, 1.0, 4));
        let s = TieBreak::new(TiePolicy::Seeded { seed: 3 }, 5, 0);
        assert_ne!(s.better(1.0, 0, 1.0, 4), s.better(1.0, 4, 1.0, 0));
    }

    proptest::proptest! {
        #[test]
        fn ranks_are_permutations_and_rank0_is_argmin(d in proptest::collection::vec(0u8..6, 1..12)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let r = ranks(&d);
            let mut sorted = r.clone();
            sorted.sort();
            proptest::prop_assert_eq!(sorted, (0..d.len() as u32).collect::<Vec<_>>());
            proptest::prop_assert_eq!(r[argmin(&d)], 0);
        }
    }
}
