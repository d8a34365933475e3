use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 5;

/// Five disjoint subsets of tree indices covering the cohort.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// Indices of every tree outside fold `k`, in ascending order.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn test_indices(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }
}

/// Shuffles `0..n` and deals it into five folds whose sizes differ by at
/// most one; the first `n % 5` folds get the extra tree.
pub fn five_fold_split(n: usize, seed: u64) -> Result<FoldSplit> {
    if n < NUM_FOLDS {
        return Err(Error::Config(format!(
            "five-fold split needs at least {NUM_FOLDS} trees, got {n}"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / NUM_FOLDS, n % NUM_FOLDS);
    let mut folds = Vec::with_capacity(NUM_FOLDS);
    let mut start = 0;
    for k in 0..NUM_FOLDS {
        let size = base + usize::from(k < extra);
        let mut fold = ids[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldSplit { seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_trees_give_pairs() {
        let s = five_fold_split(10, 3).unwrap();
        assert!(s.folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn sizes_for_511() {
        let s = five_fold_split(511, 0).unwrap();
        let sizes: Vec<usize> = s.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![103, 102, 102, 102, 102]);
    }

    #[test]
    fn folds_partition_the_input() {
        let s = five_fold_split(37, 9).unwrap();
        let mut all: Vec<usize> = s.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        for k in 0..5 {
            let train = s.train_indices(k);
            assert!(s.test_indices(k).iter().all(|i| !train.contains(i)));
            assert_eq!(train.len() + s.test_indices(k).len(), 37);
        }
    }

    #[test]
    fn too_few_trees() {
        assert!(matches!(five_fold_split(4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn seed_determines_split() {
        assert_eq!(five_fold_split(50, 1).unwrap(), five_fold_split(50, 1).unwrap());
        assert_ne!(five_fold_split(50, 1).unwrap(), five_fold_split(50, 2).unwrap());
    }
}
