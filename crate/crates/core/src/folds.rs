//! Random k-fold partitions for cross-fitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Units of fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Units outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }

    /// Wraps an explicit assignment, checking that every fold is nonempty.
    pub fn from_assignment(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        let n = fold_of.len();
        let a = FoldAssignment { n, k, fold_of, seed: 0 };
        if a.fold_of.iter().any(|&f| f >= k) || a.sizes().contains(&0) {
            return Err(Error::InvalidData("fold assignment must use every fold in 0..k".into()));
        }
        Ok(a)
    }
}

/// Uniform random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::config("folds", format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::config("folds", format!("{k} folds for {n} units")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { n, k, fold_of, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_into_ten() {
        let f = make_folds(100, 10, 1).unwrap();
        assert_eq!(f.sizes(), vec![10; 10]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_folds(57, 5, 9).unwrap(), make_folds(57, 5, 9).unwrap());
        assert_ne!(make_folds(57, 5, 9).unwrap().fold_of, make_folds(57, 5, 10).unwrap().fold_of);
    }

    #[test]
    fn rejects_bad_k() {
        assert!(make_folds(5, 6, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_balanced(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let f = make_folds(n, k, seed).unwrap();
            let sizes = f.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|j| f.members(j)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
