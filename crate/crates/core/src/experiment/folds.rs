use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;

/// Assignment of `n` items to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    /// Fold id of each item.
    pub assignments: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts the permutation into `k`
/// contiguous blocks. The first `n % k` folds get one extra item.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan, ExperimentError> {
    if k < 2 || n < k {
        return Err(ExperimentError::BadK { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignments = vec![0; n];
    let mut at = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[at..at + size] {
            assignments[i] = fold;
        }
        at += size;
    }
    Ok(FoldPlan { k, n, seed, assignments })
}

impl FoldPlan {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.assignments.iter().for_each(|&f| s[f] += 1);
        s
    }

    /// Held-out items of `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// Every item outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignments[i] != fold).collect()
    }
}
