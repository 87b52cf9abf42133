//! Seeded shuffling and stratified k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::preprocess::EncodedDataset;
use crate::error::{Error, Result};
use crate::layers::Rng;

/// Seeded Fisher–Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut Rng::seed_from_u64(seed));
    idx
}

/// Rows and labels permuted together.
pub fn shuffle(ds: &EncodedDataset, seed: u64) -> EncodedDataset {
    ds.subset(&permutation(ds.len(), seed))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// Sorted row indices.
    pub train: Vec<usize>,
    /// Sorted row indices.
    pub test: Vec<usize>,
}

/// What to do when a class has fewer samples than folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparseClassPolicy {
    #[default]
    Reject,
    /// Spread the few samples over the first folds reached; some folds get none.
    Allow,
}

/// Stratified k-fold over `labels`.
///
/// Each class is shuffled with its own seeded stream, then dealt round-robin
/// to folds. The dealing position carries over from one class to the next,
/// so fold sizes differ by at most one overall and each class's per-fold
/// count differs from its exact share by less than one.
pub fn stratified_kfold(
    labels: &[usize],
    class_names: &[String],
    k: usize,
    seed: u64,
    policy: SparseClassPolicy,
) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Config(format!("{} samples cannot fill {k} folds", labels.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(class_names.len());
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if policy == SparseClassPolicy::Reject {
        for (c, members) in by_class.iter().enumerate() {
            if !members.is_empty() && members.len() < k {
                return Err(Error::SparseClass {
                    class: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                    count: members.len(),
                    folds: k,
                });
            }
        }
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut offset = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] == f);
            Fold { train, test }
        })
        .collect())
}
