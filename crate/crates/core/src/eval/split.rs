//! Seeded stratified splitting and oversampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self { train_fraction: 0.76, stratified: true, seed }
    }
}

/// Row indices of a train/test partition, each ascending.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions rows so that each class is split in proportion; per-class
/// train counts are rounded by largest remainder and kept in `[1, n_c - 1]`.
pub fn stratified_split(y: &[usize], spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = (n as f64 * spec.train_fraction + 0.5).floor() as usize;
    let mut train = Vec::with_capacity(total);
    if !spec.stratified {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        train.extend_from_slice(&order[..total.clamp(1, n.saturating_sub(1))]);
    } else {
        let k = y.iter().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in y.iter().enumerate() {
            members[c].push(i);
        }
        if let Some(c) = members.iter().position(|m| m.len() == 1) {
            return Err(Error::InvalidInput(format!("class {c} has a single row and cannot be split")));
        }
        // Exact quotas n_c * total / n as integer quotient and remainder.
        let mut quota: Vec<usize> = members.iter().map(|m| m.len() * total / n).collect();
        let mut by_remainder: Vec<usize> = (0..k).filter(|&c| !members[c].is_empty()).collect();
        by_remainder.sort_by_key(|&c| (std::cmp::Reverse(members[c].len() * total % n), c));
        let short = total - quota.iter().sum::<usize>();
        for &c in by_remainder.iter().take(short) {
            quota[c] += 1;
        }
        for (c, m) in members.iter_mut().enumerate() {
            if m.is_empty() {
                continue;
            }
            m.shuffle(&mut rng);
            let q = quota[c].clamp(1, m.len() - 1);
            train.extend_from_slice(&m[..q]);
        }
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(Split { train, test })
}

/// Indices into `y` after oversampling every smaller class with replacement
/// up to the size of the largest: all original rows first, then the draws.
pub fn balance_training(y: &[usize], seed: u64) -> Vec<usize> {
    let k = y.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    let largest = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..y.len()).collect();
    for m in members.iter().filter(|m| !m.is_empty()) {
        for _ in m.len()..largest {
            out.push(m[rng.random_range(0..m.len())]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_allocation() {
        let y: Vec<usize> = (0..100).map(|i| usize::from(i < 30)).collect();
        let s = stratified_split(&y, &SplitSpec::new(3)).unwrap();
        assert_eq!(s.train.len(), 76);
        assert_eq!(s.train.iter().filter(|&&i| y[i] == 1).count(), 23);
        assert_eq!(s.train.len() + s.test.len(), 100);
        assert_eq!(s, stratified_split(&y, &SplitSpec::new(3)).unwrap());
    }

    #[test]
    fn singleton_class_is_rejected() {
        assert!(stratified_split(&[0, 0, 0, 1], &SplitSpec::new(0)).is_err());
    }

    #[test]
    fn oversampling_reaches_parity() {
        let y: Vec<usize> = (0..12).map(|i| usize::from(i >= 10)).collect();
        let idx = balance_training(&y, 1);
        assert_eq!(idx.len(), 20);
        assert!(idx[12..].iter().all(|&i| i >= 10));
        assert_eq!(balance_training(&[0, 1, 0, 1], 5), vec![0, 1, 2, 3]);
    }
}
