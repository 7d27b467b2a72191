use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, Result, SplitMasks};

/// Assignment of items to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    /// Members of fold `i` in ascending order.
    pub fn fold(&self, i: usize) -> Vec<usize> {
        self.fold_of.iter().enumerate().filter_map(|(j, &f)| (f == i).then_some(j)).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Fixed-shape semi-supervised split: `per_class` training nodes per class,
/// then `n_val` validation and `n_test` test nodes drawn from the remainder.
pub fn planetoid_style_split(labels: &[usize], per_class: usize, n_val: usize, n_test: usize, seed: u64) -> Result<SplitMasks> {
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut taken = vec![0usize; num_classes];
    let mut train = Vec::with_capacity(per_class * num_classes);
    let mut rest = Vec::with_capacity(n);
    for &v in &order {
        let c = labels[v];
        if taken[c] < per_class {
            taken[c] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    if let Some(class) = taken.iter().position(|&t| t < per_class) {
        return Err(GraphError::InsufficientClass { class, have: taken[class], need: per_class });
    }
    if rest.len() < n_val + n_test {
        return Err(GraphError::InsufficientRemainder { need: n_val + n_test, have: rest.len() });
    }
    SplitMasks::from_indices(n, &train, &rest[..n_val], &rest[n_val..n_val + n_test])
}

/// Stratified assignment to `k` folds.
///
/// Each class is shuffled, classes are laid end to end, and position `p`
/// goes to fold `p mod k`. Fold sizes and per-class fold counts both differ
/// by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(GraphError::InvalidFolds(k));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut pos = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = pos % k;
            pos += 1;
        }
    }
    Ok(FoldPlan { k, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cora_like_labels() -> Vec<usize> {
        // 7 classes with uneven sizes summing to 2708
        let sizes = [351, 217, 418, 818, 426, 298, 180];
        sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect()
    }

    #[test]
    fn planetoid_shape() {
        let labels = cora_like_labels();
        let m = planetoid_style_split(&labels, 20, 500, 1000, 0).unwrap();
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        assert_eq!(count(&m.train), 140);
        assert_eq!(count(&m.val), 500);
        assert_eq!(count(&m.test), 1000);
        m.validate().unwrap();
        for c in 0..7 {
            assert_eq!((0..labels.len()).filter(|&i| m.train[i] && labels[i] == c).count(), 20);
        }
    }

    #[test]
    fn planetoid_deterministic_per_seed() {
        let labels = cora_like_labels();
        let a = planetoid_style_split(&labels, 20, 500, 1000, 7).unwrap();
        let b = planetoid_style_split(&labels, 20, 500, 1000, 7).unwrap();
        let c = planetoid_style_split(&labels, 20, 500, 1000, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn planetoid_small_class_named() {
        let labels = vec![0, 0, 0, 1];
        match planetoid_style_split(&labels, 2, 0, 0, 0) {
            Err(GraphError::InsufficientClass { class, .. }) => assert_eq!(class, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kfold_two_balanced_classes() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let plan = stratified_kfold(&labels, 5, 3).unwrap();
        for f in 0..5 {
            let members = plan.fold(f);
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|&&i| labels[i] == 1).count(), 1);
        }
    }

    #[test]
    fn kfold_partition_and_stratification() {
        // MUTAG-like label counts: 63 negatives, 125 positives
        let labels: Vec<usize> = (0..188).map(|i| usize::from(i >= 63)).collect();
        let plan = stratified_kfold(&labels, 10, 11).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in 0..10 {
            for i in plan.fold(f) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        // counting oracle over the plan
        let ones: Vec<usize> = (0..10).map(|f| plan.fold(f).iter().filter(|&&i| labels[i] == 1).count()).collect();
        assert!(ones.iter().max().unwrap() - ones.iter().min().unwrap() <= 1);
    }

    #[test]
    fn kfold_rejects_k_below_two() {
        assert!(matches!(stratified_kfold(&[0, 1], 1, 0), Err(GraphError::InvalidFolds(1))));
    }

    #[test]
    fn kfold_seed_sensitivity() {
        let labels: Vec<usize> = (0..120).map(|i| i % 3).collect();
        assert_eq!(stratified_kfold(&labels, 10, 1).unwrap(), stratified_kfold(&labels, 10, 1).unwrap());
        assert_ne!(stratified_kfold(&labels, 10, 1).unwrap(), stratified_kfold(&labels, 10, 2).unwrap());
    }
}
