use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vinecast::eval::{metrics, roc_auc, stratified_split, SplitSpec};

/// All-pairs Mann-Whitney count: a pair scores 1 when the positive ranks
/// higher and 1/2 on a tie, rounded once.
fn mann_whitney(y: &[usize], s: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u128, 0u128);
    for (i, &yi) in y.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1;
                twice += if s[i] > s[j] {
                    2
                } else if s[i] == s[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn labels_and_scores(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n = rng.random_range(2..80);
    let levels = rng.random_range(1..12);
    loop {
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if y.contains(&0) && y.contains(&1) {
            let s = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
            return (y, s);
        }
    }
}

#[test]
fn auc_equals_mann_whitney_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (y, s) = labels_and_scores(&mut rng);
        assert_eq!(roc_auc(&y, &s).unwrap().auc, mann_whitney(&y, &s), "{y:?} {s:?}");
    }
}

#[test]
fn forty_seeds_give_distinct_partitions() {
    let y: Vec<usize> = (0..300).map(|i| usize::from(i % 3 == 0)).collect();
    let mut parts: Vec<Vec<usize>> = (0..40).map(|seed| stratified_split(&y, &SplitSpec::new(seed)).unwrap().train).collect();
    parts.sort();
    parts.dedup();
    assert!(parts.len() >= 39);
}

proptest! {
    #[test]
    fn constant_predictor_has_chance_balanced_accuracy(seed in 0u64..10_000, constant in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, _) = labels_and_scores(&mut rng);
        prop_assert_eq!(metrics(&y, &vec![constant; y.len()]).unwrap().balanced_accuracy, 0.5);
    }

    #[test]
    fn metrics_ignore_joint_permutation(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, s) = labels_and_scores(&mut rng);
        let pred: Vec<usize> = s.iter().map(|&v| usize::from(v > 0.4)).collect();
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut rng);
        let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let pp: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let sp: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        prop_assert_eq!(metrics(&y, &pred).unwrap(), metrics(&yp, &pp).unwrap());
        prop_assert_eq!(roc_auc(&y, &s).unwrap().auc, roc_auc(&yp, &sp).unwrap().auc);
    }

    #[test]
    fn roc_curve_is_monotone_from_origin_to_corner(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, s) = labels_and_scores(&mut rng);
        let roc = roc_auc(&y, &s).unwrap();
        let (first, last) = (roc.points[0], roc.points[roc.points.len() - 1]);
        prop_assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        prop_assert!(roc.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }
}
