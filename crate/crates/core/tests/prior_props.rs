use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vinecast::prior::{discretize_labels, exact_ppd, sample_task, DiscreteHypothesisPrior, ImbalanceMode, Observation, PriorConfig};

fn random_prior(rng: &mut ChaCha8Rng, n_hyp: usize, grid: usize, classes: usize, eps: f64) -> DiscreteHypothesisPrior {
    let hyps: Vec<Vec<usize>> = (0..n_hyp).map(|_| (0..grid).map(|_| rng.random_range(0..classes)).collect()).collect();
    let raw: Vec<f64> = (0..n_hyp).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - rest;
    DiscreteHypothesisPrior::new(hyps, probs, classes, eps).unwrap()
}

proptest! {
    #[test]
    fn exact_ppd_rows_are_distributions(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_prior(&mut rng, 8, 6, 3, 0.1);
        let (ctx, _) = prior.sample_observations(&mut rng).unwrap();
        for row in exact_ppd(&prior, &ctx, &(0..6).collect::<Vec<_>>()).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn boosting_a_consistent_hypothesis_never_hurts_its_prediction(seed in 0u64..10_000, point in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_prior(&mut rng, 8, 6, 2, 0.1);
        let h = rng.random_range(0..8);
        // Noise-free observations of hypothesis h.
        let ctx: Vec<Observation> = (0..4).map(|_| {
            let p = rng.random_range(0..6);
            Observation { point: p, label: prior.hypotheses[h][p] }
        }).collect();
        let before = exact_ppd(&prior, &ctx, &[point]).unwrap()[0][prior.hypotheses[h][point]];
        let mut probs = prior.prior_probs.clone();
        probs[h] *= 2.0;
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let rest: f64 = probs.iter().enumerate().filter(|&(i, _)| i != h).map(|(_, p)| p).sum();
        probs[h] = 1.0 - rest;
        let boosted = DiscreteHypothesisPrior { prior_probs: probs, ..prior.clone() };
        let after = exact_ppd(&boosted, &ctx, &[point]).unwrap()[0][prior.hypotheses[h][point]];
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn quantile_labels_depend_only_on_ranks(values in proptest::collection::vec(-50.0f64..50.0, 3..40), k in 2usize..6, seed in 0u64..100) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let warped: Vec<f64> = values.iter().map(|v| (v / 10.0).exp() * 3.0 - 7.0).collect();
        let a = discretize_labels(&values, k, ImbalanceMode::QuantileUniform, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = discretize_labels(&warped, k, ImbalanceMode::QuantileUniform, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn vanishing_noise_recovers_the_single_consistent_hypothesis() {
    let hyps = vec![vec![0, 0, 1, 1], vec![0, 1, 1, 0], vec![1, 1, 0, 0]];
    let data = [Observation { point: 0, label: 0 }, Observation { point: 1, label: 1 }];
    for eps in [1e-3, 1e-6, 1e-9] {
        let prior = DiscreteHypothesisPrior::new(hyps.clone(), vec![0.2, 0.3, 0.5], 2, eps).unwrap();
        let ppd = exact_ppd(&prior, &data, &[3]).unwrap();
        assert!((ppd[0][0] - 1.0).abs() < 10.0 * eps, "eps {eps}: {ppd:?}");
    }
}

#[test]
fn task_streams_are_reproducible() {
    let config = PriorConfig::default();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| sample_task(&mut rng, &config).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (draw(3), draw(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.y, y.y);
        assert_eq!(x.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
