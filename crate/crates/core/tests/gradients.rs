use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vinecast::numerics::{AttentionMask, Graph, Tensor, Var};
use vinecast::pfn::{evaluate_loss, loss_and_gradients, PfnConfig, PfnWeights};
use vinecast::prior::{sample_task, PriorConfig};
use vinecast::Result;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-5;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Scalar `sum(op(inputs) * r)` for a fixed random `r`.
fn projected(build: &Build, inputs: &[Tensor<f64>], r: &Tensor<f64>) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let rv = g.input(r.clone());
    let prod = g.mul(out, rv).unwrap();
    let loss = g.sum(prod);
    (g, vars, loss)
}

/// Compares every analytic input gradient with a central difference.
fn check(name: &str, build: &Build, inputs: Vec<Tensor<f64>>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).shape().to_vec()
    };
    let r = random(&mut rng, &shape);
    let (g, vars, loss) = projected(build, &inputs, &r);
    let grads = g.backward(loss).unwrap();
    let eval = |inputs: &[Tensor<f64>]| {
        let (g, _, loss) = projected(build, inputs, &r);
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let Some(analytic) = grads.get(*v) else { continue };
        for idx in 0..inputs[k].data().len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[idx], numeric));
        }
    }
    assert!(worst < TOLERANCE, "{name}: worst relative error {worst:e}");
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 5]);
    let c = random(&mut rng, &[3, 4]);
    let v4 = random(&mut rng, &[4]);
    let v4b = random(&mut rng, &[4]);
    check("matmul", &|g, v| g.matmul(v[0], v[1]), vec![a.clone(), b.clone()], 2);
    check("add", &|g, v| g.add(v[0], v[1]), vec![a.clone(), c.clone()], 3);
    check("add_row", &|g, v| g.add_row(v[0], v[1]), vec![a.clone(), v4.clone()], 4);
    check("mul", &|g, v| g.mul(v[0], v[1]), vec![a.clone(), c.clone()], 5);
    check("scale", &|g, v| Ok(g.scale(v[0], -1.7)), vec![a.clone()], 6);
    check("gelu", &|g, v| Ok(g.gelu(v[0])), vec![a.clone()], 7);
    check("softmax", &|g, v| g.softmax(v[0]), vec![a.clone()], 8);
    check("layer_norm", &|g, v| g.layer_norm(v[0], v[1], v[2]), vec![a.clone(), v4.clone(), v4b.clone()], 9);
    check("gather", &|g, v| g.gather(v[0], vec![2, 0, 2, 1]), vec![a.clone()], 10);
    check("reshape", &|g, v| g.reshape(v[0], &[2, 6]), vec![a.clone()], 11);
    check("sum", &|g, v| Ok(g.sum(v[0])), vec![a.clone()], 12);
    check("mean", &|g, v| Ok(g.mean(v[0])), vec![a.clone()], 13);
    check("cross_entropy", &|g, v| g.cross_entropy(v[0], vec![Some(1), None, Some(0)], 3), vec![a.clone()], 14);
    let (q, k, w) = (random(&mut rng, &[5, 4]), random(&mut rng, &[5, 4]), random(&mut rng, &[5, 4]));
    let dense: Vec<Vec<bool>> = (0..5).map(|i| (0..5).map(|j| j <= i || rng.random_bool(0.3)).collect()).collect();
    let masks = [AttentionMask::Full, AttentionMask::Context { n_ctx: 3 }, AttentionMask::dense(&dense).unwrap()];
    for (m, mask) in masks.into_iter().enumerate() {
        let mask = Arc::new(mask);
        for heads in [1, 2] {
            let mask = Arc::clone(&mask);
            check(
                &format!("attention mask {m} heads {heads}"),
                &move |g, v| g.attention(v[0], v[1], v[2], Arc::clone(&mask), heads),
                vec![q.clone(), k.clone(), w.clone()],
                20 + m as u64,
            );
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let mut x = random(&mut rng, &[4, 7]);
        x.data_mut().iter_mut().for_each(|v| *v *= 30.0);
        let mut g = Graph::new();
        let xv = g.input(x);
        let s = g.softmax(xv).unwrap();
        for i in 0..4 {
            let row = g.value(s).row(i);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

/// Every parameter of a one-layer network against central differences of the
/// query cross-entropy.
#[test]
fn one_layer_network_gradients_match_finite_differences() {
    let config = PfnConfig { n_layers: 1, emb_dim: 8, n_heads: 2, ff_dim: 16, max_features: 4, max_classes: 3, dropout: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = PfnWeights::<f64>::init(&config, &mut rng).unwrap();
    let prior = PriorConfig { n_samples: [10, 14], n_features: [2, 4], n_classes_max: 3, ..PriorConfig::default() };
    let task = loop {
        let t = sample_task(&mut rng, &prior).unwrap();
        if loss_and_gradients(&weights, &t).unwrap().is_some() {
            break t;
        }
    };
    let (_, grads) = loss_and_gradients(&weights, &task).unwrap().unwrap();
    let tasks = [task];
    let mut worst = 0.0f64;
    for (p, (param, grad)) in weights.params.iter().zip(grads.iter()).enumerate() {
        for idx in 0..param.data().len() {
            let shifted = |delta: f64| {
                let mut w = weights.clone();
                let mut all: Vec<Tensor<f64>> = w.params.iter().cloned().collect();
                all[p].data_mut()[idx] += delta;
                w.params = vinecast::pfn::Params::from_values(1, all).unwrap();
                evaluate_loss(&w, &tasks).unwrap()
            };
            let numeric = (shifted(STEP) - shifted(-STEP)) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.data()[idx], numeric));
        }
    }
    assert!(worst < TOLERANCE, "worst relative error {worst:e}");
}
