//! Offline training against a task prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};
use crate::prior::{SyntheticTask, TaskSampler};
use crate::scalar::Scalar;

use super::model::{bind, forward, label_tokens, pad_features, Dropout};
use super::{Params, PfnConfig, PfnWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub steps: usize,
    /// Tasks per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Linear warm-up length as a fraction of `steps`; cosine decay to 10% follows.
    pub warmup_fraction: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { steps: 2000, batch: 8, lr: 1e-3, seed: 0, warmup_fraction: 0.05, clip_norm: 1.0 }
    }
}

impl TrainOptions {
    fn lr_at(&self, step: usize) -> f64 {
        let warm = ((self.steps as f64) * self.warmup_fraction).ceil().max(1.0);
        let s = step as f64 + 1.0;
        if s <= warm {
            return self.lr * s / warm;
        }
        let progress = (s - warm) / (self.steps as f64 - warm).max(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
        self.lr * (0.1 + 0.9 * cosine)
    }
}

/// Result of [`train_offline`]: the weights and the mean batch loss per step.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub weights: PfnWeights<T>,
    pub loss_trace: Vec<f64>,
}

/// Cross-entropy of the query rows of one task, with gradients accumulated
/// into `grads`. Returns `None` when no query label occurs in the context.
fn task_loss<T: Scalar>(
    weights: &PfnWeights<T>,
    task: &SyntheticTask,
    dropout: Option<Dropout<'_>>,
    grads: Option<&mut [Tensor<T>]>,
) -> Result<Option<f64>> {
    let config = &weights.config;
    let n_classes = task.context_classes();
    let targets: Vec<Option<usize>> = task.y.iter().enumerate().map(|(i, &c)| (i >= task.cut && c < n_classes).then_some(c)).collect();
    if targets.iter().all(Option::is_none) {
        return Ok(None);
    }
    let x = pad_features::<T>(config, &task.x)?;
    let tokens = label_tokens(config, &task.y[..task.cut], task.n_rows())?;
    let mut g = Graph::new();
    let p = bind(&mut g, &weights.params);
    let logits = forward(&mut g, config, &p, x, tokens, task.cut, dropout)?;
    let loss = g.cross_entropy(logits, targets, n_classes)?;
    let value = g.value(loss).data()[0].f64();
    if let Some(acc) = grads {
        let mut back = g.backward(loss)?;
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            if let Some(gr) = back.take(*v) {
                a.add_assign(&gr)?;
            }
        }
    }
    Ok(Some(value))
}

/// Query cross-entropy of one task and its gradient with respect to every
/// parameter, or `None` when no query label occurs in the context.
pub fn loss_and_gradients<T: Scalar>(weights: &PfnWeights<T>, task: &SyntheticTask) -> Result<Option<(f64, Params<Tensor<T>>)>> {
    let mut grads: Vec<Tensor<T>> = weights.params.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let Some(loss) = task_loss(weights, task, None, Some(&mut grads))? else {
        return Ok(None);
    };
    let params = Params::from_values(weights.config.n_layers, grads).expect("one gradient per parameter");
    Ok(Some((loss, params)))
}

/// Mean query cross-entropy of `weights` on `tasks` (no gradient).
pub fn evaluate_loss<T: Scalar>(weights: &PfnWeights<T>, tasks: &[SyntheticTask]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in tasks {
        if let Some(l) = task_loss(weights, t, None, None)? {
            total += l;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Fits the transformer so that its query-position outputs approximate the
/// posterior predictive of the prior behind `sampler`. Deterministic in
/// `opts.seed`. `on_step` sees every `(step, mean batch loss)`.
pub fn train_offline<T: Scalar>(
    sampler: &dyn TaskSampler,
    config: &PfnConfig,
    opts: &TrainOptions,
    mut on_step: impl FnMut(usize, f64, &PfnWeights<T>),
) -> Result<TrainOutcome<T>> {
    if opts.steps == 0 {
        return Err(Error::InvalidInput("training needs at least one step".into()));
    }
    if opts.batch == 0 || !(opts.lr > 0.0) {
        return Err(Error::InvalidInput("batch must be positive and lr > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights = PfnWeights::<T>::init(config, &mut rng)?;
    let adam = AdamConfig { lr: opts.lr, ..AdamConfig::default() };
    let mut tensors: Vec<Tensor<T>> = weights.params.iter().cloned().collect();
    let mut state = AdamState::new(&tensors, adam);
    let mut trace = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let mut grads: Vec<Tensor<T>> = tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut total = 0.0;
        let mut used = 0usize;
        for _ in 0..opts.batch {
            let task = sampler.sample(&mut rng)?;
            let dropout = (config.dropout > 0.0).then_some(Dropout { rng: &mut rng, rate: config.dropout });
            if let Some(l) = task_loss(&weights, &task, dropout, Some(&mut grads))? {
                total += l;
                used += 1;
            }
        }
        let loss = if used == 0 { 0.0 } else { total / used as f64 };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if used > 0 {
            let inv = 1.0 / used as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(T::of(inv)));
            if opts.clip_norm > 0.0 {
                let norm = grads.iter().flat_map(|g| g.data()).map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::Divergence { step, loss: norm });
                }
                if norm > opts.clip_norm {
                    let s = opts.clip_norm / norm;
                    grads.iter_mut().for_each(|g| g.scale_assign(T::of(s)));
                }
            }
            state.step_with_lr(&mut tensors, &grads, opts.lr_at(step))?;
            weights.params = super::model::Params::from_values(config.n_layers, tensors.iter().cloned()).expect("layout");
        }
        trace.push(loss);
        on_step(step, loss, &weights);
    }
    Ok(TrainOutcome { weights, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorConfig;

    fn tiny() -> PfnConfig {
        PfnConfig { n_layers: 1, emb_dim: 8, n_heads: 2, ff_dim: 8, max_features: 4, max_classes: 3, dropout: 0.0 }
    }

    fn tiny_prior() -> PriorConfig {
        PriorConfig { n_samples: [6, 12], n_features: [1, 4], n_classes_max: 3, ..Default::default() }
    }

    #[test]
    fn zero_steps_is_rejected() {
        let opts = TrainOptions { steps: 0, ..Default::default() };
        assert!(matches!(train_offline::<f64>(&tiny_prior(), &tiny(), &opts, |_, _, _| {}), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn loss_trace_is_finite_and_deterministic() {
        let opts = TrainOptions { steps: 5, batch: 2, seed: 3, ..Default::default() };
        let a = train_offline::<f64>(&tiny_prior(), &tiny(), &opts, |_, _, _| {}).unwrap();
        let b = train_offline::<f64>(&tiny_prior(), &tiny(), &opts, |_, _, _| {}).unwrap();
        assert_eq!(a.loss_trace.len(), 5);
        assert!(a.loss_trace.iter().all(|l| l.is_finite()));
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let opts = TrainOptions { steps: 100, lr: 1.0, warmup_fraction: 0.1, ..Default::default() };
        assert!(opts.lr_at(0) < opts.lr_at(9));
        assert!((opts.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((opts.lr_at(99) - 0.1).abs() < 1e-12);
    }
}
