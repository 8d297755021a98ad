//! Single-forward-pass posterior predictive inference.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{AttentionMask, Graph, Tensor};
use crate::scalar::Scalar;

use super::model::{bind, embed, forward, label_tokens, pad_features};
use super::PfnWeights;

/// Approximate posterior predictive: one probability row per query, columns
/// ordered as `class_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ppd {
    pub probs: Tensor<f64>,
    pub class_ids: Vec<usize>,
}

impl Ppd {
    pub fn n_rows(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// Probability of `class` for every query row; zero if the class was
    /// absent from the context.
    pub fn class_probability(&self, class: usize) -> Vec<f64> {
        match self.class_ids.iter().position(|&c| c == class) {
            Some(j) => (0..self.n_rows()).map(|i| self.probs.at(i, j)).collect(),
            None => vec![0.0; self.n_rows()],
        }
    }

    /// Most probable class per row (lowest class id on ties).
    pub fn predicted(&self) -> Vec<usize> {
        (0..self.n_rows())
            .map(|i| {
                let row = self.row(i);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                self.class_ids[best]
            })
            .collect()
    }
}

pub(crate) fn stack_rows(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, f) = a.dims2()?;
    let (m, f2) = b.dims2()?;
    if f != f2 {
        return dim_err(format!("context has {f} features but queries have {f2}"));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![n + m, f], data)
}

fn check_context(x_train: &Tensor<f64>, y_train: &[usize]) -> Result<()> {
    if y_train.is_empty() {
        return Err(Error::InvalidInput("inference needs a nonempty training context".into()));
    }
    let (n, _) = x_train.dims2()?;
    if n != y_train.len() {
        return dim_err(format!("{n} context rows but {} labels", y_train.len()));
    }
    Ok(())
}

/// Token matrix and attention mask for `<D_train, x_test>`. `class_index`
/// holds each context row's class position (already mapped to `0..K`).
pub fn encode<T: Scalar>(
    weights: &PfnWeights<T>,
    x_train: &Tensor<f64>,
    class_index: &[usize],
    x_test: &Tensor<f64>,
) -> Result<(Tensor<T>, AttentionMask)> {
    check_context(x_train, class_index)?;
    let x = stack_rows(x_train, x_test)?;
    let n = x.shape()[0];
    let padded = pad_features::<T>(&weights.config, &x)?;
    let tokens = label_tokens(&weights.config, class_index, n)?;
    let mut g = Graph::new();
    let p = bind(&mut g, &weights.params);
    let h = embed(&mut g, &p, padded, tokens)?;
    Ok((g.value(h).clone(), AttentionMask::Context { n_ctx: class_index.len() }))
}

/// PPD of every `x_test` row given the labelled context, in one forward pass.
/// Output classes are those present in `y_train`, in ascending order.
pub fn infer<T: Scalar>(weights: &PfnWeights<T>, x_train: &Tensor<f64>, y_train: &[usize], x_test: &Tensor<f64>) -> Result<Ppd> {
    infer_rotated(weights, x_train, y_train, x_test, 0)
}

/// As [`infer`], but class `c` is presented to the network as
/// `(c + rotation) mod K`; the output is mapped back.
pub(crate) fn infer_rotated<T: Scalar>(
    weights: &PfnWeights<T>,
    x_train: &Tensor<f64>,
    y_train: &[usize],
    x_test: &Tensor<f64>,
    rotation: usize,
) -> Result<Ppd> {
    check_context(x_train, y_train)?;
    let config = &weights.config;
    let mut class_ids = y_train.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let k = class_ids.len();
    if k > config.max_classes {
        return Err(Error::Capacity(format!("{k} classes exceed the model's {}", config.max_classes)));
    }
    let shown = |pos: usize| (pos + rotation) % k;
    let index: Vec<usize> = y_train.iter().map(|c| shown(class_ids.binary_search(c).expect("class present"))).collect();

    let x = stack_rows(x_train, x_test)?;
    let (n, n_ctx) = (x.shape()[0], y_train.len());
    let padded = pad_features::<T>(config, &x)?;
    let tokens = label_tokens(config, &index, n)?;
    let mut g = Graph::new();
    let p = bind(&mut g, &weights.params);
    let logits = forward(&mut g, config, &p, padded, tokens, n_ctx, None)?;
    let logits = g.value(logits);

    let mut probs = Vec::with_capacity((n - n_ctx) * k);
    for i in n_ctx..n {
        let z: Vec<f64> = (0..k).map(|c| logits.at(i, shown(c)).f64()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        probs.extend(e.iter().map(|v| v / total));
    }
    Ok(Ppd { probs: Tensor::new(vec![n - n_ctx, k], probs)?, class_ids })
}
