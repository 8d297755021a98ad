//! Parameters and forward pass of the PFN transformer.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, Graph, Tensor, Var};
use crate::scalar::Scalar;

use super::PfnConfig;

/// One pre-norm transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<V> {
    pub ln1_gain: V,
    pub ln1_bias: V,
    pub wq: V,
    pub wk: V,
    pub wv: V,
    pub wo: V,
    pub ln2_gain: V,
    pub ln2_bias: V,
    pub ff_w1: V,
    pub ff_b1: V,
    pub ff_w2: V,
    pub ff_b2: V,
}

const BLOCK_FIELDS: [&str; 12] =
    ["ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2"];

impl<V> Block<V> {
    fn fields(&self) -> [&V; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff_w1,
            &self.ff_b1,
            &self.ff_w2,
            &self.ff_b2,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = V>) -> Option<Self> {
        Some(Self {
            ln1_gain: it.next()?,
            ln1_bias: it.next()?,
            wq: it.next()?,
            wk: it.next()?,
            wv: it.next()?,
            wo: it.next()?,
            ln2_gain: it.next()?,
            ln2_bias: it.next()?,
            ff_w1: it.next()?,
            ff_b1: it.next()?,
            ff_w2: it.next()?,
            ff_b2: it.next()?,
        })
    }
}

/// Every learned quantity of the network, generic over what is stored per
/// parameter (tensors, graph variables, names, shapes).
#[derive(Clone, Debug, PartialEq)]
pub struct Params<V> {
    pub feature_w: V,
    pub feature_b: V,
    pub label_embed: V,
    pub blocks: Vec<Block<V>>,
    pub final_gain: V,
    pub final_bias: V,
    pub head_w: V,
    pub head_b: V,
}

impl<V> Params<V> {
    /// Parameters in their canonical (serialization) order.
    pub fn iter(&self) -> impl Iterator<Item = &V> {
        [&self.feature_w, &self.feature_b, &self.label_embed].into_iter().chain(self.blocks.iter().flat_map(|b| b.fields())).chain([
            &self.final_gain,
            &self.final_bias,
            &self.head_w,
            &self.head_b,
        ])
    }

    pub fn len(&self) -> usize {
        7 + 12 * self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rebuilds from values in canonical order; `None` if the count is wrong.
    pub fn from_values(n_layers: usize, values: impl IntoIterator<Item = V>) -> Option<Self> {
        let mut it = values.into_iter();
        let feature_w = it.next()?;
        let feature_b = it.next()?;
        let label_embed = it.next()?;
        let blocks = (0..n_layers).map(|_| Block::from_iter(&mut it)).collect::<Option<Vec<_>>>()?;
        let p = Self {
            feature_w,
            feature_b,
            label_embed,
            blocks,
            final_gain: it.next()?,
            final_bias: it.next()?,
            head_w: it.next()?,
            head_b: it.next()?,
        };
        it.next().is_none().then_some(p)
    }

    pub fn map<U>(&self, f: impl FnMut(&V) -> U) -> Params<U> {
        Params::from_values(self.blocks.len(), self.iter().map(f).collect::<Vec<_>>()).expect("same layout")
    }
}

/// Canonical parameter names, in serialization order.
pub fn param_names(n_layers: usize) -> Params<String> {
    let top = ["feature_proj.weight", "feature_proj.bias", "label_embed"].map(String::from);
    let blocks = (0..n_layers).flat_map(|l| BLOCK_FIELDS.iter().map(move |f| format!("layers.{l}.{f}")));
    let tail = ["final_norm.gain", "final_norm.bias", "head.weight", "head.bias"].map(String::from);
    Params::from_values(n_layers, top.into_iter().chain(blocks).chain(tail)).expect("layout")
}

/// Expected tensor shapes for a configuration.
pub fn param_shapes(c: &PfnConfig) -> Params<Vec<usize>> {
    let (e, f) = (c.emb_dim, c.ff_dim);
    let block = Block {
        ln1_gain: vec![e],
        ln1_bias: vec![e],
        wq: vec![e, e],
        wk: vec![e, e],
        wv: vec![e, e],
        wo: vec![e, e],
        ln2_gain: vec![e],
        ln2_bias: vec![e],
        ff_w1: vec![e, f],
        ff_b1: vec![f],
        ff_w2: vec![f, e],
        ff_b2: vec![e],
    };
    Params {
        feature_w: vec![c.max_features, e],
        feature_b: vec![e],
        label_embed: vec![c.max_classes + 1, e],
        blocks: vec![block; c.n_layers],
        final_gain: vec![e],
        final_bias: vec![e],
        head_w: vec![e, c.max_classes],
        head_b: vec![c.max_classes],
    }
}

/// Trained (or freshly initialized) network.
#[derive(Clone, Debug, PartialEq)]
pub struct PfnWeights<T> {
    pub config: PfnConfig,
    pub params: Params<Tensor<T>>,
}

impl<T: Scalar> PfnWeights<T> {
    /// Gaussian initialization scaled by fan-in; residual output projections
    /// are further shrunk by `1/sqrt(2 * n_layers)`. Norm gains start at one.
    pub fn init<R: Rng + ?Sized>(config: &PfnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(config);
        let names = param_names(config.n_layers);
        let residual = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let tensors: Vec<Tensor<T>> = shapes
            .iter()
            .zip(names.iter())
            .map(|(shape, name)| {
                if name.ends_with(".gain") {
                    return Tensor::ones(shape);
                }
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let mut std = 1.0 / (shape[0] as f64).sqrt();
                if name.ends_with("attn.wo") || name.ends_with("ff.w2") {
                    std *= residual;
                }
                if name == "label_embed" {
                    std = 1.0;
                }
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        T::of(std * z)
                    })
                    .collect();
                Tensor::new(shape.clone(), data).expect("shape")
            })
            .collect();
        let params = Params::from_values(config.n_layers, tensors).expect("layout");
        Ok(Self { config: config.clone(), params })
    }

    pub fn from_params(config: PfnConfig, params: Params<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if params.blocks.len() != config.n_layers {
            return Err(Error::Format(format!("{} layers stored for a {}-layer config", params.blocks.len(), config.n_layers)));
        }
        for ((t, want), name) in params.iter().zip(shapes.iter()).zip(param_names(config.n_layers).iter()) {
            if t.shape() != want.as_slice() {
                return Err(Error::Format(format!("{name} has shape {:?}, config implies {want:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::Format(format!("{name} contains non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> PfnWeights<U> {
        PfnWeights { config: self.config.clone(), params: self.params.map(Tensor::cast) }
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }
}

/// Zero-pads feature rows to `max_features` columns and multiplies them by
/// `max_features / f_used`, where `f_used` counts columns that are not
/// identically zero. All-zero columns carry no information, so a task and the
/// same task with extra zero columns encode identically.
pub fn pad_features<T: Scalar>(config: &PfnConfig, x: &Tensor<f64>) -> Result<Tensor<T>> {
    let (n, f) = x.dims2()?;
    if f > config.max_features {
        return Err(Error::Capacity(format!("{f} features exceed the model's {} feature slots", config.max_features)));
    }
    let used = (0..f).filter(|&j| (0..n).any(|i| x.at(i, j) != 0.0)).count();
    let scale = if used == 0 { 1.0 } else { config.max_features as f64 / used as f64 };
    let m = config.max_features;
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            out[i * m + j] = T::of(v * scale);
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Label-embedding rows: class index for context rows, the query token after.
pub fn label_tokens(config: &PfnConfig, context_labels: &[usize], n_rows: usize) -> Result<Vec<usize>> {
    if let Some(&c) = context_labels.iter().find(|&&c| c >= config.max_classes) {
        return Err(Error::Capacity(format!("class index {c} exceeds the model's {} classes", config.max_classes)));
    }
    let mut tokens = context_labels.to_vec();
    tokens.resize(n_rows, config.query_token());
    Ok(tokens)
}

/// Training-time dropout: the RNG and the drop probability.
pub(crate) struct Dropout<'a> {
    pub rng: &'a mut dyn rand::RngCore,
    pub rate: f64,
}

impl Dropout<'_> {
    fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.value(x).shape().to_vec();
        let mask: Vec<T> =
            (0..g.value(x).numel()).map(|_| if self.rng.random_bool(keep) { T::of(1.0 / keep) } else { T::zero() }).collect();
        let m = g.input(Tensor::new(shape, mask)?);
        g.mul(x, m)
    }
}

/// Token embeddings: projected features plus label embeddings.
pub(crate) fn embed<T: Scalar>(g: &mut Graph<T>, p: &Params<Var>, x: Tensor<T>, tokens: Vec<usize>) -> Result<Var> {
    let xv = g.input(x);
    let proj = g.matmul(xv, p.feature_w)?;
    let proj = g.add_row(proj, p.feature_b)?;
    let labels = g.gather(p.label_embed, tokens)?;
    g.add(proj, labels)
}

/// Runs the transformer over `n` tokens whose first `n_ctx` rows are the
/// labelled context. Returns logits of shape `[n, max_classes]`.
pub(crate) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    config: &PfnConfig,
    p: &Params<Var>,
    x: Tensor<T>,
    tokens: Vec<usize>,
    n_ctx: usize,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let mask = Arc::new(AttentionMask::Context { n_ctx });
    let mut h = embed(g, p, x, tokens)?;
    for b in &p.blocks {
        let a = g.layer_norm(h, b.ln1_gain, b.ln1_bias)?;
        let q = g.matmul(a, b.wq)?;
        let k = g.matmul(a, b.wk)?;
        let v = g.matmul(a, b.wv)?;
        let att = g.attention(q, k, v, Arc::clone(&mask), config.n_heads)?;
        let mut o = g.matmul(att, b.wo)?;
        if let Some(d) = dropout.as_mut() {
            o = d.apply(g, o)?;
        }
        h = g.add(h, o)?;

        let a = g.layer_norm(h, b.ln2_gain, b.ln2_bias)?;
        let f = g.matmul(a, b.ff_w1)?;
        let f = g.add_row(f, b.ff_b1)?;
        let f = g.gelu(f);
        let f = g.matmul(f, b.ff_w2)?;
        let mut f = g.add_row(f, b.ff_b2)?;
        if let Some(d) = dropout.as_mut() {
            f = d.apply(g, f)?;
        }
        h = g.add(h, f)?;
    }
    let h = g.layer_norm(h, p.final_gain, p.final_bias)?;
    let logits = g.matmul(h, p.head_w)?;
    g.add_row(logits, p.head_b)
}

/// Registers every parameter tensor on the graph.
pub(crate) fn bind<T: Scalar>(g: &mut Graph<T>, params: &Params<Tensor<T>>) -> Params<Var> {
    params.map(|t| g.input(t.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_and_shapes_line_up() {
        let cfg = PfnConfig { n_layers: 2, ..Default::default() };
        let names: Vec<_> = param_names(2).iter().cloned().collect();
        assert_eq!(names.len(), param_shapes(&cfg).len());
        assert_eq!(names[3], "layers.0.ln1.gain");
        assert_eq!(names.last().unwrap(), "head.bias");
        let w = PfnWeights::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(PfnWeights::from_params(cfg, w.params.clone()).is_ok());
    }

    #[test]
    fn padding_scales_by_used_columns() {
        let cfg = PfnConfig { max_features: 4, ..Default::default() };
        let x = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 2.0, 0.0]).unwrap();
        let p: Tensor<f64> = pad_features(&cfg, &x).unwrap();
        assert_eq!(p.data(), &[4.0, 0.0, 0.0, 0.0, 8.0, 0.0, 0.0, 0.0]);
        let wide = Tensor::from_f64(&[1, 5], &[0.0; 5]).unwrap();
        assert!(matches!(pad_features::<f64>(&cfg, &wide), Err(Error::Capacity(_))));
    }
}
