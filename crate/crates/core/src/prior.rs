//! Synthetic task priors.
//!
//! Two priors live here. The random-MLP prior produces the open-ended stream
//! of classification tasks the PFN is trained on. The discrete hypothesis
//! prior is small enough to enumerate, so its posterior predictive can be
//! computed exactly and used as ground truth for the trained network.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Number of resamples before a degenerate (single-class) task is an error.
pub const MAX_TASK_RETRIES: usize = 16;

/// Placement of class boundaries along the sorted scalar targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalanceMode {
    /// Boundaries at the equal-mass quantiles `k / K`.
    QuantileUniform,
    /// Each equal-mass quantile level is shifted by up to one class width,
    /// producing imbalanced class proportions.
    RandomOffset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Random tanh MLP with Gaussian weights.
    RandomMlp,
    /// `yhat = x_0`; used to check discretization in isolation.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Inclusive range of hidden-layer counts.
    pub depth: [usize; 2],
    /// Inclusive range of hidden-layer widths.
    pub width: [usize; 2],
    pub weight_scale: f64,
    /// Probability that a feature is drawn from a standard normal rather than
    /// a unit-variance uniform.
    pub gaussian_fraction: f64,
    /// Upper end of the per-task output noise scale, relative to the spread
    /// of the noiseless outputs. Each task draws its scale log-uniformly from
    /// `[noise_std / 100, noise_std]`; zero gives noiseless tasks.
    pub noise_std: f64,
    /// Range of the fraction of features each sampled function depends on.
    pub relevant_fraction: [f64; 2],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::RandomMlp,
            depth: [1, 3],
            width: [4, 16],
            weight_scale: 1.0,
            gaussian_fraction: 0.5,
            noise_std: 1.0,
            relevant_fraction: [0.3, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub n_samples: [usize; 2],
    pub n_features: [usize; 2],
    pub n_classes_max: usize,
    pub generator: GeneratorConfig,
    pub imbalance: ImbalanceMode,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            n_samples: [32, 160],
            n_features: [1, 30],
            n_classes_max: 10,
            generator: GeneratorConfig::default(),
            imbalance: ImbalanceMode::RandomOffset,
        }
    }
}

fn check_range(name: &str, [lo, hi]: [usize; 2], min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::InvalidInput(format!("{name} range [{lo}, {hi}] must satisfy {min} <= min <= max")));
    }
    Ok(())
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("n_samples", self.n_samples, 2)?;
        check_range("n_features", self.n_features, 1)?;
        check_range("generator.depth", self.generator.depth, 0)?;
        check_range("generator.width", self.generator.width, 1)?;
        if self.n_classes_max < 2 {
            return Err(Error::InvalidInput("n_classes_max must be at least 2".into()));
        }
        let g = &self.generator;
        if !(g.noise_std >= 0.0) || !(g.weight_scale >= 0.0) || !(0.0..=1.0).contains(&g.gaussian_fraction) {
            return Err(Error::InvalidInput("generator noise, scale and gaussian fraction out of range".into()));
        }
        let [lo, hi] = g.relevant_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidInput(format!("relevant_fraction [{lo}, {hi}] must satisfy 0 < min <= max <= 1")));
        }
        Ok(())
    }
}

/// One sampled supervised task. Rows `..cut` form the training context, the
/// remaining rows are queries.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub x: Tensor<f64>,
    pub y: Vec<usize>,
    pub cut: usize,
    pub raw_yhat: Vec<f64>,
}

impl SyntheticTask {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Number of classes present in the context, given labels numbered by
    /// first occurrence.
    pub fn context_classes(&self) -> usize {
        self.y[..self.cut].iter().max().map_or(0, |m| m + 1)
    }
}

/// Source of training tasks for the PFN.
pub trait TaskSampler {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Result<SyntheticTask>;
}

impl TaskSampler for PriorConfig {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Result<SyntheticTask> {
        sample_task(rng, self)
    }
}

struct RandomMlp {
    layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

impl RandomMlp {
    fn sample<R: Rng + ?Sized>(rng: &mut R, n_in: usize, g: &GeneratorConfig) -> Self {
        let depth = rng.random_range(g.depth[0]..=g.depth[1]);
        let fraction = rng.random_range(g.relevant_fraction[0]..=g.relevant_fraction[1]);
        let n_relevant = ((fraction * n_in as f64).round() as usize).clamp(1, n_in);
        let mut relevant = vec![false; n_in];
        rand::seq::index::sample(rng, n_in, n_relevant).into_iter().for_each(|j| relevant[j] = true);
        let mut widths = vec![n_in];
        widths.extend((0..depth).map(|_| rng.random_range(g.width[0]..=g.width[1])));
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (i, o) = (w[0], w[1]);
                let fan_in = if l == 0 { n_relevant } else { i };
                let std = g.weight_scale / (fan_in as f64).sqrt();
                let weights = (0..i * o).map(|idx| if l == 0 && !relevant[idx / o] { 0.0 } else { std * normal(rng) }).collect();
                let bias = (0..o).map(|_| g.weight_scale * 0.5 * normal(rng)).collect();
                (weights, bias, i, o)
            })
            .collect();
        Self { layers }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b, i, o)) in self.layers.iter().enumerate() {
            let mut next = b.clone();
            for (r, &hv) in h.iter().enumerate().take(*i) {
                for c in 0..*o {
                    next[c] += hv * w[r * o + c];
                }
            }
            if l != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        h[0]
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one task from the random-MLP prior. Labels are renumbered by first
/// occurrence; single-class draws are resampled up to [`MAX_TASK_RETRIES`] times.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, config: &PriorConfig) -> Result<SyntheticTask> {
    config.validate()?;
    for _ in 0..=MAX_TASK_RETRIES {
        let n = rng.random_range(config.n_samples[0]..=config.n_samples[1]);
        let f = rng.random_range(config.n_features[0]..=config.n_features[1]);
        let k = rng.random_range(2..=config.n_classes_max);
        let gaussian: Vec<bool> = (0..f).map(|_| rng.random_bool(config.generator.gaussian_fraction)).collect();
        let mlp = match config.generator.kind {
            GeneratorKind::RandomMlp => Some(RandomMlp::sample(rng, f, &config.generator)),
            GeneratorKind::Identity => None,
        };
        let mut x = Vec::with_capacity(n * f);
        let mut yhat = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> =
                gaussian.iter().map(|&g| if g { normal(rng) } else { rng.random_range(-3f64.sqrt()..3f64.sqrt()) }).collect();
            yhat.push(match &mlp {
                Some(m) => m.eval(&row),
                None => row[0],
            });
            x.extend(row);
        }
        let sigma = config.generator.noise_std;
        if sigma > 0.0 {
            let mean = yhat.iter().sum::<f64>() / n as f64;
            let spread = (yhat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
            let scale = sigma * 100f64.powf(-rng.random::<f64>()) * spread;
            yhat.iter_mut().for_each(|v| *v += scale * normal(rng));
        }
        let Ok(labels) = discretize_labels(&yhat, k, config.imbalance, rng) else { continue };
        let y = renumber_by_first_occurrence(&labels);
        if y.iter().all(|&c| c == 0) {
            continue;
        }
        let lo = ((0.1 * n as f64).ceil() as usize).max(1);
        let hi = ((0.9 * n as f64).floor() as usize).clamp(lo, n - 1);
        let cut = rng.random_range(lo..=hi);
        return Ok(SyntheticTask { x: Tensor::new(vec![n, f], x)?, y, cut, raw_yhat: yhat });
    }
    Err(Error::Numeric(format!("prior produced single-class tasks {} times in a row", MAX_TASK_RETRIES + 1)))
}

pub fn renumber_by_first_occurrence(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

/// Quantile levels in `(0, 1)` at which class boundaries are placed.
fn boundary_levels<R: Rng + ?Sized>(n_classes: usize, mode: ImbalanceMode, rng: &mut R) -> Vec<f64> {
    let width = 1.0 / n_classes as f64;
    let mut levels: Vec<f64> = (1..n_classes)
        .map(|k| {
            let base = k as f64 * width;
            match mode {
                ImbalanceMode::QuantileUniform => base,
                ImbalanceMode::RandomOffset => (base + rng.random_range(-0.96..0.96) * width).clamp(0.01, 0.99),
            }
        })
        .collect();
    levels.sort_by(f64::total_cmp);
    levels
}

/// Splits scalar targets into `n_classes` intervals; label `k` means the value
/// lies above exactly `k` boundaries.
///
/// Boundaries are linearly interpolated empirical quantiles. Because no sample
/// lies strictly between two adjacent order statistics, "above the boundary at
/// position `p`" is decided by comparing against the order statistic at
/// `floor(p)`, which makes the labels a function of ranks only.
pub fn discretize_labels<R: Rng + ?Sized>(yhat: &[f64], n_classes: usize, mode: ImbalanceMode, rng: &mut R) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {n_classes}")));
    }
    if yhat.is_empty() || yhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("targets must be nonempty and finite".into()));
    }
    let mut sorted = yhat.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::InvalidInput("all targets identical; no class boundary exists".into()));
    }
    let last = (sorted.len() - 1) as f64;
    let floors: Vec<f64> = boundary_levels(n_classes, mode, rng).into_iter().map(|level| sorted[(level * last).floor() as usize]).collect();
    Ok(yhat.iter().map(|&v| floors.iter().filter(|&&b| v > b).count()).collect())
}

/// Finite prior over labeling functions of a small input grid, with symmetric
/// label-flip noise as the likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteHypothesisPrior {
    /// `hypotheses[h][i]` is the label hypothesis `h` assigns to grid point `i`.
    pub hypotheses: Vec<Vec<usize>>,
    pub prior_probs: Vec<f64>,
    pub n_classes: usize,
    pub flip_noise: f64,
    /// Context size range used when sampling training tasks.
    pub n_context: [usize; 2],
    pub n_queries: usize,
}

/// One labelled observation on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub point: usize,
    pub label: usize,
}

impl DiscreteHypothesisPrior {
    pub fn new(hypotheses: Vec<Vec<usize>>, prior_probs: Vec<f64>, n_classes: usize, flip_noise: f64) -> Result<Self> {
        let prior = Self { hypotheses, prior_probs, n_classes, flip_noise, n_context: [2, 12], n_queries: 4 };
        prior.validate()?;
        Ok(prior)
    }

    pub fn grid_size(&self) -> usize {
        self.hypotheses.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let g = self.grid_size();
        if self.hypotheses.is_empty() || g == 0 || self.hypotheses.iter().any(|h| h.len() != g) {
            return Err(Error::InvalidInput("hypotheses must be nonempty and share one grid".into()));
        }
        if self.prior_probs.len() != self.hypotheses.len() || self.prior_probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput("one nonnegative prior probability per hypothesis".into()));
        }
        let total: f64 = self.prior_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("prior probabilities sum to {total}, not 1")));
        }
        if self.n_classes < 2 || self.hypotheses.iter().flatten().any(|&c| c >= self.n_classes) {
            return Err(Error::InvalidInput("hypothesis labels must lie in [0, n_classes)".into()));
        }
        if !(0.0..1.0).contains(&self.flip_noise) {
            return Err(Error::InvalidInput("flip noise must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// `p(label | point, h)`.
    pub fn likelihood(&self, h: usize, point: usize, label: usize) -> f64 {
        if self.hypotheses[h][point] == label {
            1.0 - self.flip_noise
        } else {
            self.flip_noise / (self.n_classes - 1) as f64
        }
    }

    /// One-hot encoding of a grid point, the feature row the PFN sees.
    pub fn features(&self, point: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.grid_size()];
        row[point] = 1.0;
        row
    }

    fn noisy_label<R: Rng + ?Sized>(&self, rng: &mut R, h: usize, point: usize) -> usize {
        let truth = self.hypotheses[h][point];
        if rng.random_bool(self.flip_noise) {
            let other = rng.random_range(0..self.n_classes - 1);
            if other >= truth {
                other + 1
            } else {
                other
            }
        } else {
            truth
        }
    }

    /// Samples a task whose context contains every class; labels keep their
    /// meaning (no renumbering) because hypotheses are asymmetric in them.
    pub fn sample_observations<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<Observation>, Vec<Observation>)> {
        let idx: Vec<usize> = (0..self.hypotheses.len()).collect();
        let grid = self.grid_size();
        for _ in 0..=MAX_TASK_RETRIES {
            let h = *idx.choose_weighted(rng, |&i| self.prior_probs[i]).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let n = rng.random_range(self.n_context[0]..=self.n_context[1]);
            let draw = |rng: &mut R| {
                let point = rng.random_range(0..grid);
                Observation { point, label: self.noisy_label(rng, h, point) }
            };
            let context: Vec<Observation> = (0..n).map(|_| draw(rng)).collect();
            let queries: Vec<Observation> = (0..self.n_queries).map(|_| draw(rng)).collect();
            if (0..self.n_classes).all(|c| context.iter().any(|o| o.label == c)) {
                return Ok((context, queries));
            }
        }
        Err(Error::Numeric("could not draw a context containing every class".into()))
    }

    pub fn to_task(&self, context: &[Observation], queries: &[Observation]) -> Result<SyntheticTask> {
        let rows: Vec<&Observation> = context.iter().chain(queries).collect();
        let x: Vec<f64> = rows.iter().flat_map(|o| self.features(o.point)).collect();
        Ok(SyntheticTask {
            x: Tensor::new(vec![rows.len(), self.grid_size()], x)?,
            y: rows.iter().map(|o| o.label).collect(),
            cut: context.len(),
            raw_yhat: rows.iter().map(|o| o.label as f64).collect(),
        })
    }
}

impl TaskSampler for DiscreteHypothesisPrior {
    fn sample(&self, mut rng: &mut dyn rand::RngCore) -> Result<SyntheticTask> {
        let (context, queries) = self.sample_observations(&mut rng)?;
        self.to_task(&context, &queries)
    }
}

/// Exact posterior predictive `p(y | x, D)`: the prior-and-likelihood weighted
/// sum of each hypothesis' (noisy) prediction, normalized over classes.
/// Returns one probability row per test point.
pub fn exact_ppd(prior: &DiscreteHypothesisPrior, d_train: &[Observation], x_test: &[usize]) -> Result<Vec<Vec<f64>>> {
    prior.validate()?;
    let grid = prior.grid_size();
    if let Some(o) = d_train.iter().find(|o| o.point >= grid || o.label >= prior.n_classes) {
        return Err(Error::InvalidInput(format!("observation {o:?} outside the grid or label set")));
    }
    if let Some(p) = x_test.iter().find(|&&p| p >= grid) {
        return Err(Error::InvalidInput(format!("test point {p} outside the grid")));
    }
    // Log-space weights; hypotheses with zero prior or likelihood drop out.
    let log_w: Vec<f64> = (0..prior.hypotheses.len())
        .map(|h| prior.prior_probs[h].ln() + d_train.iter().map(|o| prior.likelihood(h, o.point, o.label).ln()).sum::<f64>())
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numeric("data has zero likelihood under every hypothesis".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    Ok(x_test
        .iter()
        .map(|&point| {
            let mut probs: Vec<f64> =
                (0..prior.n_classes).map(|c| w.iter().enumerate().map(|(h, wh)| wh * prior.likelihood(h, point, c)).sum()).collect();
            let z: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= z);
            probs
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn median_split_of_four_values() {
        let y = discretize_labels(&[1.0, 2.0, 3.0, 4.0], 2, ImbalanceMode::QuantileUniform, &mut rng(0)).unwrap();
        assert_eq!(y, vec![0, 0, 1, 1]);
    }

    #[test]
    fn identical_targets_have_no_boundary() {
        assert!(discretize_labels(&[2.0; 5], 2, ImbalanceMode::QuantileUniform, &mut rng(0)).is_err());
        assert!(discretize_labels(&[1.0, 2.0], 1, ImbalanceMode::QuantileUniform, &mut rng(0)).is_err());
    }

    #[test]
    fn same_seed_same_task() {
        let cfg = PriorConfig::default();
        let a = sample_task(&mut rng(7), &cfg).unwrap();
        let b = sample_task(&mut rng(7), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.cut > 0 && a.cut < a.n_rows());
    }

    #[test]
    fn identity_generator_thresholds_the_feature() {
        let cfg = PriorConfig {
            n_features: [1, 1],
            n_classes_max: 2,
            generator: GeneratorConfig { kind: GeneratorKind::Identity, noise_std: 0.0, ..Default::default() },
            ..Default::default()
        };
        for seed in 0..20 {
            let task = sample_task(&mut rng(seed), &cfg).unwrap();
            let x = task.x.data();
            // Some threshold separates the classes along x.
            let cls_of_min = task.y[(0..x.len()).min_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap()];
            let lo_max = (0..x.len()).filter(|&i| task.y[i] == cls_of_min).map(|i| x[i]).fold(f64::MIN, f64::max);
            let hi_min = (0..x.len()).filter(|&i| task.y[i] != cls_of_min).map(|i| x[i]).fold(f64::MAX, f64::min);
            assert!(lo_max < hi_min, "seed {seed}");
        }
    }

    #[test]
    fn single_hypothesis_returns_its_smoothed_prediction() {
        let prior = DiscreteHypothesisPrior::new(vec![vec![0, 1, 1, 0]], vec![1.0], 2, 0.1).unwrap();
        let obs = [Observation { point: 0, label: 1 }, Observation { point: 1, label: 0 }];
        let ppd = exact_ppd(&prior, &obs, &[0, 1]).unwrap();
        assert!((ppd[0][0] - 0.9).abs() < 1e-15 && (ppd[1][1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn empty_data_gives_prior_marginal() {
        let prior = DiscreteHypothesisPrior::new(vec![vec![0, 0], vec![1, 0]], vec![0.25, 0.75], 2, 0.0).unwrap();
        let ppd = exact_ppd(&prior, &[], &[0, 1]).unwrap();
        assert!((ppd[0][1] - 0.75).abs() < 1e-15);
        assert_eq!(ppd[1], vec![1.0, 0.0]);
    }

    #[test]
    fn impossible_data_is_an_error() {
        let prior = DiscreteHypothesisPrior::new(vec![vec![0, 0]], vec![1.0], 2, 0.0).unwrap();
        assert!(exact_ppd(&prior, &[Observation { point: 0, label: 1 }], &[0]).is_err());
    }
}
