//! Ensembles of preprocessing variants averaged into one PPD.

use crate::error::Result;
use crate::numerics::Tensor;
use crate::preprocess::{build_ensemble_members, fit, transform, FittedStats, PreprocessPlan};
use crate::scalar::Scalar;

use super::infer::infer_rotated;
use super::{PfnWeights, Ppd};

/// PPD of one preprocessing variant.
pub fn member_infer<T: Scalar>(
    weights: &PfnWeights<T>,
    stats: &FittedStats,
    plan: &PreprocessPlan,
    x_train: &Tensor<f64>,
    y_train: &[usize],
    x_test: &Tensor<f64>,
) -> Result<Ppd> {
    let train = transform(x_train, stats, plan)?;
    let test = transform(x_test, stats, plan)?;
    infer_rotated(weights, &train, y_train, &test, plan.label_rotation)
}

/// Mean PPD over `n_members` variants, with statistics already fitted on
/// `x_train`.
pub fn ensemble_infer_fitted<T: Scalar>(
    weights: &PfnWeights<T>,
    stats: &FittedStats,
    x_train: &Tensor<f64>,
    y_train: &[usize],
    x_test: &Tensor<f64>,
    n_members: usize,
) -> Result<Ppd> {
    let (_, f) = x_train.dims2()?;
    let mut classes = y_train.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let plans = build_ensemble_members(f, classes.len().max(1), n_members)?;
    let mut total: Option<Ppd> = None;
    for plan in &plans {
        let ppd = member_infer(weights, stats, plan, x_train, y_train, x_test)?;
        match total.as_mut() {
            None => total = Some(ppd),
            Some(acc) => acc.probs.add_assign(&ppd.probs)?,
        }
    }
    let mut out = total.expect("at least one member");
    out.probs.scale_assign(1.0 / plans.len() as f64);
    Ok(out)
}

/// Fits preprocessing on the raw training rows and averages the PPDs of
/// `n_members` ensemble variants.
pub fn ensemble_infer<T: Scalar>(
    weights: &PfnWeights<T>,
    x_train: &Tensor<f64>,
    y_train: &[usize],
    x_test: &Tensor<f64>,
    n_members: usize,
) -> Result<Ppd> {
    let stats = fit(x_train)?;
    ensemble_infer_fitted(weights, &stats, x_train, y_train, x_test, n_members)
}

/// A PFN conditioned on a fixed labelled context, used as a binary
/// classifier for class 1.
pub struct PfnClassifier<'a, T: Scalar> {
    weights: &'a PfnWeights<T>,
    stats: FittedStats,
    x_ctx: Tensor<f64>,
    y_ctx: Vec<usize>,
    n_members: usize,
}

impl<'a, T: Scalar> PfnClassifier<'a, T> {
    /// Fits preprocessing on `x_train` and keeps it as the context.
    pub fn new(weights: &'a PfnWeights<T>, x_train: Tensor<f64>, y_train: Vec<usize>, n_members: usize) -> Result<Self> {
        let stats = fit(&x_train)?;
        Ok(Self::with_stats(weights, stats, x_train, y_train, n_members))
    }

    /// Uses preprocessing statistics fitted elsewhere, e.g. on the rows
    /// before oversampling.
    pub fn with_stats(weights: &'a PfnWeights<T>, stats: FittedStats, x_ctx: Tensor<f64>, y_ctx: Vec<usize>, n_members: usize) -> Self {
        Self { weights, stats, x_ctx, y_ctx, n_members }
    }

    pub fn stats(&self) -> &FittedStats {
        &self.stats
    }
}

impl<T: Scalar> crate::baselines::BinaryClassifier for PfnClassifier<'_, T> {
    fn n_features(&self) -> usize {
        self.x_ctx.shape()[1]
    }

    fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        let ppd = ensemble_infer_fitted(self.weights, &self.stats, &self.x_ctx, &self.y_ctx, rows, self.n_members)?;
        Ok(ppd.class_probability(1))
    }
}
