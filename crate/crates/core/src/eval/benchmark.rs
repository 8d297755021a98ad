//! Repeated-split benchmark of the PFN against the baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{take_rows, TabularDataset};
use super::metrics::{mean_std, metrics, roc_auc, threshold, Metrics, Roc};
use super::split::{balance_training, stratified_split, SplitSpec};
use crate::baselines::{fit_gbdt, fit_logistic, ClassWeights, GbdtParams, LogisticParams};
use crate::error::{Error, Result};
use crate::explain::{mean_abs_shap, select_top_k};
use crate::numerics::Tensor;
use crate::pfn::{ensemble_infer_fitted, PfnWeights};
use crate::preprocess::{fit, transform, PreprocessPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    Imbalance,
    Balanced,
}

impl TargetMode {
    pub const ALL: [TargetMode; 2] = [TargetMode::Imbalance, TargetMode::Balanced];

    pub fn name(self) -> &'static str {
        match self {
            Self::Imbalance => "imbalance",
            Self::Balanced => "balanced",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// PFN averaged over this many preprocessing variants; balanced by
    /// oversampling the context.
    Pfn { ensembles: usize },
    /// Boosted trees balanced with inverse-frequency class weights.
    GbdtWeighted,
    /// Boosted trees balanced by oversampling.
    GbdtUnweighted,
    /// Logistic regression on preprocessed features, balanced with class weights.
    Logistic,
}

impl ModelSpec {
    /// The five models of the standard comparison.
    pub fn standard() -> Vec<ModelSpec> {
        vec![
            ModelSpec::Pfn { ensembles: 1 },
            ModelSpec::Pfn { ensembles: 32 },
            ModelSpec::GbdtWeighted,
            ModelSpec::GbdtUnweighted,
            ModelSpec::Logistic,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pfn { .. } => "pfn",
            Self::GbdtWeighted => "gbdt-weighted",
            Self::GbdtUnweighted => "gbdt-unweighted",
            Self::Logistic => "logistic",
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Pfn { ensembles } => format!("pfn-{ensembles}"),
            other => other.name().to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_seeds: u64,
    pub train_fraction: f64,
    /// Keep only the `top_k` features ranked by mean |SHAP| of a boosted
    /// model fitted on the seed-0 training split.
    pub top_k: Option<usize>,
    /// Whether the ranking model uses balanced class weights.
    pub shap_mode: TargetMode,
    /// Split seed whose ROC curves are reported.
    pub roc_seed: u64,
    pub gbdt: GbdtParams,
    pub logistic: LogisticParams,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_seeds: 40,
            train_fraction: 0.76,
            top_k: Some(25),
            shap_mode: TargetMode::Imbalance,
            roc_seed: 0,
            gbdt: GbdtParams::default(),
            logistic: LogisticParams::default(),
        }
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub params: String,
    pub target_mode: TargetMode,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub balanced_accuracy_mean: f64,
    pub balanced_accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub n_seeds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub model: String,
    pub target_mode: TargetMode,
    pub seed: u64,
    pub roc: Roc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub roc: Vec<RocCurve>,
    pub selected_features: Vec<String>,
}

impl MetricsReport {
    pub fn row(&self, model: &str, mode: TargetMode) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.target_mode == mode)
    }

    pub fn curve(&self, model: &str, mode: TargetMode) -> Option<&RocCurve> {
        self.roc.iter().find(|r| r.model == model && r.target_mode == mode)
    }
}

fn model_params(spec: &ModelSpec, cfg: &BenchmarkConfig) -> String {
    let g = &cfg.gbdt;
    let gbdt = format!(
        "rounds={},depth={},lr={},lambda={},min_child_weight={}",
        g.n_rounds, g.max_depth, g.learning_rate, g.lambda, g.min_child_weight
    );
    match spec {
        ModelSpec::Pfn { ensembles } => format!("ensembles={ensembles},balance=oversample"),
        ModelSpec::GbdtWeighted => format!("{gbdt},balance=class-weights"),
        ModelSpec::GbdtUnweighted => format!("{gbdt},balance=oversample"),
        ModelSpec::Logistic => {
            let l = &cfg.logistic;
            format!("lr={},epochs={},l2={},balance=class-weights", l.learning_rate, l.epochs, l.l2)
        }
    }
}

/// Positive-class probabilities of one model on one split.
#[allow(clippy::too_many_arguments)]
fn run_model(
    spec: &ModelSpec,
    mode: TargetMode,
    cfg: &BenchmarkConfig,
    weights: Option<&PfnWeights<f32>>,
    x_train: &Tensor<f64>,
    y_train: &[usize],
    x_test: &Tensor<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    let balanced = mode == TargetMode::Balanced;
    let oversampled = || -> Result<(Tensor<f64>, Vec<usize>)> {
        if !balanced {
            return Ok((x_train.clone(), y_train.to_vec()));
        }
        let idx = balance_training(y_train, seed);
        Ok((take_rows(x_train, &idx)?, idx.iter().map(|&i| y_train[i]).collect()))
    };
    let weights_for = |y: &[usize]| if balanced { ClassWeights::balanced(y) } else { Ok(ClassWeights::default()) };
    match spec {
        ModelSpec::Pfn { ensembles } => {
            let w = weights.ok_or_else(|| Error::InvalidInput("PFN weights are required".into()))?;
            let stats = fit(x_train)?;
            let (x_ctx, y_ctx) = oversampled()?;
            let ppd = ensemble_infer_fitted(w, &stats, &x_ctx, &y_ctx, x_test, *ensembles)?;
            Ok(ppd.class_probability(1))
        }
        ModelSpec::GbdtWeighted => {
            let m = fit_gbdt(x_train, y_train, &cfg.gbdt, weights_for(y_train)?)?;
            m.predict_proba(x_test)
        }
        ModelSpec::GbdtUnweighted => {
            let (x, y) = oversampled()?;
            fit_gbdt(&x, &y, &cfg.gbdt, ClassWeights::default())?.predict_proba(x_test)
        }
        ModelSpec::Logistic => {
            let stats = fit(x_train)?;
            let plan = PreprocessPlan::identity(x_train.shape()[1]);
            let m = fit_logistic(&transform(x_train, &stats, &plan)?, y_train, &cfg.logistic, weights_for(y_train)?)?;
            m.predict_proba(&transform(x_test, &stats, &plan)?)
        }
    }
}

/// Feature indices ranked by mean |SHAP| of a boosted model fitted on the
/// seed-0 training split, class-weighted when `cfg.shap_mode` is balanced.
pub fn shap_feature_ranking(x: &Tensor<f64>, y: &[usize], cfg: &BenchmarkConfig, k: usize) -> Result<Vec<usize>> {
    let split = stratified_split(y, &SplitSpec { train_fraction: cfg.train_fraction, stratified: true, seed: 0 })?;
    let x_train = take_rows(x, &split.train)?;
    let y_train: Vec<usize> = split.train.iter().map(|&i| y[i]).collect();
    let weights = match cfg.shap_mode {
        TargetMode::Imbalance => ClassWeights::default(),
        TargetMode::Balanced => ClassWeights::balanced(&y_train)?,
    };
    let model = fit_gbdt(&x_train, &y_train, &cfg.gbdt, weights)?;
    select_top_k(&mean_abs_shap(&model, &x_train)?, k)
}

struct SeedResult {
    /// Per (model, mode) in report order.
    metrics: Vec<Metrics>,
    roc: Vec<Option<Roc>>,
}

/// Runs every model in both target modes over `n_seeds` stratified splits.
/// All models see identical partitions for a given seed.
pub fn run_benchmark(
    models: &[ModelSpec],
    dataset: &TabularDataset,
    cfg: &BenchmarkConfig,
    weights: Option<&PfnWeights<f32>>,
    progress: &(dyn Fn(u64) + Sync),
) -> Result<MetricsReport> {
    if models.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one model".into()));
    }
    if cfg.n_seeds == 0 {
        return Err(Error::InvalidInput("benchmark needs at least one seed".into()));
    }
    let y = dataset.binary_labels()?;
    let (data, selected) = match cfg.top_k {
        Some(k) if k < dataset.n_features() => {
            let idx = shap_feature_ranking(&dataset.x, &y, cfg, k)?;
            let sub = dataset.select_features(&idx)?;
            let names = sub.feature_names.clone();
            (sub, names)
        }
        _ => (dataset.clone(), dataset.feature_names.clone()),
    };
    let jobs: Vec<(ModelSpec, TargetMode)> = models.iter().flat_map(|m| TargetMode::ALL.iter().map(move |&t| (*m, t))).collect();
    let per_seed: Vec<SeedResult> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|seed| -> Result<SeedResult> {
            let split = stratified_split(&y, &SplitSpec { train_fraction: cfg.train_fraction, stratified: true, seed })?;
            let x_train = take_rows(&data.x, &split.train)?;
            let y_train: Vec<usize> = split.train.iter().map(|&i| y[i]).collect();
            let x_test = take_rows(&data.x, &split.test)?;
            let y_test: Vec<usize> = split.test.iter().map(|&i| y[i]).collect();
            let mut out = SeedResult { metrics: Vec::new(), roc: Vec::new() };
            for (spec, mode) in &jobs {
                let probs =
                    run_model(spec, *mode, cfg, weights, &x_train, &y_train, &x_test, seed)
                        .and_then(|p| {
                            if p.iter().all(|v| v.is_finite()) {
                                Ok(p)
                            } else {
                                Err(Error::Numeric("non-finite probability".into()))
                            }
                        })
                        .map_err(|e| Error::Model { model: format!("{} ({})", spec.label(), mode.name()), seed, source: Box::new(e) })?;
                out.metrics.push(metrics(&y_test, &threshold(&probs))?);
                out.roc.push(if seed == cfg.roc_seed { Some(roc_auc(&y_test, &probs)?) } else { None });
            }
            progress(seed);
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut roc = Vec::new();
    for (j, (spec, mode)) in jobs.iter().enumerate() {
        let column = |f: fn(&Metrics) -> f64| mean_std(&per_seed.iter().map(|s| f(&s.metrics[j])).collect::<Vec<_>>());
        let (am, asd) = column(|m| m.accuracy);
        let (bm, bsd) = column(|m| m.balanced_accuracy);
        let (fm, fsd) = column(|m| m.f1);
        rows.push(ReportRow {
            model: spec.label(),
            params: model_params(spec, cfg),
            target_mode: *mode,
            accuracy_mean: am,
            accuracy_std: asd,
            balanced_accuracy_mean: bm,
            balanced_accuracy_std: bsd,
            f1_mean: fm,
            f1_std: fsd,
            n_seeds: cfg.n_seeds,
        });
        if let Some(r) = per_seed.iter().find_map(|s| s.roc[j].clone()) {
            roc.push(RocCurve { model: spec.label(), target_mode: *mode, seed: cfg.roc_seed, roc: r });
        }
    }
    Ok(MetricsReport { rows, roc, selected_features: selected })
}
