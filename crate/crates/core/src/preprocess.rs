//! Feature preprocessing fitted on training rows only.
//!
//! Per column: median imputation, sign-preserving `log1p` for columns flagged
//! as outlier-heavy, an optional Yeo-Johnson power transform, then
//! standardization. Ensemble members differ in column order, the power
//! transform toggle and a class-label rotation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// A column is outlier-heavy when some value lies further than this many
/// (IQR + 1e-9) from the median.
pub const OUTLIER_IQR_FACTOR: f64 = 10.0;
pub const LAMBDA_RANGE: (f64, f64) = (-2.0, 2.0);
pub const LAMBDA_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    /// Mean and population std after imputation and log-scaling.
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
    pub outlier: bool,
    pub lambda: f64,
    /// Mean and std after the power transform.
    pub power_mean: f64,
    pub power_std: f64,
    pub fill: f64,
    pub constant: bool,
}

/// Statistics for every column, fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedStats {
    pub columns: Vec<ColumnStats>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    /// Output column `j` is input column `permutation[j]`.
    pub permutation: Vec<usize>,
    pub apply_power_transform: bool,
    pub label_rotation: usize,
}

impl PreprocessPlan {
    /// Canonical plan: original column order, no power transform, no rotation.
    pub fn identity(n_features: usize) -> Self {
        Self { permutation: (0..n_features).collect(), apply_power_transform: false, label_rotation: 0 }
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        self.permutation.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
    }
}

fn is_missing(v: f64) -> bool {
    !v.is_finite()
}

/// Median of a sorted slice.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Quantile as the nearest order statistic (no interpolation toward extremes).
fn nearest_quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[(p * (sorted.len() - 1) as f64).round() as usize]
}

pub fn signed_log1p(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Yeo-Johnson power transform; strictly increasing in `x` for every `lambda`.
pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if x >= 0.0 {
        if lambda.abs() < EPS {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < EPS {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

/// Profile log-likelihood of `lambda` under a Gaussian model of the
/// transformed values.
pub fn yeo_johnson_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let transformed: Vec<f64> = values.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let (_, std) = mean_std(&transformed);
    let var = std * std;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jacobian: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jacobian
}

/// Maximum-likelihood Yeo-Johnson `lambda` by golden-section search over
/// [-2, 2]. Columns with fewer than three distinct finite values get the
/// identity (`lambda = 1`).
pub fn fit_yeo_johnson(column: &[f64]) -> f64 {
    let mut finite: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let mut distinct = finite.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        warn!("power transform: {} distinct values, using identity", distinct.len());
        return 1.0;
    }
    let f = |l: f64| yeo_johnson_log_likelihood(&finite, l);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LAMBDA_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LAMBDA_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn fit_column(values: &[f64]) -> ColumnStats {
    let mut present: Vec<f64> = values.iter().copied().filter(|v| !is_missing(*v)).collect();
    if present.is_empty() {
        return ColumnStats {
            mean: 0.0,
            std: 0.0,
            median: 0.0,
            iqr: 0.0,
            outlier: false,
            lambda: 1.0,
            power_mean: 0.0,
            power_std: 0.0,
            fill: 0.0,
            constant: true,
        };
    }
    present.sort_by(f64::total_cmp);
    let med = median(&present);
    let iqr = nearest_quantile(&present, 0.75) - nearest_quantile(&present, 0.25);
    let spread = present.iter().map(|v| (v - med).abs()).fold(0.0, f64::max);
    let outlier = spread > OUTLIER_IQR_FACTOR * (iqr + 1e-9);
    let scaled: Vec<f64> = if outlier { present.iter().map(|&v| signed_log1p(v)).collect() } else { present };
    let (mean, std) = mean_std(&scaled);
    let lambda = fit_yeo_johnson(&scaled);
    let powered: Vec<f64> = scaled.iter().map(|&v| yeo_johnson(v, lambda)).collect();
    let (power_mean, power_std) = mean_std(&powered);
    ColumnStats { mean, std, median: med, iqr, outlier, lambda, power_mean, power_std, fill: med, constant: std == 0.0 }
}

/// Fits per-column statistics; missing values (non-finite) are excluded.
pub fn fit(train: &Tensor<f64>) -> Result<FittedStats> {
    let (n, f) = train.dims2()?;
    if n < 2 {
        return Err(Error::InvalidInput(format!("preprocessing needs at least 2 rows, got {n}")));
    }
    let columns = (0..f)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| train.at(i, j)).collect();
            fit_column(&col)
        })
        .collect();
    Ok(FittedStats { columns })
}

impl ColumnStats {
    /// Transformed value of one (possibly missing) cell.
    pub fn apply(&self, x: f64, power: bool) -> f64 {
        let mut v = if is_missing(x) { self.fill } else { x };
        if self.outlier {
            v = signed_log1p(v);
        }
        let (mean, std) = if power {
            v = yeo_johnson(v, self.lambda);
            (self.power_mean, self.power_std)
        } else {
            (self.mean, self.std)
        };
        if std > 0.0 {
            (v - mean) / std
        } else {
            0.0
        }
    }
}

/// Applies fitted statistics and a plan to rows.
pub fn transform(rows: &Tensor<f64>, stats: &FittedStats, plan: &PreprocessPlan) -> Result<Tensor<f64>> {
    let (n, f) = rows.dims2()?;
    if f != stats.columns.len() {
        return dim_err(format!("rows have {f} columns, statistics were fitted on {}", stats.columns.len()));
    }
    if plan.permutation.len() != f || !plan.is_bijection() {
        return dim_err(format!("plan permutation is not a bijection on {f} columns"));
    }
    let mut out = Vec::with_capacity(n * f);
    for i in 0..n {
        let row = rows.row(i);
        out.extend(plan.permutation.iter().map(|&j| stats.columns[j].apply(row[j], plan.apply_power_transform)));
    }
    Tensor::new(vec![n, f], out)
}

/// Deterministic ensemble plans. Member `i` shifts columns cyclically by
/// `floor(i * n_features / n_members)`, power-transforms iff `i` is odd and
/// rotates class labels by `i mod n_classes`. Member 0 is the identity plan.
pub fn build_ensemble_members(n_features: usize, n_classes: usize, n_members: usize) -> Result<Vec<PreprocessPlan>> {
    if n_members == 0 {
        return Err(Error::InvalidInput("an ensemble needs at least one member".into()));
    }
    if n_features == 0 || n_classes == 0 {
        return Err(Error::InvalidInput("ensemble needs at least one feature and one class".into()));
    }
    Ok((0..n_members)
        .map(|i| {
            let shift = i * n_features / n_members;
            PreprocessPlan {
                permutation: (0..n_features).map(|j| (j + shift) % n_features).collect(),
                apply_power_transform: i % 2 == 1,
                label_rotation: i % n_classes,
            }
        })
        .collect())
}
