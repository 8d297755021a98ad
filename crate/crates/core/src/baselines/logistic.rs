//! Weighted L2-regularized logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_rows, class_counts, sigmoid, BinaryClassifier, ClassWeights};
use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Penalty `l2 / 2 * |w|^2` on the weights (not the bias).
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 1000, l2: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn predict_margin(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        let (n, f) = rows.dims2()?;
        if f != self.weights.len() {
            return dim_err(format!("model expects {} features, rows have {f}", self.weights.len()));
        }
        Ok((0..n).map(|i| self.margin_row(rows.row(i))).collect())
    }

    fn margin_row(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        Ok(self.predict_margin(rows)?.into_iter().map(sigmoid).collect())
    }
}

impl BinaryClassifier for LogisticModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        LogisticModel::predict_proba(self, rows)
    }
}

/// Minimizes the class-weighted mean log-loss plus the L2 penalty. Rows must
/// be complete (impute before fitting).
pub fn fit_logistic(x: &Tensor<f64>, y: &[usize], params: &LogisticParams, class_weights: ClassWeights) -> Result<LogisticModel> {
    let (n, f) = check_rows(x, y.len())?;
    class_counts(y)?;
    if !x.is_finite() {
        return Err(Error::InvalidInput("logistic regression needs complete, finite rows".into()));
    }
    if !(params.learning_rate > 0.0) || !(params.l2 >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid logistic parameters {params:?}")));
    }
    let w: Vec<f64> = y.iter().map(|&c| class_weights.of(c)).collect();
    let total_w: f64 = w.iter().sum();
    let mut model = LogisticModel { weights: vec![0.0; f], bias: 0.0 };
    let mut grad = vec![0.0; f];
    for _ in 0..params.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let r = w[i] * (sigmoid(model.margin_row(row)) - y[i] as f64) / total_w;
            grad_b += r;
            for (g, &xi) in grad.iter_mut().zip(row) {
                *g += r * xi;
            }
        }
        for (wj, g) in model.weights.iter_mut().zip(&grad) {
            *wj -= params.learning_rate * (g + params.l2 * *wj);
        }
        model.bias -= params.learning_rate * grad_b;
    }
    if model.weights.iter().any(|v| !v.is_finite()) || !model.bias.is_finite() {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    Ok(model)
}
