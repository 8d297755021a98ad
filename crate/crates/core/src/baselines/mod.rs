//! Binary baselines: exact-greedy gradient-boosted trees and weighted
//! logistic regression.

mod gbdt;
mod logistic;

pub use gbdt::{fit_gbdt, GbdtModel, GbdtParams, Tree, TreeNode};
pub use logistic::{fit_logistic, LogisticModel, LogisticParams};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// Any fitted binary model that yields positive-class probabilities.
pub trait BinaryClassifier: Sync {
    fn n_features(&self) -> usize;
    fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>>;
}

/// Per-class loss weights `[w0, w1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; 2]);

impl Default for ClassWeights {
    fn default() -> Self {
        Self([1.0, 1.0])
    }
}

impl ClassWeights {
    /// Inverse-frequency weights `n / (2 n_k)`.
    pub fn balanced(y: &[usize]) -> Result<Self> {
        let (n0, n1) = class_counts(y)?;
        let n = y.len() as f64;
        Ok(Self([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)]))
    }

    pub fn of(&self, label: usize) -> f64 {
        self.0[label]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Counts of labels 0 and 1; errors on other labels or a missing class.
pub(crate) fn class_counts(y: &[usize]) -> Result<(usize, usize)> {
    if let Some(bad) = y.iter().find(|&&c| c > 1) {
        return Err(Error::InvalidInput(format!("binary labels expected, found {bad}")));
    }
    let n1 = y.iter().filter(|&&c| c == 1).count();
    let n0 = y.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidInput("both classes must be present".into()));
    }
    Ok((n0, n1))
}

pub(crate) fn check_rows(x: &Tensor<f64>, n_labels: usize) -> Result<(usize, usize)> {
    let (n, f) = x.dims2()?;
    if n != n_labels {
        return dim_err(format!("{n} rows but {n_labels} labels"));
    }
    Ok((n, f))
}

/// Weighted mean binary log-loss of margins.
pub fn log_loss(margins: &[f64], y: &[usize], weights: ClassWeights) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (&m, &c) in margins.iter().zip(y) {
        let w = weights.of(c);
        // log(1 + e^{-s m}) with s = +1 for positives.
        let s = if c == 1 { m } else { -m };
        let l = if s > 0.0 { (-s).exp().ln_1p() } else { -s + s.exp().ln_1p() };
        total += w * l;
        wsum += w;
    }
    total / wsum
}
