//! Binary classification metrics and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Probability above which a row is predicted positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// Labels predicted from positive-class probabilities.
pub fn threshold(probs: &[f64]) -> Vec<usize> {
    probs.iter().map(|&p| usize::from(p > DECISION_THRESHOLD)).collect()
}

fn check_binary(y: &[usize], what: &str) -> Result<()> {
    match y.iter().find(|&&c| c > 1) {
        Some(c) => Err(Error::InvalidInput(format!("{what} must be binary, found {c}"))),
        None => Ok(()),
    }
}

/// Accuracy, balanced accuracy (mean recall over the classes present in
/// `y_true`) and F1 of the positive class.
pub fn metrics(y_true: &[usize], y_pred: &[usize]) -> Result<Metrics> {
    if y_true.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one row".into()));
    }
    if y_true.len() != y_pred.len() {
        return dim_err(format!("{} labels but {} predictions", y_true.len(), y_pred.len()));
    }
    check_binary(y_true, "labels")?;
    check_binary(y_pred, "predictions")?;
    let mut c = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        c[t][p] += 1;
    }
    let (tn, fp, fn_, tp) = (c[0][0], c[0][1], c[1][0], c[1][1]);
    let n = y_true.len();
    let recalls: Vec<f64> =
        [(tn, tn + fp), (tp, tp + fn_)].iter().filter(|(_, total)| *total > 0).map(|&(hit, total)| hit as f64 / total as f64).collect();
    let f1_den = 2 * tp + fp + fn_;
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / n as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        f1: if f1_den == 0 { 0.0 } else { (2 * tp) as f64 / f1_den as f64 },
    })
}

/// ROC curve with one point per distinct score (plus the origin) and the
/// area under it. The area is the Mann-Whitney statistic with ties counted
/// as one half, evaluated in integer arithmetic and rounded once.
pub fn roc_auc(y_true: &[usize], scores: &[f64]) -> Result<Roc> {
    if y_true.len() != scores.len() {
        return dim_err(format!("{} labels but {} scores", y_true.len(), scores.len()));
    }
    check_binary(y_true, "labels")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let n_pos = y_true.iter().filter(|&&c| c == 1).count() as u128;
    let n_neg = y_true.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("AUC needs both classes in y_true".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    // Twice the trapezoid area, in units of one positive-negative pair.
    let mut twice_area: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]] == 1 {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push(RocPoint { threshold: s, fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
    }
    let auc = twice_area as f64 / (2 * n_pos * n_neg) as f64;
    Ok(Roc { auc, points })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_auc_example() {
        let roc = roc_auc(&[1, 1, 0, 0], &[0.9, 0.4, 0.6, 0.1]).unwrap();
        assert_eq!(roc.auc, 0.75);
        assert_eq!(roc.points.len(), 5);
        assert_eq!(roc.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn perfect_scores() {
        let y = [0, 1, 0, 1];
        let s = [0.1, 0.8, 0.2, 0.9];
        assert_eq!(roc_auc(&y, &s).unwrap().auc, 1.0);
        assert_eq!(metrics(&y, &threshold(&s)).unwrap().f1, 1.0);
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(roc_auc(&[0, 1], &[0.5, 0.5]).unwrap().auc, 0.5);
    }

    #[test]
    fn constant_predictor_is_at_chance() {
        let y = [0, 0, 0, 1];
        assert_eq!(metrics(&y, &[0, 0, 0, 0]).unwrap().balanced_accuracy, 0.5);
        assert_eq!(metrics(&y, &[1, 1, 1, 1]).unwrap().balanced_accuracy, 0.5);
        assert_eq!(metrics(&y, &[0, 0, 0, 0]).unwrap().f1, 0.0);
    }

    #[test]
    fn single_class_auc_is_an_error() {
        assert!(roc_auc(&[1, 1], &[0.1, 0.2]).is_err());
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[0.7]).1, 0.0);
    }
}
