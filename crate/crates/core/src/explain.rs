//! Feature attribution: path-dependent TreeSHAP for boosted trees,
//! permutation importance for any binary classifier, and top-k selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{BinaryClassifier, GbdtModel, Tree, TreeNode};
use crate::error::{dim_err, Error, Result};
use crate::eval::metrics::{metrics, roc_auc, threshold};
use crate::numerics::Tensor;

/// Margin-space contributions of each feature for one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub base: f64,
}

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let d = path.len();
    path.push(PathElement { feature, zero_fraction, one_fraction, weight: if d == 0 { 1.0 } else { 0.0 } });
    for i in (0..d).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / (d + 1) as f64;
        path[i].weight = zero_fraction * path[i].weight * (d - i) as f64 / (d + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let d = path.len() - 1;
    let PathElement { zero_fraction, one_fraction, .. } = path[index];
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next = tmp - path[i].weight * zero_fraction * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (d + 1) as f64 / (zero_fraction * (d - i) as f64);
        }
    }
    for i in index..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let d = path.len() - 1;
    let PathElement { zero_fraction, one_fraction, .. } = path[index];
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one_fraction != 0.0 {
            let tmp = next * (d + 1) as f64 / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next = path[i].weight - tmp * zero_fraction * (d - i) as f64 / (d + 1) as f64;
        } else if zero_fraction != 0.0 {
            total += path[i].weight / zero_fraction * (d + 1) as f64 / (d - i) as f64;
        }
    }
    total
}

fn cover_ratio(child: f64, parent: f64) -> f64 {
    if parent > 0.0 {
        child / parent
    } else {
        0.5
    }
}

fn recurse(
    tree: &Tree,
    at: usize,
    row: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match tree.nodes[at] {
        TreeNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let e = path[i];
                let w = unwound_sum(&path, i);
                phi[e.feature.expect("non-root path element")] += w * (e.one_fraction - e.zero_fraction) * value;
            }
        }
        TreeNode::Split { feature: f, threshold, left, right, default_left, cover } => {
            let x = row[f];
            let go_left = if x.is_nan() { default_left } else { x < threshold };
            let (hot, cold) = if go_left { (left, right) } else { (right, left) };
            let (mut inc_zero, mut inc_one) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(f)) {
                inc_zero = path[k].zero_fraction;
                inc_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            let hot_zero = cover_ratio(tree.nodes[hot].cover(), cover);
            let cold_zero = cover_ratio(tree.nodes[cold].cover(), cover);
            recurse(tree, hot, row, phi, path.clone(), hot_zero * inc_zero, inc_one, Some(f));
            recurse(tree, cold, row, phi, path, cold_zero * inc_zero, 0.0, Some(f));
        }
    }
}

/// Cover-weighted mean output of a tree.
pub fn tree_expectation(tree: &Tree) -> f64 {
    fn walk(t: &Tree, at: usize) -> f64 {
        match t.nodes[at] {
            TreeNode::Leaf { value, .. } => value,
            TreeNode::Split { left, right, cover, .. } => {
                let (l, r) = (cover_ratio(t.nodes[left].cover(), cover), cover_ratio(t.nodes[right].cover(), cover));
                l * walk(t, left) + r * walk(t, right)
            }
        }
    }
    walk(tree, 0)
}

/// Shapley contributions of one tree's output for `row`.
pub fn tree_shap_single(tree: &Tree, row: &[f64], phi: &mut [f64]) {
    recurse(tree, 0, row, phi, Vec::with_capacity(8), 1.0, 1.0, None);
}

/// Path-dependent TreeSHAP of the model margin for one row.
pub fn tree_shap(model: &GbdtModel, row: &[f64]) -> Result<Attribution> {
    if model.trees.is_empty() && model.n_features == 0 {
        return Err(Error::InvalidInput("model is not fitted".into()));
    }
    if row.len() != model.n_features {
        return dim_err(format!("model expects {} features, row has {}", model.n_features, row.len()));
    }
    let lr = model.params.learning_rate;
    let mut phi = vec![0.0; row.len()];
    let mut expected = 0.0;
    for t in &model.trees {
        tree_shap_single(t, row, &mut phi);
        expected += tree_expectation(t);
    }
    phi.iter_mut().for_each(|p| *p *= lr);
    Ok(Attribution { values: phi, base: model.base_score + lr * expected })
}

/// Mean absolute SHAP value per feature over all rows.
pub fn mean_abs_shap(model: &GbdtModel, rows: &Tensor<f64>) -> Result<Vec<f64>> {
    let (n, f) = rows.dims2()?;
    let mut total = vec![0.0; f];
    for i in 0..n {
        for (t, v) in total.iter_mut().zip(tree_shap(model, rows.row(i))?.values) {
            *t += v.abs();
        }
    }
    Ok(total.into_iter().map(|t| t / n as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    Auc,
    BalancedAccuracy,
}

impl ImportanceMetric {
    pub fn score(self, y: &[usize], probs: &[f64]) -> Result<f64> {
        match self {
            Self::Auc => Ok(roc_auc(y, probs)?.auc),
            Self::BalancedAccuracy => Ok(metrics(y, &threshold(probs))?.balanced_accuracy),
        }
    }
}

/// Mean drop of `metric` when one column at a time is shuffled.
pub fn permutation_importance(
    model: &dyn BinaryClassifier,
    rows: &Tensor<f64>,
    y: &[usize],
    metric: ImportanceMetric,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (n, f) = rows.dims2()?;
    if n != y.len() {
        return dim_err(format!("{n} rows but {} labels", y.len()));
    }
    if n_repeats == 0 {
        return Err(Error::InvalidInput("permutation importance needs at least one repeat".into()));
    }
    let reference = metric.score(y, &model.predict_proba(rows)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; f];
    for (j, score) in scores.iter_mut().enumerate() {
        let column: Vec<f64> = (0..n).map(|i| rows.at(i, j)).collect();
        let mut drop = 0.0;
        for _ in 0..n_repeats {
            let mut shuffled = column.clone();
            shuffled.shuffle(&mut rng);
            let mut data = rows.data().to_vec();
            for (i, v) in shuffled.into_iter().enumerate() {
                data[i * f + j] = v;
            }
            let permuted = Tensor::new(vec![n, f], data)?;
            drop += reference - metric.score(y, &model.predict_proba(&permuted)?)?;
        }
        *score = drop / n_repeats as f64;
    }
    Ok(scores)
}

/// Indices of the `k` highest scores, highest first; ties go to the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::InvalidInput(format!("cannot select {k} of {} features", scores.len())));
    }
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{ClassWeights, GbdtParams};

    fn stump(a: f64, b: f64, wl: f64, wr: f64) -> GbdtModel {
        GbdtModel {
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2, default_left: true, cover: wl + wr },
                    TreeNode::Leaf { value: a, cover: wl },
                    TreeNode::Leaf { value: b, cover: wr },
                ],
            }],
            base_score: 0.0,
            params: GbdtParams { learning_rate: 1.0, ..Default::default() },
            class_weights: ClassWeights::default(),
            n_features: 2,
        }
    }

    #[test]
    fn single_split_closed_form() {
        let (a, b, wl, wr) = (2.0, -1.0, 3.0, 1.0);
        let attr = tree_shap(&stump(a, b, wl, wr), &[0.0, 7.0]).unwrap();
        let expect = a - (wl * a + wr * b) / (wl + wr);
        assert!((attr.values[0] - expect).abs() < 1e-15);
        assert_eq!(attr.values[1], 0.0);
        assert!((attr.base + attr.values[0] - a).abs() < 1e-15);
    }

    #[test]
    fn top_k_orders_by_score_then_index() {
        assert_eq!(select_top_k(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(select_top_k(&[1.0, 2.0, 2.0], 3).unwrap(), vec![1, 2, 0]);
        assert!(select_top_k(&[1.0], 2).is_err());
    }

    #[test]
    fn constant_feature_has_zero_importance() {
        let model = stump(-3.0, 3.0, 1.0, 1.0);
        let rows = Tensor::from_f64(&[4, 2], &[0.0, 5.0, 1.0, 5.0, 0.0, 5.0, 1.0, 5.0]).unwrap();
        let y = [0, 1, 0, 1];
        let s = permutation_importance(&model, &rows, &y, ImportanceMetric::Auc, 3, 9).unwrap();
        assert_eq!(s[1], 0.0);
        assert_eq!(s, permutation_importance(&model, &rows, &y, ImportanceMetric::Auc, 3, 9).unwrap());
    }
}
