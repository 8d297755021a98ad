//! Exact-greedy gradient-boosted trees for binary log-loss.

use serde::{Deserialize, Serialize};

use super::{check_rows, class_counts, sigmoid, BinaryClassifier, ClassWeights};
use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { n_rounds: 200, max_depth: 4, learning_rate: 0.1, lambda: 1.0, min_child_weight: 1.0 }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid boosting parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left; missing values follow
    /// `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        default_left: bool,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl TreeNode {
    /// Sum of training hessians (times class weights) reaching the node.
    pub fn cover(&self) -> f64 {
        match *self {
            Self::Split { cover, .. } | Self::Leaf { cover, .. } => cover,
        }
    }
}

/// Regression tree with the root at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { .. } => return at,
                TreeNode::Split { feature, threshold, left, right, default_left, .. } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() { default_left } else { x < threshold };
                    at = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_of(row)] {
            TreeNode::Leaf { value, .. } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

/// Boosted ensemble; margin = `base_score + learning_rate * sum of tree outputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub params: GbdtParams,
    pub class_weights: ClassWeights,
    pub n_features: usize,
}

impl GbdtModel {
    fn margin_row(&self, row: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(row);
        }
        self.base_score + self.params.learning_rate * sum
    }

    pub fn predict_margin(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        let (n, f) = rows.dims2()?;
        if f != self.n_features {
            return dim_err(format!("model expects {} features, rows have {f}", self.n_features));
        }
        Ok((0..n).map(|i| self.margin_row(rows.row(i))).collect())
    }

    pub fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        Ok(self.predict_margin(rows)?.into_iter().map(sigmoid).collect())
    }
}

impl BinaryClassifier for GbdtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, rows: &Tensor<f64>) -> Result<Vec<f64>> {
        GbdtModel::predict_proba(self, rows)
    }
}

/// Gradients and hessians are rounded to multiples of `2^-32` and summed
/// as integers per class, so every node sum is exact and independent of row
/// order.
const GRAD_SCALE: f64 = 4_294_967_296.0;
/// Keeps every per-class integer sum below `2^53`, where it converts to `f64`
/// without rounding.
const MAX_ROWS: usize = 1 << 20;

fn quantize(v: f64) -> i64 {
    (v * GRAD_SCALE).round() as i64
}

/// Per-row statistics of one boosting round.
struct RoundStats<'a> {
    g: Vec<i64>,
    h: Vec<i64>,
    class: &'a [usize],
    weights: [f64; 2],
}

impl RoundStats<'_> {
    /// Weighted total `w0 * S0 + w1 * S1` of per-class integer sums.
    fn total(&self, s: [i64; 2]) -> f64 {
        (self.weights[0] * s[0] as f64 + self.weights[1] * s[1] as f64) / GRAD_SCALE
    }

    fn g(&self, s: &NodeSums) -> f64 {
        self.total(s.g)
    }

    fn h(&self, s: &NodeSums) -> f64 {
        self.total(s.h)
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

/// Per-class integer gradient and hessian sums of a set of rows.
#[derive(Clone, Copy, Debug, Default)]
struct NodeSums {
    g: [i64; 2],
    h: [i64; 2],
}

impl NodeSums {
    fn add(&mut self, stats: &RoundStats, i: usize) {
        let c = stats.class[i];
        self.g[c] += stats.g[i];
        self.h[c] += stats.h[i];
    }

    fn plus(self, o: Self) -> Self {
        Self { g: [self.g[0] + o.g[0], self.g[1] + o.g[1]], h: [self.h[0] + o.h[0], self.h[1] + o.h[1]] }
    }

    fn minus(self, o: Self) -> Self {
        Self { g: [self.g[0] - o.g[0], self.g[1] - o.g[1]], h: [self.h[0] - o.h[0], self.h[1] - o.h[1]] }
    }
}

/// Split search state of one frontier node for the feature being scanned.
struct Scan {
    node: NodeSums,
    missing: NodeSums,
    /// Present rows left of the scan position.
    left: NodeSums,
    last: Option<f64>,
}

struct Grower<'a> {
    x: &'a Tensor<f64>,
    /// Per feature: non-missing row indices in ascending value order.
    sorted: &'a [Vec<usize>],
    /// Per feature: rows with a missing value.
    missing: &'a [Vec<usize>],
    params: &'a GbdtParams,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

impl Grower<'_> {
    fn grow(&self, stats: &RoundStats) -> Tree {
        let n = self.x.shape()[0];
        let lambda = self.params.lambda;
        let mut node_of = vec![0usize; n];
        let mut nodes = vec![TreeNode::Leaf { value: 0.0, cover: 0.0 }];
        let mut root = NodeSums::default();
        (0..n).for_each(|i| root.add(stats, i));
        // Nodes still open for splitting.
        let mut frontier = vec![(0usize, root)];
        let mut depth = 0;
        while !frontier.is_empty() {
            let best =
                if depth < self.params.max_depth { self.best_splits(stats, &node_of, &frontier) } else { vec![None; frontier.len()] };
            let mut next = Vec::new();
            let mut child_of = vec![None; nodes.len()];
            for (slot, (id, sums)) in frontier.iter().enumerate() {
                let (id, g, h) = (*id, stats.g(sums), stats.h(sums));
                match best[slot] {
                    None => nodes[id] = TreeNode::Leaf { value: -g / (h + lambda), cover: h },
                    Some(c) => {
                        let (left, right) = (nodes.len(), nodes.len() + 1);
                        nodes.push(TreeNode::Leaf { value: 0.0, cover: 0.0 });
                        nodes.push(TreeNode::Leaf { value: 0.0, cover: 0.0 });
                        nodes[id] = TreeNode::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left,
                            right,
                            default_left: c.default_left,
                            cover: h,
                        };
                        child_of[id] = Some((c, left, right));
                    }
                }
            }
            let mut sums = vec![NodeSums::default(); nodes.len()];
            for (i, node) in node_of.iter_mut().enumerate() {
                if let Some(Some((c, left, right))) = child_of.get(*node) {
                    let v = self.x.at(i, c.feature);
                    let go_left = if v.is_nan() { c.default_left } else { v < c.threshold };
                    *node = if go_left { *left } else { *right };
                    sums[*node].add(stats, i);
                }
            }
            for (id, _) in &frontier {
                if let Some((_, left, right)) = child_of[*id] {
                    next.push((left, sums[left]));
                    next.push((right, sums[right]));
                }
            }
            frontier = next;
            depth += 1;
        }
        Tree { nodes }
    }

    /// Best split per frontier node; ties keep the lowest feature, then the
    /// lowest threshold.
    fn best_splits(&self, stats: &RoundStats, node_of: &[usize], frontier: &[(usize, NodeSums)]) -> Vec<Option<Candidate>> {
        let max_node = frontier.iter().map(|f| f.0).max().unwrap_or(0);
        let mut slot_of = vec![usize::MAX; max_node + 1];
        for (s, f) in frontier.iter().enumerate() {
            slot_of[f.0] = s;
        }
        let slot_of_row: Vec<usize> = node_of.iter().map(|&id| slot_of.get(id).copied().unwrap_or(usize::MAX)).collect();
        let (lambda, mcw) = (self.params.lambda, self.params.min_child_weight);
        let parent: Vec<f64> = frontier.iter().map(|(_, s)| score(stats.g(s), stats.h(s), lambda)).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        let mut scans: Vec<Scan> =
            frontier.iter().map(|&(_, node)| Scan { node, missing: NodeSums::default(), left: NodeSums::default(), last: None }).collect();
        for feature in 0..self.x.shape()[1] {
            for scan in &mut scans {
                scan.missing = NodeSums::default();
                scan.left = NodeSums::default();
                scan.last = None;
            }
            for &i in &self.missing[feature] {
                if let Some(scan) = scans.get_mut(slot_of_row[i]) {
                    scan.missing.add(stats, i);
                }
            }
            for &i in &self.sorted[feature] {
                let s = slot_of_row[i];
                let Some(scan) = scans.get_mut(s) else { continue };
                let v = self.x.at(i, feature);
                if let Some(prev) = scan.last.filter(|&p| v > p) {
                    let right = scan.node.minus(scan.missing).minus(scan.left);
                    let default_left = stats.h(&scan.left) >= stats.h(&right);
                    let (l, r) = if default_left { (scan.left.plus(scan.missing), right) } else { (scan.left, right.plus(scan.missing)) };
                    let (hl, hr) = (stats.h(&l), stats.h(&r));
                    if hl >= mcw && hr >= mcw {
                        let gain = 0.5 * (score(stats.g(&l), hl, lambda) + score(stats.g(&r), hr, lambda) - parent[s]);
                        if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                            let mut threshold = prev + (v - prev) / 2.0;
                            if threshold <= prev {
                                threshold = v;
                            }
                            best[s] = Some(Candidate { gain, feature, threshold, default_left });
                        }
                    }
                }
                scan.left.add(stats, i);
                scan.last = Some(v);
            }
        }
        best
    }
}

/// Fits a boosted ensemble to binary labels. Node statistics are exact sums
/// of quantized gradients, so weighting a class by an integer `k` fits the
/// same model as repeating its rows `k` times.
pub fn fit_gbdt(x: &Tensor<f64>, y: &[usize], params: &GbdtParams, class_weights: ClassWeights) -> Result<GbdtModel> {
    params.validate()?;
    let (n, f) = check_rows(x, y.len())?;
    let (n0, n1) = class_counts(y)?;
    if n > MAX_ROWS {
        return Err(Error::InvalidInput(format!("at most {MAX_ROWS} training rows are supported, got {n}")));
    }
    if class_weights.0.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!("class weights must be positive, got {:?}", class_weights.0)));
    }
    let [w0, w1] = class_weights.0;
    let base_score = ((w1 * n1 as f64) / (w0 * n0 as f64)).ln();

    let mut sorted = Vec::with_capacity(f);
    let mut missing = Vec::with_capacity(f);
    for j in 0..f {
        let (mut present, absent): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| !x.at(i, j).is_nan());
        present.sort_by(|&a, &b| x.at(a, j).total_cmp(&x.at(b, j)).then(a.cmp(&b)));
        sorted.push(present);
        missing.push(absent);
    }
    if let Some(j) = (0..f).find(|&j| sorted[j].iter().any(|&i| x.at(i, j).is_infinite())) {
        return Err(Error::InvalidInput(format!("feature {j} contains an infinite value")));
    }
    let grower = Grower { x, sorted: &sorted, missing: &missing, params };

    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        let stats = RoundStats {
            g: p.iter().zip(y).map(|(&pi, &c)| quantize(pi - c as f64)).collect(),
            h: p.iter().map(|&pi| quantize(pi * (1.0 - pi))).collect(),
            class: y,
            weights: class_weights.0,
        };
        let tree = grower.grow(&stats);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
    }
    // Margins are re-derived in prediction order so training and inference agree.
    Ok(GbdtModel { trees, base_score, params: params.clone(), class_weights, n_features: f })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(xs: &[f64], y: &[usize]) -> (Tensor<f64>, Vec<usize>) {
        (Tensor::from_f64(&[xs.len(), 1], xs).unwrap(), y.to_vec())
    }

    #[test]
    fn separable_data_splits_at_the_midpoint() {
        let (x, y) = data(&[1.0, 2.0, 3.0, 6.0, 7.0, 8.0], &[0, 0, 0, 1, 1, 1]);
        let params = GbdtParams { n_rounds: 1, max_depth: 1, min_child_weight: 0.0, ..Default::default() };
        let m = fit_gbdt(&x, &y, &params, ClassWeights::default()).unwrap();
        match m.trees[0].nodes[0] {
            TreeNode::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (0, 4.5)),
            ref other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn root_only_tree_is_a_newton_step() {
        let (x, y) = data(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 1, 1]);
        let params = GbdtParams { n_rounds: 1, max_depth: 0, ..Default::default() };
        let m = fit_gbdt(&x, &y, &params, ClassWeights::default()).unwrap();
        assert_eq!(m.base_score, 3f64.ln());
        let p = 0.75;
        let g = 4.0 * p - 3.0;
        let h = 4.0 * p * (1.0 - p);
        match m.trees[0].nodes[0] {
            TreeNode::Leaf { value, .. } => assert!((value - (-g / (h + 1.0))).abs() < 1e-9),
            ref other => panic!("expected a leaf, got {other:?}"),
        }
    }

    #[test]
    fn empty_ensemble_predicts_the_base_rate() {
        let (x, y) = data(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 1, 1]);
        let m = fit_gbdt(&x, &y, &GbdtParams { n_rounds: 0, ..Default::default() }, ClassWeights::default()).unwrap();
        for p in m.predict_proba(&x).unwrap() {
            assert!((p - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_built_tree_routes_rows() {
        let tree = Tree {
            nodes: vec![
                TreeNode::Split { feature: 1, threshold: 0.5, left: 1, right: 2, default_left: false, cover: 2.0 },
                TreeNode::Leaf { value: -1.0, cover: 1.0 },
                TreeNode::Leaf { value: 2.0, cover: 1.0 },
            ],
        };
        let m = GbdtModel {
            trees: vec![tree],
            base_score: 0.25,
            params: GbdtParams { learning_rate: 0.5, ..Default::default() },
            class_weights: ClassWeights::default(),
            n_features: 2,
        };
        let rows = Tensor::from_f64(&[3, 2], &[9.0, 0.0, 9.0, 1.0, 9.0, f64::NAN]).unwrap();
        assert_eq!(m.predict_margin(&rows).unwrap(), vec![-0.25, 1.25, 1.25]);
        let wrong = Tensor::from_f64(&[1, 3], &[0.0; 3]).unwrap();
        assert!(m.predict_margin(&wrong).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, y) = data(&[1.0, 2.0], &[1, 1]);
        assert!(fit_gbdt(&x, &y, &GbdtParams::default(), ClassWeights::default()).is_err());
    }

    #[test]
    fn missing_values_follow_the_heavier_side() {
        let (x, y) = data(&[1.0, 2.0, 3.0, 10.0, f64::NAN], &[0, 0, 0, 1, 1]);
        let params = GbdtParams { n_rounds: 1, max_depth: 1, min_child_weight: 0.0, ..Default::default() };
        let m = fit_gbdt(&x, &y, &params, ClassWeights::default()).unwrap();
        match m.trees[0].nodes[0] {
            TreeNode::Split { threshold, default_left, .. } => {
                assert_eq!(threshold, 6.5);
                assert!(default_left);
            }
            ref other => panic!("expected a split, got {other:?}"),
        }
    }
}
