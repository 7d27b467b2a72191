//! Multiclass gradient boosting with depth-limited regression trees.
//!
//! Each round fits one tree per class to the softmax residuals
//! `1[y = k] - p_k`. Splits maximize squared-error reduction over exact
//! midpoints between sorted distinct feature values. Zero-gain splits are
//! taken while the node is impure, so interactions such as XOR whose first
//! split shows no gain stay reachable. Leaves take the
//! one-step Newton value `(K-1)/K · Σr / Σ|r|(1-|r|)`.

use serde::{Deserialize, Serialize};

use super::{check_finite, EnsembleError, Result};
use crate::matrix::{softmax_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self { n_rounds: 100, max_depth: 3, shrinkage: 0.1, min_leaf: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub num_classes: usize,
    pub num_features: usize,
    /// Class prior probabilities; raw scores start at their logarithm.
    pub base_score: Vec<f64>,
    pub shrinkage: f64,
    pub n_rounds: usize,
    pub max_depth: usize,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<RegressionTree>>,
    /// Summed split gain per feature.
    pub importance: Vec<f64>,
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    sorted: &'a [Vec<usize>],
    max_depth: usize,
    min_leaf: usize,
    scale: f64,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn find_split(&self, members: &[bool], count: usize, residual: &[f64]) -> Option<BestSplit> {
        let total: f64 = (0..members.len()).filter(|&i| members[i]).map(|i| residual[i]).sum();
        let parent = total * total / count as f64;
        let sse: f64 = (0..members.len()).filter(|&i| members[i]).map(|i| residual[i] * residual[i]).sum::<f64>() - parent;
        if sse <= 1e-12 {
            return None;
        }
        let mut best: Option<BestSplit> = None;
        for f in 0..self.x.cols {
            let mut left_sum = 0.0;
            let mut left_n = 0usize;
            let mut prev: Option<f64> = None;
            for &i in &self.sorted[f] {
                if !members[i] {
                    continue;
                }
                let v = self.x.get(i, f);
                if let Some(pv) = prev {
                    if v > pv && left_n >= self.min_leaf && count - left_n >= self.min_leaf {
                        let right_sum = total - left_sum;
                        let gain = left_sum * left_sum / left_n as f64
                            + right_sum * right_sum / (count - left_n) as f64
                            - parent;
                        if best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(BestSplit { feature: f, threshold: 0.5 * (pv + v), gain });
                        }
                    }
                }
                left_sum += residual[i];
                left_n += 1;
                prev = Some(v);
            }
        }
        best
    }

    fn leaf_value(&self, members: &[bool], residual: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &r) in residual.iter().enumerate() {
            if members[i] {
                num += r;
                den += r.abs() * (1.0 - r.abs());
            }
        }
        if den < 1e-12 {
            0.0
        } else {
            self.scale * num / den
        }
    }

    fn build(&self, residual: &[f64], importance: &mut [f64]) -> RegressionTree {
        let mut nodes = Vec::new();
        let members = vec![true; self.x.rows];
        self.grow(&members, self.x.rows, 0, residual, &mut nodes, importance);
        RegressionTree { nodes }
    }

    fn grow(
        &self,
        members: &[bool],
        count: usize,
        depth: usize,
        residual: &[f64],
        nodes: &mut Vec<TreeNode>,
        importance: &mut [f64],
    ) -> usize {
        let id = nodes.len();
        nodes.push(TreeNode::Leaf(0.0));
        let split = if depth < self.max_depth && count >= 2 * self.min_leaf {
            self.find_split(members, count, residual)
        } else {
            None
        };
        match split {
            None => nodes[id] = TreeNode::Leaf(self.leaf_value(members, residual)),
            Some(s) => {
                importance[s.feature] += s.gain.max(0.0);
                let mut left = vec![false; members.len()];
                let mut right = vec![false; members.len()];
                let mut nl = 0;
                for i in 0..members.len() {
                    if members[i] {
                        if self.x.get(i, s.feature) <= s.threshold {
                            left[i] = true;
                            nl += 1;
                        } else {
                            right[i] = true;
                        }
                    }
                }
                let l = self.grow(&left, nl, depth + 1, residual, nodes, importance);
                let r = self.grow(&right, count - nl, depth + 1, residual, nodes, importance);
                nodes[id] = TreeNode::Split { feature: s.feature, threshold: s.threshold, left: l, right: r };
            }
        }
        id
    }
}

fn raw_scores(model: &GbmModel, x: &Matrix) -> Matrix {
    let k = model.num_classes;
    let init: Vec<f64> = model.base_score.iter().map(|p| p.max(1e-12).ln()).collect();
    let mut f = Matrix::zeros(x.rows, k);
    for r in 0..x.rows {
        f.row_mut(r).copy_from_slice(&init);
    }
    for round in &model.trees {
        for (c, tree) in round.iter().enumerate() {
            for r in 0..x.rows {
                let v = f.get(r, c) + model.shrinkage * tree.predict_row(x.row(r));
                f.set(r, c, v);
            }
        }
    }
    f
}

pub fn gbm_fit(x: &Matrix, y: &[usize], num_classes: usize, params: &GbmParams) -> Result<GbmModel> {
    if x.rows != y.len() {
        return Err(EnsembleError::RowMismatch { expected: x.rows, got: y.len() });
    }
    if x.rows == 0 {
        return Err(EnsembleError::Empty);
    }
    check_finite(x)?;
    let k = num_classes.max(y.iter().max().map_or(1, |m| m + 1));
    let n = x.rows;
    let mut counts = vec![0usize; k];
    for &c in y {
        counts[c] += 1;
    }
    let base_score: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let sorted: Vec<Vec<usize>> = (0..x.cols)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let builder = TreeBuilder {
        x,
        sorted: &sorted,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        scale: if k > 1 { (k as f64 - 1.0) / k as f64 } else { 1.0 },
    };

    let mut model = GbmModel {
        num_classes: k,
        num_features: x.cols,
        base_score,
        shrinkage: params.shrinkage,
        n_rounds: params.n_rounds,
        max_depth: params.max_depth,
        trees: Vec::with_capacity(params.n_rounds),
        importance: vec![0.0; x.cols],
    };
    let mut f = raw_scores(&model, x);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_rounds {
        let p = softmax_rows(&f);
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            for i in 0..n {
                residual[i] = f64::from(u8::from(y[i] == c)) - p.get(i, c);
            }
            let tree = builder.build(&residual, &mut model.importance);
            for i in 0..n {
                let v = f.get(i, c) + params.shrinkage * tree.predict_row(x.row(i));
                f.set(i, c, v);
            }
            round.push(tree);
        }
        model.trees.push(round);
    }
    Ok(model)
}

pub fn gbm_predict(model: &GbmModel, x: &Matrix) -> Result<Matrix> {
    if x.cols != model.num_features {
        return Err(EnsembleError::ColMismatch { expected: model.num_features, got: x.cols });
    }
    Ok(softmax_rows(&raw_scores(model, x)))
}

pub fn gbm_importance(model: &GbmModel) -> Vec<f64> {
    model.importance.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(p: &Matrix, y: &[usize]) -> f64 {
        p.argmax_rows().iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn threshold_feature_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen(), rng.gen(), rng.gen()]).collect();
        let y: Vec<usize> = rows.iter().map(|r| usize::from(r[0] > 0.5)).collect();
        let x = Matrix::from_rows(&rows);
        let m = gbm_fit(&x, &y, 2, &GbmParams { n_rounds: 20, ..Default::default() }).unwrap();
        assert_eq!(accuracy(&gbm_predict(&m, &x).unwrap(), &y), 1.0);
        let imp = gbm_importance(&m);
        assert!(imp[0] > imp[1] && imp[0] > imp[2]);
        for round in &m.trees {
            for t in round {
                assert!(t.depth() <= 3);
                assert!(t.split_features().all(|f| f < 3));
            }
        }
    }

    #[test]
    fn constant_feature_has_zero_importance() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![1.0, i as f64]).collect::<Vec<_>>());
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let m = gbm_fit(&x, &y, 2, &GbmParams::default()).unwrap();
        assert_eq!(m.importance[0], 0.0);
        assert!(m.importance[1] > 0.0);
    }

    #[test]
    fn xor_depth_two() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for rep in 0..5 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                rows.push(vec![a, b, rep as f64 * 0.0]);
                y.push(usize::from((a == 1.0) != (b == 1.0)));
            }
        }
        let x = Matrix::from_rows(&rows);
        let m = gbm_fit(&x, &y, 2, &GbmParams { max_depth: 2, ..Default::default() }).unwrap();
        assert_eq!(accuracy(&gbm_predict(&m, &x).unwrap(), &y), 1.0);
    }

    #[test]
    fn zero_rounds_is_prior() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let y = vec![0, 1, 1, 2];
        let m = gbm_fit(&x, &y, 3, &GbmParams { n_rounds: 0, ..Default::default() }).unwrap();
        let p = gbm_predict(&m, &x).unwrap();
        for r in 0..4 {
            for (c, want) in [0.25, 0.5, 0.25].iter().enumerate() {
                assert!((p.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_class_degenerate() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let m = gbm_fit(&x, &[1, 1, 1], 2, &GbmParams::default()).unwrap();
        let p = gbm_predict(&m, &x).unwrap();
        assert_eq!(p.argmax_rows(), vec![1, 1, 1]);
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let x = Matrix::from_rows(&[vec![f64::NAN], vec![1.0]]);
        assert!(matches!(gbm_fit(&x, &[0, 1], 2, &GbmParams::default()), Err(EnsembleError::NonFinite)));
    }
}
