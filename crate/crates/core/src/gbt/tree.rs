use serde::{Deserialize, Serialize};

use crate::numcore::Matrix;

/// Regression tree node. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] < *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_child_hessian: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            lambda: 1.0,
            min_child_hessian: 1.0,
        }
    }
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        -g / denom
    } else {
        0.0
    }
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| if h + lambda > 0.0 { g * g / (h + lambda) } else { 0.0 };
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Fits one regression tree to per-row gradients and hessians over the given
/// rows and candidate features.
///
/// Splits are searched exactly over midpoints between consecutive distinct
/// values. A split must have positive gain and leave at least
/// `min_child_hessian` on both sides; equal gains resolve to the lowest
/// feature index, then the lowest threshold.
pub fn fit_tree(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    params: &TreeParams,
) -> TreeNode {
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let sorted: Vec<Vec<usize>> = features
        .iter()
        .map(|&f| {
            let mut r = rows.to_vec();
            r.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
            r
        })
        .collect();
    grow(x, grad, hess, rows, &features, sorted, 0, params)
}

/// Convenience wrapper over all rows and all features.
pub fn fit_tree_all(x: &Matrix, grad: &[f64], hess: &[f64], params: &TreeParams) -> TreeNode {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let features: Vec<usize> = (0..x.cols()).collect();
    fit_tree(x, grad, hess, &rows, &features, params)
}

#[allow(clippy::too_many_arguments)]
fn grow(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    sorted: Vec<Vec<usize>>,
    depth: usize,
    params: &TreeParams,
) -> TreeNode {
    let g: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h: f64 = rows.iter().map(|&r| hess[r]).sum();
    let leaf = TreeNode::Leaf {
        weight: leaf_weight(g, h, params.lambda),
    };
    if depth >= params.max_depth || rows.len() < 2 {
        return leaf;
    }

    let mut best: Option<Candidate> = None;
    for (fi, &feature) in features.iter().enumerate() {
        let order = &sorted[fi];
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len() - 1 {
            let r = order[w];
            gl += grad[r];
            hl += hess[r];
            let here = x[(r, feature)];
            let next = x[(order[w + 1], feature)];
            if next <= here {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < params.min_child_hessian || hr < params.min_child_hessian {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.lambda);
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature,
                    threshold: here + (next - here) / 2.0,
                    gain,
                });
            }
        }
    }

    let Some(best) = best else {
        return leaf;
    };
    let goes_left = |r: usize| x[(r, best.feature)] < best.threshold;
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| goes_left(r));
    let mut left_sorted = Vec::with_capacity(sorted.len());
    let mut right_sorted = Vec::with_capacity(sorted.len());
    for order in sorted {
        let (l, r): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&r| goes_left(r));
        left_sorted.push(l);
        right_sorted.push(r);
    }
    TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(grow(x, grad, hess, &left_rows, features, left_sorted, depth + 1, params)),
        right: Box::new(grow(x, grad, hess, &right_rows, features, right_sorted, depth + 1, params)),
    }
}
