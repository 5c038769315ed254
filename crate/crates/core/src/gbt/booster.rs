use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, TreeNode, TreeParams};
use crate::error::{Error, Result};
use crate::numcore::{softmax, Matrix, Rng};

const PRIOR_FLOOR: f64 = 1e-6;
const LOG_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub rounds: usize,
    pub early_stopping_rounds: usize,
    pub lambda: f64,
    pub min_child_hessian: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            max_depth: 3,
            learning_rate: 0.05,
            subsample: 0.8,
            colsample_bytree: 0.8,
            rounds: 500,
            early_stopping_rounds: 25,
            lambda: 1.0,
            min_child_hessian: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return Err(Error::Config(format!(
                "colsample_bytree must lie in (0, 1], got {}",
                self.colsample_bytree
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.lambda >= 0.0) || !(self.min_child_hessian >= 0.0) {
            return Err(Error::Config(
                "learning_rate, lambda and min_child_hessian must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            lambda: self.lambda,
            min_child_hessian: self.min_child_hessian,
        }
    }
}

/// Labelled rows with optional per-row weights (default 1).
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Rows<'a> {
    pub fn new(x: &'a Matrix, y: &'a [usize]) -> Self {
        Rows { x, y, weights: None }
    }

    pub fn weighted(x: &'a Matrix, y: &'a [usize], weights: &'a [f64]) -> Self {
        Rows {
            x,
            y,
            weights: Some(weights),
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }
}

/// Per-round losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoostHistory {
    /// Dev loss of the base score alone, before any round.
    pub dev_base_mlogloss: Option<f64>,
    pub train_mlogloss: Vec<f64>,
    pub dev_mlogloss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: GbtParams,
    pub classes: usize,
    pub n_features: usize,
    pub base_score: Vec<f64>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<TreeNode>>,
    /// Number of leading rounds used for prediction.
    pub best_round: usize,
    pub history: BoostHistory,
}

/// Gradient and hessian of the weighted softmax log loss with respect to the logits.
pub fn grad_hess_multiclass(
    logits: &Matrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<(Matrix, Matrix)> {
    let (n, classes) = logits.shape();
    if labels.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "{n} logit rows, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let mut g = Matrix::zeros(n, classes);
    let mut h = Matrix::zeros(n, classes);
    for i in 0..n {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Config(format!("label {y} out of range for {classes} classes")));
        }
        let p = softmax(logits.row(i));
        let w = weights[i];
        for c in 0..classes {
            let target = if c == y { 1.0 } else { 0.0 };
            g[(i, c)] = w * (p[c] - target);
            h[(i, c)] = w * p[c] * (1.0 - p[c]);
        }
    }
    Ok((g, h))
}

/// Mean (weighted) negative log-likelihood of the labels under softmax(logits).
pub fn mlogloss(logits: &Matrix, labels: &[usize], weights: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = softmax(logits.row(i));
        let w = weights.map_or(1.0, |w| w[i]);
        total -= w * p[y].max(LOG_FLOOR).ln();
        wsum += w;
    }
    if wsum > 0.0 {
        total / wsum
    } else {
        0.0
    }
}

fn sample_sorted(rng: &mut Rng, n: usize, fraction: f64) -> Vec<usize> {
    let take = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    if take < n {
        rng.shuffle(&mut idx);
        idx.truncate(take);
        idx.sort_unstable();
    }
    idx
}

/// Trains a multiclass boosted ensemble.
///
/// Every round fits one tree per class on a row subsample (shared by the
/// round) and a per-tree column subsample. With a non-empty dev set, training
/// stops after `early_stopping_rounds` rounds without a strict improvement in
/// dev log loss, and prediction is truncated at the best round (0 when no
/// round ever beat the base score).
pub fn train(
    train: Rows<'_>,
    dev: Option<Rows<'_>>,
    classes: usize,
    params: &GbtParams,
) -> Result<BoostedEnsemble> {
    params.validate()?;
    let (n, d) = train.x.shape();
    if train.y.len() != n || train.weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension("training labels/weights do not match rows".into()));
    }
    if let Some(dev) = dev {
        if dev.x.cols() != d || dev.y.len() != dev.x.rows() {
            return Err(Error::Dimension("dev rows do not match training layout".into()));
        }
    }
    if let Some(&bad) = train.y.iter().find(|&&y| y >= classes) {
        return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
    }
    let mut mass = vec![0.0; classes];
    for i in 0..n {
        mass[train.y[i]] += train.weight(i);
    }
    if mass.iter().filter(|&&m| m > 0.0).count() < 2 {
        return Err(Error::Training("training data contains a single class".into()));
    }
    let total: f64 = mass.iter().sum();
    let base_score: Vec<f64> = mass.iter().map(|m| (m / total).max(PRIOR_FLOOR).ln()).collect();

    let weights: Vec<f64> = (0..n).map(|i| train.weight(i)).collect();
    let mut logits = Matrix::zeros(n, classes);
    for i in 0..n {
        logits.row_mut(i).copy_from_slice(&base_score);
    }
    let dev = dev.filter(|d| d.x.rows() > 0);
    let mut dev_logits = dev.map(|dv| {
        let mut m = Matrix::zeros(dv.x.rows(), classes);
        for i in 0..dv.x.rows() {
            m.row_mut(i).copy_from_slice(&base_score);
        }
        m
    });

    let mut rng = Rng::new(params.seed).substream("gbt");
    let tree_params = params.tree_params();
    let mut trees: Vec<Vec<TreeNode>> = Vec::new();
    let mut history = BoostHistory::default();
    let mut best_loss = match (dev, &dev_logits) {
        (Some(dv), Some(l)) => mlogloss(l, dv.y, dv.weights),
        _ => f64::INFINITY,
    };
    if best_loss.is_finite() {
        history.dev_base_mlogloss = Some(best_loss);
    }
    let mut best_round = 0;
    let mut stale = 0;

    for round in 1..=params.rounds {
        let (g, h) = grad_hess_multiclass(&logits, train.y, &weights)?;
        let rows = sample_sorted(&mut rng, n, params.subsample);
        let columns: Vec<Vec<usize>> = (0..classes)
            .map(|_| sample_sorted(&mut rng, d, params.colsample_bytree))
            .collect();
        let round_trees: Vec<TreeNode> = (0..classes)
            .into_par_iter()
            .map(|c| {
                let gc = g.col(c);
                let hc = h.col(c);
                fit_tree(train.x, &gc, &hc, &rows, &columns[c], &tree_params)
            })
            .collect();

        for (c, tree) in round_trees.iter().enumerate() {
            for i in 0..n {
                logits[(i, c)] += params.learning_rate * tree.predict(train.x.row(i));
            }
            if let (Some(dv), Some(dl)) = (dev, dev_logits.as_mut()) {
                for i in 0..dv.x.rows() {
                    dl[(i, c)] += params.learning_rate * tree.predict(dv.x.row(i));
                }
            }
        }
        trees.push(round_trees);
        history.train_mlogloss.push(mlogloss(&logits, train.y, Some(&weights)));

        if let (Some(dv), Some(dl)) = (dev, &dev_logits) {
            let loss = mlogloss(dl, dv.y, dv.weights);
            history.dev_mlogloss.push(loss);
            if loss < best_loss {
                best_loss = loss;
                best_round = round;
                stale = 0;
            } else {
                stale += 1;
                if stale >= params.early_stopping_rounds {
                    break;
                }
            }
        } else {
            best_round = round;
        }
    }

    Ok(BoostedEnsemble {
        params: params.clone(),
        classes,
        n_features: d,
        base_score,
        trees,
        best_round,
        history,
    })
}

impl BoostedEnsemble {
    pub fn rounds_trained(&self) -> usize {
        self.trees.len()
    }

    pub fn best_dev_mlogloss(&self) -> Option<f64> {
        match self.best_round {
            0 => self.history.dev_base_mlogloss,
            r => self.history.dev_mlogloss.get(r - 1).copied(),
        }
    }

    fn check_dims(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_features {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Raw scores: base score plus the shrunken outputs of the first `best_round` rounds.
    pub fn predict_logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_dims(x)?;
        let mut out = Matrix::zeros(x.rows(), self.classes);
        for i in 0..x.rows() {
            let row = x.row(i);
            let o = out.row_mut(i);
            o.copy_from_slice(&self.base_score);
            for round in &self.trees[..self.best_round] {
                for (c, tree) in round.iter().enumerate() {
                    o[c] += self.params.learning_rate * tree.predict(row);
                }
            }
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let logits = self.predict_logits(x)?;
        let mut out = Matrix::zeros(x.rows(), self.classes);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&softmax(logits.row(i)));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.iter_rows().map(crate::numcore::argmax).collect())
    }

    /// Total number of tree nodes, a rough size measure.
    pub fn parameter_count(&self) -> usize {
        fn nodes(t: &TreeNode) -> usize {
            match t {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => 1 + nodes(left) + nodes(right),
            }
        }
        self.trees[..self.best_round].iter().flatten().map(nodes).sum()
    }
}
