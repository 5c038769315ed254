//! Gradient-boosted decision trees with a second-order softmax objective,
//! plus the PCA → fusion → boosting pipeline built on them.

mod booster;
mod pipeline;
mod tree;

pub use booster::{
    grad_hess_multiclass, mlogloss, train, BoostHistory, BoostedEnsemble, GbtParams, Rows,
};
pub use pipeline::{GbtPipeline, GbtPipelineConfig, LrTrial};
pub use tree::{fit_tree, fit_tree_all, leaf_weight, split_gain, TreeNode, TreeParams};
