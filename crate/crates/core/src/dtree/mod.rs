//! Integer-only decision trees under evaluator resource constraints.
//!
//! Object contents become fixed-length quad-word vectors, a CART learner
//! fits real-threshold trees, and the flattener lowers them to the
//! five-array form (`children_left`, `children_right`, `feature`,
//! `threshold`, `value`) whose thresholds quantize to integers. The
//! evaluator enforces a depth/node budget the way a bytecode verifier
//! would: malformed or oversized trees are rejected before any traversal.

mod features;
mod flat;
mod metrics;
mod train;

pub use features::{extract_features, FeatureVector};
pub use flat::{flatten, load_model, quantize, save_model, EvalBudget, FlatTree, Granularity, TreeMeta};
pub use metrics::{
    cross_validate, macro_f1_from_confusion, stratified_fold_assignment, CvReport, FoldMetrics,
};
pub use train::{train, Criterion, TrainParams, TrainedTree, TreeNode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature vectors must all have length {expected}, found {found}")]
    FeatureLength { expected: usize, found: usize },
    #[error("model arrays disagree in length: {0}")]
    ArrayLength(String),
    #[error("model rejected by pre-check: {0}")]
    Rejected(String),
    #[error("evaluation budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("model is not quantized")]
    NotQuantized,
    #[error("fewer samples ({samples}) than folds ({folds})")]
    TooFewSamples { samples: usize, folds: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
