//! Five-array tree encoding, integer quantization, and budgeted evaluation.
//!
//! The arrays are `children_left`, `children_right`, `feature`, `threshold`,
//! and `value`, with breadth-first node numbering and `-1` children at
//! leaves. Thresholds are stored as signed 64-bit integers after floor
//! quantization; comparisons happen in the unsigned domain, so a stored
//! threshold is the bit pattern of the intended u64 cutoff (quantization
//! saturates into that range). Flooring is lossless here because every
//! feature value is an integer and every comparison is `<=`.
//!
//! [`EvalBudget`] mirrors a bytecode verifier: node count, depth, step
//! count, and working-set caps are checked before any traversal runs, and
//! child indices must move strictly forward so every walk terminates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainedTree;
use super::TreeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    /// Classes are object type ids.
    Type,
    /// Classes are `{0: other, 1: in-compartment}`.
    Compartment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub n_nodes: usize,
    pub max_depth: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub granularity: Granularity,
    pub quantized: bool,
}

/// The five-array decision-tree encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTree {
    pub children_left: Vec<i64>,
    pub children_right: Vec<i64>,
    pub feature: Vec<i64>,
    pub threshold: Vec<i64>,
    pub value: Vec<i64>,
    pub meta: TreeMeta,
    /// Real thresholds carried alongside until quantization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_thresholds: Option<Vec<f64>>,
}

/// Evaluator resource limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBudget {
    pub max_depth: usize,
    pub max_nodes: usize,
    /// Node visits allowed per inference.
    pub max_steps: usize,
    /// Working memory allowed during traversal, bytes.
    pub stack_bytes: usize,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget { max_depth: 14, max_nodes: 1 << 15, max_steps: 64, stack_bytes: 512 }
    }
}

/// Traversal state: node index, feature word, step counter.
const TRAVERSAL_WORKING_SET: usize = 3 * 8;

/// Lowers a trained tree to the five arrays with breadth-first numbering.
pub fn flatten(tree: &TrainedTree, granularity: Granularity) -> FlatTree {
    let mut order: Vec<usize> = Vec::with_capacity(tree.nodes.len());
    let mut new_id = vec![usize::MAX; tree.nodes.len()];
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(old) = queue.pop_front() {
        new_id[old] = order.len();
        order.push(old);
        let node = &tree.nodes[old];
        if node.leaf_value.is_none() {
            queue.push_back(node.left as usize);
            queue.push_back(node.right as usize);
        }
    }

    let n = order.len();
    let mut flat = FlatTree {
        children_left: Vec::with_capacity(n),
        children_right: Vec::with_capacity(n),
        feature: Vec::with_capacity(n),
        threshold: Vec::with_capacity(n),
        value: Vec::with_capacity(n),
        meta: TreeMeta {
            n_nodes: n,
            max_depth: tree.depth,
            n_features: tree.n_features,
            n_classes: tree.classes.len(),
            granularity,
            quantized: false,
        },
        raw_thresholds: Some(Vec::with_capacity(n)),
    };
    for &old in &order {
        let node = &tree.nodes[old];
        match node.leaf_value {
            Some(class) => {
                flat.children_left.push(-1);
                flat.children_right.push(-1);
                flat.feature.push(-1);
                flat.threshold.push(0);
                flat.value.push(class);
                flat.raw_thresholds.as_mut().unwrap().push(0.0);
            }
            None => {
                flat.children_left.push(new_id[node.left as usize] as i64);
                flat.children_right.push(new_id[node.right as usize] as i64);
                flat.feature.push(node.feature as i64);
                flat.threshold.push(0);
                flat.value.push(-1);
                flat.raw_thresholds.as_mut().unwrap().push(node.threshold);
            }
        }
    }
    flat
}

/// Floors every internal threshold to an integer, saturating into the
/// unsigned comparison domain, and drops the real thresholds.
pub fn quantize(mut flat: FlatTree) -> FlatTree {
    let raw = flat.raw_thresholds.take().unwrap_or_default();
    for (i, t) in raw.iter().enumerate() {
        if flat.children_left[i] >= 0 {
            let cutoff = if t.is_nan() || *t < 0.0 {
                0u64
            } else if *t >= 18446744073709551616.0 {
                u64::MAX
            } else {
                t.floor() as u64
            };
            flat.threshold[i] = cutoff as i64;
        }
    }
    flat.meta.quantized = true;
    flat
}

impl FlatTree {
    fn is_leaf(&self, node: usize) -> bool {
        self.children_left[node] == -1 && self.children_right[node] == -1
    }

    /// Verifier-style pre-check: consistent array lengths, forward-only
    /// child indices (termination), in-range features, and budget limits.
    pub fn validate(&self, budget: &EvalBudget) -> Result<(), TreeError> {
        let n = self.meta.n_nodes;
        for (name, len) in [
            ("children_left", self.children_left.len()),
            ("children_right", self.children_right.len()),
            ("feature", self.feature.len()),
            ("threshold", self.threshold.len()),
            ("value", self.value.len()),
        ] {
            if len != n {
                return Err(TreeError::ArrayLength(format!("{name} has {len} entries, meta says {n}")));
            }
        }
        if n == 0 {
            return Err(TreeError::Rejected("empty tree".into()));
        }
        if n > budget.max_nodes {
            return Err(TreeError::Rejected(format!("{n} nodes exceed budget {}", budget.max_nodes)));
        }
        if TRAVERSAL_WORKING_SET > budget.stack_bytes {
            return Err(TreeError::Rejected(format!(
                "traversal working set {TRAVERSAL_WORKING_SET} exceeds stack budget {}",
                budget.stack_bytes
            )));
        }

        let mut depth = vec![0usize; n];
        for node in 0..n {
            let (l, r) = (self.children_left[node], self.children_right[node]);
            if (l == -1) != (r == -1) {
                return Err(TreeError::Rejected(format!("node {node} is half leaf")));
            }
            if l == -1 {
                continue;
            }
            let f = self.feature[node];
            if f < 0 || f as usize >= self.meta.n_features {
                return Err(TreeError::Rejected(format!("node {node} splits on feature {f}")));
            }
            for child in [l, r] {
                if child <= node as i64 || child as usize >= n {
                    return Err(TreeError::Rejected(format!(
                        "node {node} child {child} is not strictly forward"
                    )));
                }
                depth[child as usize] = depth[node] + 1;
                if depth[child as usize] > budget.max_depth {
                    return Err(TreeError::Rejected(format!(
                        "depth {} exceeds budget {}",
                        depth[child as usize], budget.max_depth
                    )));
                }
            }
        }
        Ok(())
    }

    /// Iterative traversal over the quantized arrays: go left iff
    /// `x[feature] <= threshold`, comparing in the unsigned domain. O(1)
    /// working memory, at most `max_steps` node visits.
    pub fn predict(&self, words: &[u64], budget: &EvalBudget) -> Result<i64, TreeError> {
        if !self.meta.quantized {
            return Err(TreeError::NotQuantized);
        }
        if words.len() != self.meta.n_features {
            return Err(TreeError::FeatureLength { expected: self.meta.n_features, found: words.len() });
        }
        let mut node = 0usize;
        for _ in 0..budget.max_steps.max(budget.max_depth + 1) {
            if node >= self.meta.n_nodes {
                return Err(TreeError::Rejected(format!("node index {node} out of bounds")));
            }
            if self.is_leaf(node) {
                return Ok(self.value[node]);
            }
            let f = self.feature[node] as usize;
            let cutoff = self.threshold[node] as u64;
            node = if words[f] <= cutoff {
                self.children_left[node] as usize
            } else {
                self.children_right[node] as usize
            };
        }
        Err(TreeError::BudgetExceeded(format!(
            "no leaf reached within {} steps",
            budget.max_steps.max(budget.max_depth + 1)
        )))
    }
}

/// Writes a model as `.o2cmodel.json`.
pub fn save_model(flat: &FlatTree, path: &Path) -> Result<(), TreeError> {
    fs::write(path, serde_json::to_string_pretty(flat)?)?;
    Ok(())
}

/// Loads and structurally validates a model file (array lengths only; the
/// budget pre-check runs separately at evaluator setup).
pub fn load_model(path: &Path) -> Result<FlatTree, TreeError> {
    let text = fs::read_to_string(path)?;
    let flat: FlatTree = serde_json::from_str(&text)?;
    let n = flat.meta.n_nodes;
    for (name, len) in [
        ("children_left", flat.children_left.len()),
        ("children_right", flat.children_right.len()),
        ("feature", flat.feature.len()),
        ("threshold", flat.threshold.len()),
        ("value", flat.value.len()),
    ] {
        if len != n {
            return Err(TreeError::ArrayLength(format!("{name} has {len} entries, meta says {n}")));
        }
    }
    Ok(flat)
}
