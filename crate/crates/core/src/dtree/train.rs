//! CART training with Gini impurity over integer features.
//!
//! All comparisons are `x <= threshold`. Candidate thresholds are midpoints
//! between consecutive distinct sorted feature values; since features are
//! integers, a midpoint and its floor route samples identically, which is
//! what later makes integer quantization lossless.
//!
//! Training is a pure function of (data, params): ties resolve to the
//! lowest feature index, then the smallest threshold; leaf-label ties to
//! the lowest class id.

use std::collections::BTreeMap;

use super::features::FeatureVector;
use super::TreeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Gini,
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub criterion: Criterion,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { max_depth: 14, min_samples_split: 2, criterion: Criterion::Gini }
    }
}

/// Training-time node; leaves carry a class, internal nodes a real split.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: i64,
    pub right: i64,
    pub leaf_value: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct TrainedTree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub classes: Vec<i64>,
    pub depth: usize,
}

/// Exact `x <= t` for a u64 against a real threshold. Converting `x` to f64
/// would lose precision above 2^53; flooring `t` instead is exact because
/// every finite f64 in [2^53, 2^64) is already an integer.
pub(crate) fn u64_le_f64(x: u64, t: f64) -> bool {
    if t.is_nan() || t < 0.0 {
        return false;
    }
    if t >= 18446744073709551616.0 {
        return true;
    }
    x <= t.floor() as u64
}

fn exact_floor_u64(t: f64) -> Option<u64> {
    if t.is_nan() || t < 0.0 {
        return None;
    }
    if t >= 18446744073709551616.0 {
        return Some(u64::MAX);
    }
    Some(t.floor() as u64)
}

impl TrainedTree {
    /// Real-threshold prediction (the pre-quantization route).
    pub fn predict_real(&self, words: &[u64]) -> i64 {
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if let Some(class) = n.leaf_value {
                return class;
            }
            node = if u64_le_f64(words[n.feature], n.threshold) { n.left as usize } else { n.right as usize };
        }
    }
}

struct Builder<'a> {
    data: &'a [FeatureVector],
    class_index: BTreeMap<i64, usize>,
    classes: Vec<i64>,
    params: &'a TrainParams,
    nodes: Vec<TreeNode>,
    depth_seen: usize,
}

impl<'a> Builder<'a> {
    fn leaf(&mut self, counts: &[usize]) -> i64 {
        // Majority class; ties break to the lowest class id.
        let mut best = 0usize;
        for (i, c) in counts.iter().enumerate() {
            if *c > counts[best] {
                best = i;
            }
        }
        let id = self.nodes.len() as i64;
        self.nodes.push(TreeNode {
            feature: 0,
            threshold: 0.0,
            left: -1,
            right: -1,
            leaf_value: Some(self.classes[best]),
        });
        id
    }

    fn counts_of(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for &i in idx {
            counts[self.class_index[&self.data[i].label]] += 1;
        }
        counts
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> i64 {
        self.depth_seen = self.depth_seen.max(depth);
        let counts = self.counts_of(&idx);
        let n = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < self.params.min_samples_split {
            return self.leaf(&counts);
        }

        // Maximizing sum(count_c^2)/n over both sides is equivalent to
        // minimizing weighted Gini impurity. Zero-gain splits are legal;
        // growth stops only at purity, depth, or sample-count limits.
        let mut best: Option<(usize, f64, u64, f64)> = None; // (feature, threshold, cutoff, score)

        let n_features = self.data[idx[0]].words.len();
        let mut column: Vec<(u64, usize)> = Vec::with_capacity(n);
        for feature in 0..n_features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data[i].words[feature], self.class_index[&self.data[i].label])));
            column.sort_unstable();

            let mut left_counts = vec![0usize; self.classes.len()];
            let mut sq_left = 0f64;
            let mut sq_right: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
            let mut right_counts = counts.clone();
            for i in 0..n - 1 {
                let (value, class) = column[i];
                sq_left += (2 * left_counts[class] + 1) as f64;
                left_counts[class] += 1;
                sq_right -= (2 * right_counts[class] - 1) as f64;
                right_counts[class] -= 1;
                let next = column[i + 1].0;
                if value == next {
                    continue;
                }
                let threshold = value as f64 / 2.0 + next as f64 / 2.0;
                // Skip candidates whose floored threshold fails to separate
                // the two values (possible for astronomically close f64s).
                match exact_floor_u64(threshold) {
                    Some(cutoff) if cutoff >= value && cutoff < next => {
                        let nl = (i + 1) as f64;
                        let nr = (n - i - 1) as f64;
                        let score = sq_left / nl + sq_right / nr;
                        if best.map_or(true, |(_, _, _, s)| score > s) {
                            best = Some((feature, threshold, cutoff, score));
                        }
                    }
                    _ => {}
                }
            }
        }

        match best {
            Some((feature, threshold, cutoff, _score)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| self.data[i].words[feature] <= cutoff);
                let id = self.nodes.len() as i64;
                self.nodes.push(TreeNode { feature, threshold, left: -1, right: -1, leaf_value: None });
                let left = self.grow(left_idx, depth + 1);
                let right = self.grow(right_idx, depth + 1);
                let node = &mut self.nodes[id as usize];
                node.left = left;
                node.right = right;
                id
            }
            _ => self.leaf(&counts),
        }
    }
}

/// Trains a CART classifier. A dataset with one class (or fewer than two
/// samples) collapses to a single leaf; an empty dataset is an error.
pub fn train(data: &[FeatureVector], params: &TrainParams) -> Result<TrainedTree, TreeError> {
    if data.is_empty() {
        return Err(TreeError::EmptyDataset);
    }
    let n_features = data[0].words.len();
    for fv in data {
        if fv.words.len() != n_features {
            return Err(TreeError::FeatureLength { expected: n_features, found: fv.words.len() });
        }
    }
    let mut classes: Vec<i64> = data.iter().map(|d| d.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();

    let mut b = Builder {
        data,
        class_index,
        classes: classes.clone(),
        params,
        nodes: Vec::new(),
        depth_seen: 0,
    };
    let root = b.grow((0..data.len()).collect(), 0);
    debug_assert_eq!(root, 0);
    Ok(TrainedTree { nodes: b.nodes, n_features, classes, depth: b.depth_seen })
}
