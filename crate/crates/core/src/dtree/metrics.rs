//! Stratified k-fold cross-validation with accuracy and Macro F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::flat::{flatten, quantize, EvalBudget, Granularity};
use super::train::{train, TrainParams};
use super::TreeError;
use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub test_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    /// Classes with fewer samples than folds stay in every training fold
    /// and are excluded from test metrics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Macro F1 from a confusion matrix laid out `confusion[truth][predicted]`.
/// Classes without any truth or predicted instances contribute 0.
pub fn macro_f1_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let k = confusion.len();
    let mut sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c];
        let fn_: usize = (0..k).filter(|&j| j != c).map(|j| confusion[c][j]).sum();
        let fp: usize = (0..k).filter(|&i| i != c).map(|i| confusion[i][c]).sum();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    sum / k as f64
}

/// Deterministic stratified fold assignment: per class, indices are
/// seed-shuffled and dealt round-robin across folds. Indices of classes
/// with fewer than `k` samples map to `usize::MAX` (always train).
pub fn stratified_fold_assignment(
    data: &[FeatureVector],
    k: usize,
    seed: u64,
) -> (Vec<usize>, Vec<String>) {
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, fv) in data.iter().enumerate() {
        by_class.entry(fv.label).or_default().push(i);
    }
    let mut fold_of = vec![usize::MAX; data.len()]; // MAX = always-train
    let mut warnings = Vec::new();
    let mut rng = XorShift64Star::new(seed);
    for (class, mut idx) in by_class {
        if idx.len() < k {
            warnings.push(format!(
                "class {class} has {} samples (< {k} folds); kept in every training fold",
                idx.len()
            ));
            continue;
        }
        // Fisher-Yates with the pinned generator.
        for i in (1..idx.len()).rev() {
            let j = rng.below((i + 1) as u64) as usize;
            idx.swap(i, j);
        }
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    (fold_of, warnings)
}

/// Runs stratified k-fold CV, reporting accuracy and Macro F1 as mean +/-
/// std over folds. Per-fold Macro F1 averages over the classes eligible for
/// testing (those with at least `k` samples).
pub fn cross_validate(
    data: &[FeatureVector],
    params: &TrainParams,
    k: usize,
    seed: u64,
) -> Result<CvReport, TreeError> {
    if k < 2 || data.len() < k {
        return Err(TreeError::TooFewSamples { samples: data.len(), folds: k });
    }
    let (fold_of, warnings) = stratified_fold_assignment(data, k, seed);

    let mut eligible: Vec<i64> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| fold_of[*i] != usize::MAX)
        .map(|(_, fv)| fv.label)
        .collect();
    eligible.sort_unstable();
    eligible.dedup();
    if eligible.is_empty() {
        return Err(TreeError::TooFewSamples { samples: 0, folds: k });
    }
    let class_pos: BTreeMap<i64, usize> = eligible.iter().enumerate().map(|(p, c)| (*c, p)).collect();

    let budget = EvalBudget { max_depth: params.max_depth, ..EvalBudget::default() };
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let train_set: Vec<FeatureVector> = data
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] != fold)
            .map(|(_, fv)| fv.clone())
            .collect();
        let tree = train(&train_set, params)?;
        let flat = quantize(flatten(&tree, Granularity::Type));
        flat.validate(&budget)?;

        let mut confusion = vec![vec![0usize; eligible.len()]; eligible.len()];
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, fv) in data.iter().enumerate() {
            if fold_of[i] != fold {
                continue;
            }
            let predicted = flat.predict(&fv.words, &budget)?;
            total += 1;
            if predicted == fv.label {
                correct += 1;
            }
            if let (Some(&t), Some(&p)) = (class_pos.get(&fv.label), class_pos.get(&predicted)) {
                confusion[t][p] += 1;
            }
        }
        folds.push(FoldMetrics {
            fold,
            accuracy: correct as f64 / total as f64,
            macro_f1: macro_f1_from_confusion(&confusion),
            test_size: total,
        });
    }

    let (accuracy_mean, accuracy_std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    let (macro_f1_mean, macro_f1_std) = mean_std(&folds.iter().map(|f| f.macro_f1).collect::<Vec<_>>());
    Ok(CvReport { folds, accuracy_mean, accuracy_std, macro_f1_mean, macro_f1_std, warnings })
}
