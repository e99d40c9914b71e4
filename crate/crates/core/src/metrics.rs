//! Evaluation: explained variance, tensor reconstruction error and
//! permutation-aligned segmentation accuracy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SaltError};
use crate::tensor::Tensor3;

/// Largest state count accepted by the exhaustive alignment search.
pub const MAX_ALIGN_STATES: usize = 10;

/// Summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_frame_loglik: f64,
    pub explained_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tensor_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seg_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<Vec<Vec<u64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub permutation: Option<Vec<usize>>,
}

/// `1 - ‖truth - pred‖² / ‖truth - mean(truth)‖²` with column means.
pub fn explained_variance(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return shape_err(format!("prediction is {:?}, truth {:?}", pred.shape(), truth.shape()));
    }
    if truth.nrows() == 0 {
        return Err(SaltError::InvalidInput("no frames to evaluate".into()));
    }
    let mut centered = 0.0;
    for c in 0..truth.ncols() {
        let col = truth.column(c);
        let m = col.mean();
        centered += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    if centered == 0.0 {
        return Err(SaltError::InvalidInput("truth is constant; explained variance is undefined".into()));
    }
    let resid = (truth - pred).norm_squared();
    Ok(1.0 - resid / centered)
}

/// Mean squared entrywise error between stacked per-state tensors, where
/// truth state `h` is compared with estimated state `perm[h]`.
pub fn tensor_mse(estimated: &[Tensor3], truth: &[Tensor3], perm: &[usize]) -> Result<f64> {
    if estimated.len() != truth.len() || perm.len() != truth.len() {
        return shape_err("state counts differ");
    }
    if !is_permutation(perm) {
        return Err(SaltError::InvalidInput("not a permutation".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (h, t) in truth.iter().enumerate() {
        let e = &estimated[perm[h]];
        if e.dims() != t.dims() {
            return shape_err(format!("tensor dims {:?} vs {:?}", e.dims(), t.dims()));
        }
        sum += e.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += t.data().len();
    }
    Ok(sum / count as f64)
}

/// Smallest [`tensor_mse`] over all state permutations.
pub fn best_tensor_mse(estimated: &[Tensor3], truth: &[Tensor3]) -> Result<(f64, Vec<usize>)> {
    let h = truth.len();
    if h > MAX_ALIGN_STATES {
        return Err(SaltError::Unsupported(format!("alignment over {h} states")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(h, |perm| {
        let v = tensor_mse(estimated, truth, perm)?;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, perm.to_vec()));
        }
        Ok(())
    })?;
    best.ok_or_else(|| SaltError::InvalidInput("no states".into()))
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

/// Visits all permutations of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        f(&p)?;
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return Ok(());
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Permutation `perm` maximizing `Σ_h confusion[h][perm[h]]`, where rows are
/// reference labels and columns predicted labels. Ties go to the
/// lexicographically smallest permutation.
pub fn align_states(confusion: &[Vec<u64>]) -> Result<Vec<usize>> {
    let h = confusion.len();
    if confusion.iter().any(|r| r.len() != h) {
        return shape_err("confusion matrix must be square");
    }
    if h > MAX_ALIGN_STATES {
        return Err(SaltError::Unsupported(format!(
            "exhaustive alignment supports at most {MAX_ALIGN_STATES} states, got {h}"
        )));
    }
    let mut best = (0u64, None::<Vec<usize>>);
    for_each_permutation(h, |perm| {
        let score: u64 = perm.iter().enumerate().map(|(r, &c)| confusion[r][c]).sum();
        if best.1.is_none() || score > best.0 {
            best = (score, Some(perm.to_vec()));
        }
        Ok(())
    })?;
    Ok(best.1.unwrap_or_default())
}

/// Accuracy after alignment, the confusion counts (reference-label rows) and
/// the aligning permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub permutation: Vec<usize>,
}

pub fn segmentation_accuracy(pred: &[usize], truth: &[usize]) -> Result<Segmentation> {
    if pred.len() != truth.len() {
        return shape_err(format!("{} predicted labels vs {} reference labels", pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(SaltError::InvalidInput("no labels".into()));
    }
    let h = pred.iter().chain(truth).copied().max().unwrap_or(0) + 1;
    let mut confusion = vec![vec![0u64; h]; h];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let permutation = align_states(&confusion)?;
    let hits: u64 = permutation.iter().enumerate().map(|(r, &c)| confusion[r][c]).sum();
    Ok(Segmentation {
        accuracy: hits as f64 / truth.len() as f64,
        confusion,
        permutation,
    })
}
