//! Evaluation metrics: clustering accuracy under the best label
//! permutation, signature approximation error ratios, and Laplacian
//! distortion between exact and signature-lifted kernels.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dc2::{approximation_mse, SignatureSet};
use crate::error::{Error, Result};
use crate::rpfkernel::KernelMatrix;
use crate::spectral::laplacian_difference;

/// Largest label count solved by enumerating permutations.
pub const EXHAUSTIVE_MAX_LABELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMethod {
    Exhaustive,
    Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    /// `best_permutation[t - 1]` is the predicted label matched to true label `t`.
    pub best_permutation: Vec<usize>,
    pub method: AccuracyMethod,
}

/// `l x l` counts: `table[t][p]` points with true label `t+1` and predicted `p+1`.
fn contingency(truth: &[usize], predicted: &[usize]) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "label vectors differ in length: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no labels to compare"));
    }
    if truth.iter().chain(predicted).any(|&l| l == 0) {
        return Err(Error::invalid("labels must be in 1..=l"));
    }
    let l = truth.iter().chain(predicted).copied().max().unwrap();
    let mut table = vec![vec![0u64; l]; l];
    for (&t, &p) in truth.iter().zip(predicted) {
        table[t - 1][p - 1] += 1;
    }
    Ok(table)
}

fn best_by_enumeration(table: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let l = table.len();
    let mut perm: Vec<usize> = (0..l).collect();
    let mut best = (0u64, perm.clone());
    let mut first = true;
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; l];
    let mut score = |perm: &[usize], best: &mut (u64, Vec<usize>)| {
        let s: u64 = perm.iter().enumerate().map(|(t, &p)| table[t][p]).sum();
        if first || s > best.0 {
            *best = (s, perm.to_vec());
            first = false;
        }
    };
    score(&perm, &mut best);
    let mut i = 0;
    while i < l {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            score(&perm, &mut best);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Maximum-weight perfect matching on a square table (Hungarian method,
/// potentials formulation). Returns the matched column of every row.
fn best_by_assignment(table: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let n = table.len();
    let max = table.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| max - table[i][j] as i64;
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let score = assignment.iter().enumerate().map(|(t, &p)| table[t][p]).sum();
    (score, assignment)
}

/// Fraction of points whose predicted label matches the true label under
/// the best one-to-one relabeling. Label sets of different sizes are padded
/// to a common `1..=l`.
pub fn clustering_accuracy(truth: &[usize], predicted: &[usize]) -> Result<AccuracyReport> {
    let method = match truth.iter().chain(predicted).copied().max() {
        Some(l) if l > EXHAUSTIVE_MAX_LABELS => AccuracyMethod::Assignment,
        _ => AccuracyMethod::Exhaustive,
    };
    clustering_accuracy_with(truth, predicted, method)
}

/// [`clustering_accuracy`] with an explicit solver.
pub fn clustering_accuracy_with(
    truth: &[usize],
    predicted: &[usize],
    method: AccuracyMethod,
) -> Result<AccuracyReport> {
    let table = contingency(truth, predicted)?;
    let (hits, perm) = match method {
        AccuracyMethod::Exhaustive => best_by_enumeration(&table),
        AccuracyMethod::Assignment => best_by_assignment(&table),
    };
    Ok(AccuracyReport {
        accuracy: hits as f64 / truth.len() as f64,
        best_permutation: perm.into_iter().map(|p| p + 1).collect(),
        method,
    })
}

/// `MSE(sampling) / MSE(projection)`. Infinite when only the denominator
/// vanishes and 1 when both do.
pub fn mse_ratio(points: &ArrayView2<f64>, sampling: &SignatureSet, projection: &SignatureSet) -> Result<f64> {
    let num = approximation_mse(points, sampling)?;
    let den = approximation_mse(points, projection)?;
    Ok(match (num == 0.0, den == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => num / den,
    })
}

/// Frobenius distance between the Laplacians of the exact kernel and the
/// kernel evaluated on signature-lifted points. Dense `n x n`; meant for
/// small diagnostic runs.
pub fn laplacian_distortion(full: &KernelMatrix, lifted: &KernelMatrix) -> Result<f64> {
    if full.size() != lifted.size() {
        return Err(Error::invalid(format!(
            "kernel sizes differ: {} vs {}",
            full.size(),
            lifted.size()
        )));
    }
    laplacian_difference(&full.values.view(), &lifted.values.view())
}
