//! Evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC is undefined without both classes ({n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores contain NaN")]
    NaN,
    #[error("nothing to aggregate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Mann-Whitney area under the ROC curve, ties credited one half.
///
/// Computed from mid-ranks in `O(m log m)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::NaN);
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass { n_pos, n_neg });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based) mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Test-set evaluation of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auroc: f64,
    pub accuracy: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

/// AUROC and accuracy at probability 0.5 (logit 0) from raw logits.
pub fn evaluate(logits: &[f64], labels: &[u8], seed: u64) -> Result<EvalResult> {
    let auroc = auroc(logits, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|&(&z, &y)| u8::from(z >= 0.0) == y)
        .count();
    Ok(EvalResult {
        auroc,
        accuracy: correct as f64 / labels.len() as f64,
        n_pos,
        n_neg: labels.len() - n_pos,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate(results: &[EvalResult]) -> Result<Aggregate> {
    let values: Vec<f64> = results.iter().map(|r| r.auroc).collect();
    mean_std(&values)
}

pub fn mean_std(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.iter().all(|&v| v == values[0]) {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Aggregate {
        mean,
        std,
        runs: values.len(),
    })
}
