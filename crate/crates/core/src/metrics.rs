//! Binary classification metrics: ROC-AUC, average precision, and the best
//! achievable min(recall, precision).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric needs at least one positive example")]
    NoPositives,
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("non-finite score")]
    NonFinite,
}

/// Scores paired with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self { scores, labels })
    }

    pub fn from_u8(scores: Vec<f64>, labels: &[u8]) -> Result<Self, MetricError> {
        Self::new(scores, labels.iter().map(|&l| l == 1).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Indices sorted by descending score, ties by original index.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

/// Mann–Whitney statistic: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, via average ranks.
pub fn roc_auc(scored: &ScoredLabels) -> Result<f64, MetricError> {
    let n_pos = scored.positives();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored.scores[a].total_cmp(&scored.scores[b]));
    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scored.scores[idx[j + 1]] == scored.scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| scored.labels[k]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank in descending-score order.
pub fn pr_auc(scored: &ScoredLabels) -> Result<f64, MetricError> {
    let n_pos = scored.positives();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in scored.descending().iter().enumerate() {
        if scored.labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Maximum over thresholds `t` (each distinct score) of
/// `min(recall, precision)` when predicting positive for `score ≥ t`.
pub fn min_re_pr(scored: &ScoredLabels) -> Result<f64, MetricError> {
    let n_pos = scored.positives();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let order = scored.descending();
    let mut best = 0.0f64;
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scored.scores[order[i]];
        while i < order.len() && scored.scores[order[i]] == s {
            predicted += 1;
            if scored.labels[order[i]] {
                tp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / predicted as f64;
        best = best.max(recall.min(precision));
    }
    Ok(best)
}

/// The three reported metrics for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub min_re_pr: f64,
}

impl MetricSet {
    pub fn compute(scored: &ScoredLabels) -> Result<Self, MetricError> {
        Ok(Self {
            roc_auc: roc_auc(scored)?,
            pr_auc: pr_auc(scored)?,
            min_re_pr: min_re_pr(scored)?,
        })
    }
}
