//! Sequence-level detection metrics: rank-based AUROC (ties count half) and
//! the best F1 over all score thresholds.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("scores and labels differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metric undefined: needs at least one positive and one negative")]
    SingleClass,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Parallel anomaly scores and binary labels.
#[derive(Clone, Debug)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFiniteScore(i));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Area under the ROC curve via average ranks (Mann-Whitney), with tied
/// scores contributing one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let (pos, neg) = s.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let n = s.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[a].partial_cmp(&s.scores[b]).unwrap());
    // average ranks over tie groups, 1-based
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            rank[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&i| s.labels[i] == 1).map(|i| rank[i]).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Maximum F1 over thresholds at each distinct score, predicting anomalous
/// iff `score >= threshold`.
///
/// Needs at least one positive label (otherwise recall is undefined); an
/// all-positive set is fine and scores 1.0 at the lowest threshold.
pub fn best_f1(s: &ScoredSet) -> Result<f64> {
    let (pos, _neg) = s.class_counts();
    if pos == 0 {
        return Err(MetricError::SingleClass);
    }
    let n = s.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    // descending by score
    order.sort_by(|&a, &b| s.scores[b].partial_cmp(&s.scores[a]).unwrap());
    let mut best = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < n {
        // consume the whole tie group: threshold sits at this score
        let mut j = i;
        while j < n && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let fn_ = pos - tp;
        let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64);
        best = best.max(f1);
        i = j;
    }
    Ok(best)
}
