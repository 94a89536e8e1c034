//! Per-impression ranking metrics over binary click labels.

use serde::{Deserialize, Serialize};

/// Candidate indices ordered by descending score; ties keep input order.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable, so equal scores stay in input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Fraction of (positive, negative) pairs ordered correctly, ties 0.5.
/// `None` without at least one of each label.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut pos, mut neg) = (0u64, 0u64);
    // rank-sum over tie groups: every positive beats all negatives below its
    // group and half of those within it
    let mut wins = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let group_pos = idx[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let group_neg = (j - i) as u64 - group_pos;
        wins += group_pos as f64 * (neg as f64 + 0.5 * group_neg as f64);
        pos += group_pos;
        neg += group_neg;
        i = j;
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(wins / (pos as f64 * neg as f64))
}

/// Mean reciprocal 1-based rank of the positives.
pub fn mrr(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let order = rank_order(scores);
    let ranks: Vec<f64> = order
        .iter()
        .enumerate()
        .filter(|(_, &k)| labels[k])
        .map(|(r, _)| 1.0 / (r + 1) as f64)
        .collect();
    if ranks.is_empty() {
        return None;
    }
    Some(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

/// Binary-relevance nDCG@k; the ideal DCG covers `min(|positives|, k)` hits.
pub fn ndcg_at_k(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || k == 0 {
        return None;
    }
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = rank_order(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &c)| labels[c])
        .map(|(i, _)| gain(i))
        .sum();
    let ideal: f64 = (0..positives.min(k)).map(gain).sum();
    Some(dcg / ideal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl ImpressionMetrics {
    /// All four metrics, or `None` for a single-class impression.
    pub fn compute(scores: &[f64], labels: &[bool]) -> Option<Self> {
        Some(ImpressionMetrics {
            auc: auc(scores, labels)?,
            mrr: mrr(scores, labels)?,
            ndcg5: ndcg_at_k(scores, labels, 5)?,
            ndcg10: ndcg_at_k(scores, labels, 10)?,
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [self.auc, self.mrr, self.ndcg5, self.ndcg10]
    }

    pub const NAMES: [&'static str; 4] = ["AUC", "MRR", "nDCG@5", "nDCG@10"];
}
