//! Sample-level OOD metrics with unknown as the positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("ranking metrics need at least one unknown and one known sample")]
    SingleClass,
    #[error("no unknown samples")]
    NoPositives,
    #[error("scores must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryScoredSet {
    pub scores: Vec<f64>,
    pub is_unknown: Vec<bool>,
}

impl BinaryScoredSet {
    pub fn new(scores: Vec<f64>, is_unknown: Vec<bool>) -> Result<Self, MetricError> {
        if scores.len() != is_unknown.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: is_unknown.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self { scores, is_unknown })
    }

    pub fn positives(&self) -> usize {
        self.is_unknown.iter().filter(|&&u| u).count()
    }

    pub fn negatives(&self) -> usize {
        self.is_unknown.len() - self.positives()
    }

    fn require_both(&self) -> Result<(), MetricError> {
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(MetricError::SingleClass);
        }
        Ok(())
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Probability that a random unknown outscores a random known, ties at ½.
///
/// Computed from midranks: `U = Σ rank(unknown) − n₊(n₊+1)/2`. Ranks are
/// carried doubled so the sum stays integral.
pub fn auroc(b: &BinaryScoredSet) -> Result<f64, MetricError> {
    b.require_both()?;
    let n = b.scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| b.scores[x].total_cmp(&b.scores[y]));
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && b.scores[idx[j + 1]] == b.scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share midrank (i+j+2)/2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_tie = idx[i..=j].iter().filter(|&&k| b.is_unknown[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let np = b.positives() as u128;
    let nn = b.negatives() as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

/// Average precision: `Σ (R_i − R_{i−1}) · P_i` over distinct thresholds
/// in descending order, predicting unknown for `score ≥ threshold`.
pub fn aupr(b: &BinaryScoredSet) -> Result<f64, MetricError> {
    b.require_both()?;
    let idx = b.descending();
    let np = b.positives();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_tp = 0usize;
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = b.scores[idx[i]];
        while i < idx.len() && b.scores[idx[i]] == s {
            if b.is_unknown[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += pr_step(tp, fp, prev_tp, np);
        prev_tp = tp;
    }
    Ok(area)
}

/// One step of the average-precision sum; shared with test oracles so the
/// floating-point evaluation order is fixed.
pub fn pr_step(tp: usize, fp: usize, prev_tp: usize, positives: usize) -> f64 {
    let recall_gain = (tp - prev_tp) as f64 / positives as f64;
    let precision = tp as f64 / (tp + fp) as f64;
    recall_gain * precision
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FprAtRecall {
    pub fpr: f64,
    pub threshold: f64,
}

/// Known-sample rejection rate at the highest score threshold where the
/// unknown recall (`score ≥ threshold`) reaches `target`.
pub fn fpr_at_unknown_recall(b: &BinaryScoredSet, target: f64) -> Result<FprAtRecall, MetricError> {
    let np = b.positives();
    if np == 0 {
        return Err(MetricError::NoPositives);
    }
    let nn = b.negatives();
    let idx = b.descending();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let s = b.scores[idx[i]];
        while i < idx.len() && b.scores[idx[i]] == s {
            if b.is_unknown[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 / np as f64 >= target {
            let fpr = if nn == 0 { 0.0 } else { fp as f64 / nn as f64 };
            return Ok(FprAtRecall { fpr, threshold: s });
        }
    }
    // target above 1: every sample is rejected at the lowest score
    let lowest = b.scores[*idx.last().expect("np > 0")];
    Ok(FprAtRecall {
        fpr: if nn == 0 { 0.0 } else { 1.0 },
        threshold: lowest,
    })
}

/// Confusion counts at a threshold, unknown = positive, `score > t` → unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub known_recall: f64,
    pub unknown_recall: f64,
    pub detection_f1: f64,
    pub youden: f64,
}

impl ThresholdedConfusion {
    /// Derives the rates. Rates with an empty denominator are 0; F1 with no
    /// predicted positives is 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let known_recall = ratio(tn, tn + fp);
        let unknown_recall = ratio(tp, tp + fn_);
        let detection_f1 = if tp + fp == 0 { 0.0 } else { ratio(2 * tp, 2 * tp + fp + fn_) };
        Self {
            tp,
            fp,
            tn,
            fn_,
            known_recall,
            unknown_recall,
            detection_f1,
            youden: known_recall + unknown_recall - 1.0,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_at(b: &BinaryScoredSet, threshold: f64) -> ThresholdedConfusion {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &u) in b.scores.iter().zip(&b.is_unknown) {
        match (s > threshold, u) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    ThresholdedConfusion::from_counts(tp, fp, tn, fn_)
}

/// Pre-sorted scores for repeated confusion queries in `O(log n)`.
#[derive(Debug, Clone)]
pub struct SortedScores {
    known: Vec<f64>,
    unknown: Vec<f64>,
}

impl SortedScores {
    pub fn new(b: &BinaryScoredSet) -> Self {
        let mut known = Vec::new();
        let mut unknown = Vec::new();
        for (&s, &u) in b.scores.iter().zip(&b.is_unknown) {
            if u {
                unknown.push(s);
            } else {
                known.push(s);
            }
        }
        known.sort_by(f64::total_cmp);
        unknown.sort_by(f64::total_cmp);
        Self { known, unknown }
    }

    pub fn confusion_at(&self, threshold: f64) -> ThresholdedConfusion {
        let above = |v: &[f64]| v.len() - v.partition_point(|&s| s <= threshold);
        let tp = above(&self.unknown);
        let fp = above(&self.known);
        ThresholdedConfusion::from_counts(tp, fp, self.known.len() - fp, self.unknown.len() - tp)
    }

    pub fn num_known(&self) -> usize {
        self.known.len()
    }

    pub fn num_unknown(&self) -> usize {
        self.unknown.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], unk: &[bool]) -> BinaryScoredSet {
        BinaryScoredSet::new(scores.to_vec(), unk.to_vec()).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let b = set(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]);
        assert_eq!(auroc(&b).unwrap(), 1.0);
        assert_eq!(aupr(&b).unwrap(), 1.0);
        let f = fpr_at_unknown_recall(&b, 0.95).unwrap();
        assert_eq!(f.fpr, 0.0);
        assert_eq!(f.threshold, 0.8);
    }

    #[test]
    fn all_ties() {
        let b = set(&[0.5; 6], &[false, true, false, true, true, false]);
        assert_eq!(auroc(&b).unwrap(), 0.5);
        assert_eq!(fpr_at_unknown_recall(&b, 0.95).unwrap().fpr, 1.0);
    }

    #[test]
    fn top_positive_gives_precision_one_first() {
        let b = set(&[0.9, 0.5, 0.4, 0.3], &[true, false, false, false]);
        assert_eq!(aupr(&b).unwrap(), 1.0);
        let b = set(&[0.9, 0.5, 0.4, 0.3], &[true, false, true, false]);
        // steps: R 0.5 @ P 1, R 1.0 @ P 2/3
        assert!((aupr(&b).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn single_class_errors() {
        let b = set(&[0.1, 0.2], &[true, true]);
        assert_eq!(auroc(&b), Err(MetricError::SingleClass));
        assert_eq!(aupr(&b), Err(MetricError::SingleClass));
        let b = set(&[0.1, 0.2], &[false, false]);
        assert_eq!(fpr_at_unknown_recall(&b, 0.95), Err(MetricError::NoPositives));
    }

    #[test]
    fn construction_checks() {
        assert!(BinaryScoredSet::new(vec![0.0], vec![]).is_err());
        assert_eq!(
            BinaryScoredSet::new(vec![f64::NAN], vec![true]),
            Err(MetricError::NonFinite)
        );
    }

    #[test]
    fn extreme_thresholds() {
        let b = set(&[0.1, 0.4, 0.6, 0.9], &[false, true, false, true]);
        let low = confusion_at(&b, 0.0);
        assert_eq!(low.known_recall, 0.0);
        assert_eq!(low.unknown_recall, 1.0);
        let high = confusion_at(&b, 1.0);
        assert_eq!(high.unknown_recall, 0.0);
        assert_eq!(high.known_recall, 1.0);
        assert_eq!(high.detection_f1, 0.0);
    }

    #[test]
    fn ties_at_threshold_stay_known() {
        let b = set(&[0.5, 0.5], &[true, false]);
        let c = confusion_at(&b, 0.5);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (0, 0, 1, 1));
    }

    #[test]
    fn ten_sample_enumeration() {
        let scores = [0.05, 0.1, 0.2, 0.3, 0.35, 0.5, 0.55, 0.7, 0.8, 0.95];
        let unk = [false, false, true, false, false, true, false, true, true, true];
        let c = confusion_at(&set(&scores, &unk), 0.4);
        // above 0.4: 0.5u 0.55k 0.7u 0.8u 0.95u ; at/below: 0.05k 0.1k 0.2u 0.3k 0.35k
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (4, 1, 4, 1));
        assert_eq!(c.known_recall, 0.8);
        assert_eq!(c.unknown_recall, 0.8);
        assert_eq!(c.detection_f1, 0.8);
        assert!((c.youden - 0.6).abs() < 1e-15);
        assert_eq!(c.total(), 10);
    }

    #[test]
    fn sorted_scores_match_direct() {
        let scores = [0.05, 0.1, 0.2, 0.3, 0.35, 0.5, 0.55, 0.7, 0.8, 0.95, 0.5];
        let unk = [false, false, true, false, false, true, false, true, true, true, false];
        let b = set(&scores, &unk);
        let sorted = SortedScores::new(&b);
        for t in [-1.0, 0.0, 0.1, 0.3, 0.5, 0.52, 0.95, 2.0] {
            assert_eq!(sorted.confusion_at(t), confusion_at(&b, t));
        }
    }
}
