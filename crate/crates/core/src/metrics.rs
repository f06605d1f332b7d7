//! Ranking metrics over machine (positive) vs human (negative) scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} class is empty")]
    EmptyClass(&'static str),
    #[error("non-finite score")]
    NonFinite,
    #[error("n_bins must be >= 1")]
    ZeroBins,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    /// Machine-generated.
    pub positives: Vec<f64>,
    /// Human-written.
    pub negatives: Vec<f64>,
}

impl LabeledScores {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self { positives, negatives }
    }

    fn validate(&self) -> Result<(), MetricError> {
        if self.positives.is_empty() {
            return Err(MetricError::EmptyClass("positive"));
        }
        if self.negatives.is_empty() {
            return Err(MetricError::EmptyClass("negative"));
        }
        if self
            .positives
            .iter()
            .chain(&self.negatives)
            .any(|v| !v.is_finite())
        {
            return Err(MetricError::NonFinite);
        }
        Ok(())
    }

    /// All scores sorted descending, tagged `true` for positives.
    fn sorted_desc(&self) -> Vec<(f64, bool)> {
        let mut all: Vec<(f64, bool)> = self
            .positives
            .iter()
            .map(|&v| (v, true))
            .chain(self.negatives.iter().map(|&v| (v, false)))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        all
    }
}

/// Mann-Whitney AUROC: a positive ranked above a negative earns 1, a tie 1/2.
///
/// Sort-based, O(m log m). Credit is accumulated in half-units as an integer
/// so that the result is bit-identical to the pairwise definition.
pub fn auroc(scores: &LabeledScores) -> Result<f64, MetricError> {
    scores.validate()?;
    let all = scores.sorted_desc();
    let (n_pos, n_neg) = (scores.positives.len() as u64, scores.negatives.len() as u64);
    // Walk from the lowest score upwards, tracking negatives strictly below.
    let mut half_credit: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = all.len();
    while i > 0 {
        let v = all[i - 1].0;
        let mut j = i;
        let (mut pos_tied, mut neg_tied) = (0u64, 0u64);
        while j > 0 && all[j - 1].0 == v {
            if all[j - 1].1 {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
            j -= 1;
        }
        half_credit += pos_tied * (2 * neg_below + neg_tied);
        neg_below += neg_tied;
        i = j;
    }
    Ok(half_credit as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

/// Precision/recall at every distinct threshold (score >= threshold is
/// predicted machine), with step-wise average precision.
pub fn pr_curve(scores: &LabeledScores) -> Result<PrCurve, MetricError> {
    scores.validate()?;
    let all = scores.sorted_desc();
    let n_pos = scores.positives.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: v,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub positive_counts: Vec<usize>,
    pub negative_counts: Vec<usize>,
}

/// Shared equal-width bins over the combined range. Bins are right-open
/// except the last. A degenerate range is widened by 0.5 on each side.
pub fn histogram(scores: &LabeledScores, n_bins: usize) -> Result<Histogram, MetricError> {
    if n_bins == 0 {
        return Err(MetricError::ZeroBins);
    }
    let values = || scores.positives.iter().chain(&scores.negatives);
    if values().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (mut lo, mut hi) = values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    } else if lo == hi {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let bin_of = |v: f64| (((v - lo) / width).floor() as usize).min(n_bins - 1);
    let count = |xs: &[f64]| {
        let mut c = vec![0; n_bins];
        for &v in xs {
            c[bin_of(v)] += 1;
        }
        c
    };
    Ok(Histogram {
        positive_counts: count(&scores.positives),
        negative_counts: count(&scores.negatives),
        bin_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ls(p: &[f64], n: &[f64]) -> LabeledScores {
        LabeledScores::new(p.to_vec(), n.to_vec())
    }

    /// O(|P||N|) definition, in the same half-credit units.
    fn brute_auroc(s: &LabeledScores) -> f64 {
        let mut half = 0u64;
        for p in &s.positives {
            for n in &s.negatives {
                half += if p > n { 2 } else if p == n { 1 } else { 0 };
            }
        }
        half as f64 / (2 * s.positives.len() * s.negatives.len()) as f64
    }

    /// Exhaustive thresholds; returns average precision.
    fn brute_ap(s: &LabeledScores) -> f64 {
        let mut ts: Vec<f64> = s.positives.iter().chain(&s.negatives).copied().collect();
        ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ts.dedup();
        let mut ap = 0.0;
        let mut prev = 0.0;
        for t in ts {
            let tp = s.positives.iter().filter(|&&v| v >= t).count() as f64;
            let fp = s.negatives.iter().filter(|&&v| v >= t).count() as f64;
            let r = tp / s.positives.len() as f64;
            ap += (r - prev) * tp / (tp + fp);
            prev = r;
        }
        ap
    }

    #[test]
    fn auroc_hand_cases() {
        assert_eq!(auroc(&ls(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auroc(&ls(&[1.0], &[1.0])).unwrap(), 0.5);
        assert_eq!(auroc(&ls(&[3.0, 1.0], &[2.0, 0.0])).unwrap(), 0.75);
        assert_eq!(auroc(&ls(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), 0.5);
        assert_eq!(auroc(&ls(&[], &[1.0])), Err(MetricError::EmptyClass("positive")));
        assert_eq!(auroc(&ls(&[1.0], &[])), Err(MetricError::EmptyClass("negative")));
        assert_eq!(auroc(&ls(&[f64::NAN], &[1.0])), Err(MetricError::NonFinite));
    }

    #[test]
    fn auroc_equals_brute_force_on_small_random_instances() {
        let mut rng = crate::seed::stream(1);
        for _ in 0..2000 {
            let np = rng.random_range(1..15);
            let nn = rng.random_range(1..=(30 - np).min(15));
            // a coarse grid forces frequent ties
            let levels = rng.random_range(1..8);
            let mut draw = || rng.random_range(0..levels) as f64 * 0.5;
            let s = ls(&(0..np).map(|_| draw()).collect::<Vec<_>>(), &(0..nn).map(|_| draw()).collect::<Vec<_>>());
            assert_eq!(auroc(&s).unwrap(), brute_auroc(&s));
        }
    }

    #[test]
    fn pr_examples() {
        let c = pr_curve(&ls(&[2.0, 3.0], &[0.0, 1.0])).unwrap();
        assert_eq!(c.average_precision, 1.0);
        let c = pr_curve(&ls(&[1.0, 1.0, 1.0], &[1.0])).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.average_precision, 0.75);
        let mut rng = crate::seed::stream(9);
        for _ in 0..200 {
            let s = ls(
                &(0..10).map(|_| rng.random_range(0..6) as f64).collect::<Vec<_>>(),
                &(0..10).map(|_| rng.random_range(0..6) as f64).collect::<Vec<_>>(),
            );
            let c = pr_curve(&s).unwrap();
            assert!((c.average_precision - brute_ap(&s)).abs() < 1e-12);
            assert_eq!(c.points.last().unwrap().recall, 1.0);
        }
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&ls(&[0.0, 1.0], &[0.0, 1.0]), 2).unwrap();
        assert_eq!(h.positive_counts, vec![1, 1]);
        assert_eq!(h.negative_counts, vec![1, 1]);
        assert_eq!(h.bin_edges, vec![0.0, 0.5, 1.0]);

        let h = histogram(&ls(&[3.0], &[3.0]), 4).unwrap();
        assert_eq!(h.bin_edges.first(), Some(&2.5));
        assert_eq!(h.bin_edges.last(), Some(&3.5));
        let occupied = h
            .positive_counts
            .iter()
            .zip(&h.negative_counts)
            .filter(|(p, n)| **p + **n > 0)
            .count();
        assert_eq!(occupied, 1);
        assert_eq!(histogram(&ls(&[1.0], &[1.0]), 0), Err(MetricError::ZeroBins));
    }

    proptest! {
        #[test]
        fn auroc_symmetry_and_monotone_invariance(
            p in proptest::collection::vec(-5i32..5, 1..15),
            n in proptest::collection::vec(-5i32..5, 1..15),
        ) {
            let s = ls(&p.iter().map(|&v| v as f64).collect::<Vec<_>>(), &n.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let a = auroc(&s).unwrap();
            prop_assert_eq!(a, brute_auroc(&s));
            let flipped = LabeledScores::new(s.negatives.clone(), s.positives.clone());
            prop_assert_eq!(a + auroc(&flipped).unwrap(), 1.0);
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let t = LabeledScores::new(s.positives.iter().map(f).collect(), s.negatives.iter().map(f).collect());
            prop_assert_eq!(auroc(&t).unwrap(), a);
        }

        #[test]
        fn histogram_preserves_totals(
            p in proptest::collection::vec(-1e3f64..1e3, 0..50),
            n in proptest::collection::vec(-1e3f64..1e3, 0..50),
            bins in 1usize..30,
        ) {
            let h = histogram(&LabeledScores::new(p.clone(), n.clone()), bins).unwrap();
            prop_assert_eq!(h.positive_counts.iter().sum::<usize>(), p.len());
            prop_assert_eq!(h.negative_counts.iter().sum::<usize>(), n.len());
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
