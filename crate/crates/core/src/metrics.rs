//! Classification metrics and the credibility-rating curve.
//!
//! The stable outcome (label 1) is the positive class. Rates with an
//! empty denominator are reported as 0 with the matching flag set rather
//! than NaN, so reports stay machine-readable.

use alloc::vec::Vec;

/// Confusion counts plus the derived rates, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub f1: f64,
    pub tnr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Set when the corresponding rate had an empty denominator.
    pub undefined_tpr: bool,
    pub undefined_tnr: bool,
    pub undefined_f1: bool,
}

/// Confusion counts and rates for paired label/prediction vectors.
pub fn compute_metrics(labels: &[u8], predictions: &[u8]) -> Metrics {
    assert_eq!(labels.len(), predictions.len(), "length mismatch");
    assert!(!labels.is_empty(), "need at least one sample");
    let mut tp = 0;
    let mut tn = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => panic!("labels must be 0 or 1"),
        }
    }
    let total = (tp + tn + fp + fn_) as f64;
    let rate = |num: usize, den: usize| -> (f64, bool) {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (tpr, undefined_tpr) = rate(tp, tp + fn_);
    let (tnr, undefined_tnr) = rate(tn, tn + fp);
    let (f1, undefined_f1) = rate(2 * tp, 2 * tp + fp + fn_);
    Metrics {
        acc: (tp + tn) as f64 / total,
        f1,
        tnr,
        tpr,
        tp,
        tn,
        fp,
        fn_,
        undefined_tpr,
        undefined_tnr,
        undefined_f1,
    }
}

/// Credibility rating over a threshold grid: the fraction of correctly
/// classified samples whose softmax margin meets each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CrCurve {
    pub thresholds: Vec<f64>,
    pub cr: Vec<f64>,
}

impl CrCurve {
    /// Largest threshold whose credibility rating is at least `target`;
    /// `None` when even `cr(0)` falls short (cannot happen on a curve
    /// built by [`cr_curve_from_predictions`], where `cr(0) = 1`).
    pub fn threshold_for_cr(&self, target: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .zip(&self.cr)
            .filter(|(_, &c)| c >= target)
            .map(|(&t, _)| t)
            .fold(None, |best, t| Some(best.map_or(t, |b: f64| b.max(t))))
    }
}

/// Uniform grid of `points` thresholds covering `[0, 1]` inclusive.
pub fn threshold_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no correctly classified samples; credibility rating is undefined")]
pub struct NoCorrectPredictions;

/// CR from per-sample correctness and margins:
/// `cr(k) = |correct with margin >= k| / |correct|`.
pub fn cr_curve_from_predictions(
    correct: &[bool],
    margins: &[f64],
    thresholds: &[f64],
) -> Result<CrCurve, NoCorrectPredictions> {
    assert_eq!(correct.len(), margins.len());
    let mut correct_margins: Vec<f64> = correct
        .iter()
        .zip(margins)
        .filter(|(&c, _)| c)
        .map(|(_, &m)| m)
        .collect();
    if correct_margins.is_empty() {
        return Err(NoCorrectPredictions);
    }
    correct_margins.sort_by(f64::total_cmp);
    let n = correct_margins.len() as f64;
    let cr = thresholds
        .iter()
        .map(|&k| {
            // first index with margin >= k
            let pos = correct_margins.partition_point(|&m| m < k);
            (correct_margins.len() - pos) as f64 / n
        })
        .collect();
    Ok(CrCurve {
        thresholds: thresholds.to_vec(),
        cr,
    })
}
