//! ROC/AUC, EER, precision-recall/AP and the threshold cross-validation
//! protocol.
//!
//! Conventions shared by every function here: a threshold `t` classifies a
//! score `s` as positive when `s >= t`; candidate thresholds are `-inf`, the
//! midpoints between adjacent distinct scores, and `+inf`; ties between
//! equally good thresholds go to the lowest one.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// JSON has no infinities; `±inf` thresholds are written as the strings
/// `"inf"` and `"-inf"`.
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            x => s.serialize_f64(x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!(
                "expected a number, \"inf\" or \"-inf\", got \"{t}\""
            ))),
        }
    }
}

/// Anything carrying a score and a binary ground-truth label.
pub trait Scored {
    fn score(&self) -> f64;
    fn is_positive(&self) -> bool;
}

impl Scored for (f64, bool) {
    fn score(&self) -> f64 {
        self.0
    }
    fn is_positive(&self) -> bool {
        self.1
    }
}

impl<T: Scored> Scored for &T {
    fn score(&self) -> f64 {
        (**self).score()
    }
    fn is_positive(&self) -> bool {
        (**self).is_positive()
    }
}

/// Scores grouped by distinct value in ascending order, with per-group
/// positive and negative counts.
struct Groups {
    scores: Vec<f64>,
    pos: Vec<u64>,
    neg: Vec<u64>,
    total_pos: u64,
    total_neg: u64,
}

impl Groups {
    fn build<T: Scored>(items: &[T]) -> Result<Groups> {
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(items.len());
        for it in items {
            let s = it.score();
            if !s.is_finite() {
                return Err(Error::validation(format!("non-finite score {s}")));
            }
            sorted.push((s, it.is_positive()));
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut g = Groups {
            scores: Vec::new(),
            pos: Vec::new(),
            neg: Vec::new(),
            total_pos: 0,
            total_neg: 0,
        };
        for (s, positive) in sorted {
            // -0.0 and 0.0 are one score.
            if g.scores.last() != Some(&s) {
                g.scores.push(s);
                g.pos.push(0);
                g.neg.push(0);
            }
            let last = g.scores.len() - 1;
            if positive {
                g.pos[last] += 1;
                g.total_pos += 1;
            } else {
                g.neg[last] += 1;
                g.total_neg += 1;
            }
        }
        Ok(g)
    }

    fn require_both(&self, what: &str) -> Result<()> {
        if self.total_pos == 0 || self.total_neg == 0 {
            return Err(Error::validation(format!(
                "{what} needs positives and negatives (got {} / {})",
                self.total_pos, self.total_neg
            )));
        }
        Ok(())
    }

    /// Ascending candidate thresholds; entry `i` lies just below group `i`,
    /// and the final entry is `+inf`.
    fn thresholds(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.scores.len() + 1);
        t.push(f64::NEG_INFINITY);
        for w in self.scores.windows(2) {
            t.push(midpoint(w[0], w[1]));
        }
        t.push(f64::INFINITY);
        t
    }
}

/// A threshold strictly above `lo` and at most `hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

/// Exact Mann-Whitney counts: `twice_concordant` is twice the number of
/// (positive, negative) pairs ordered correctly plus the number of ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AucCounts {
    pub twice_concordant: u128,
    pub pairs: u128,
}

impl AucCounts {
    pub fn value(&self) -> f64 {
        self.twice_concordant as f64 / (2 * self.pairs) as f64
    }
}

pub fn auc_counts<T: Scored>(items: &[T]) -> Result<AucCounts> {
    let g = Groups::build(items)?;
    g.require_both("ROC AUC")?;
    let mut neg_below: u128 = 0;
    let mut twice: u128 = 0;
    for i in 0..g.scores.len() {
        let (p, n) = (u128::from(g.pos[i]), u128::from(g.neg[i]));
        twice += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(AucCounts {
        twice_concordant: twice,
        pairs: u128::from(g.total_pos) * u128::from(g.total_neg),
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted ½.
pub fn roc_auc<T: Scored>(items: &[T]) -> Result<f64> {
    Ok(auc_counts(items)?.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC operating points from the strictest threshold (`+inf`) down to `-inf`.
pub fn roc_curve<T: Scored>(items: &[T]) -> Result<Vec<RocPoint>> {
    let g = Groups::build(items)?;
    g.require_both("ROC curve")?;
    let thresholds = g.thresholds();
    let (p, n) = (g.total_pos as f64, g.total_neg as f64);
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for i in (0..g.scores.len()).rev() {
        tp += g.pos[i];
        fp += g.neg[i];
        points.push(RocPoint {
            threshold: thresholds[i],
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub rate: f64,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

/// Equal error rate: the candidate threshold minimising |FPR - FNR|, with the
/// rate reported as (FPR + FNR) / 2 at that threshold.
pub fn eer<T: Scored>(items: &[T]) -> Result<Eer> {
    let g = Groups::build(items)?;
    g.require_both("EER")?;
    let thresholds = g.thresholds();
    let (p, n) = (u128::from(g.total_pos), u128::from(g.total_neg));
    let (mut fp, mut fn_) = (n, 0u128);
    let mut best: Option<(u128, usize, u128, u128)> = None;
    for (i, _) in thresholds.iter().enumerate() {
        if i > 0 {
            fp -= u128::from(g.neg[i - 1]);
            fn_ += u128::from(g.pos[i - 1]);
        }
        // |FP/N - FN/P| scaled by N*P.
        let gap = (fp * p).abs_diff(fn_ * n);
        if best.is_none_or(|(b, ..)| gap < b) {
            best = Some((gap, i, fp, fn_));
        }
    }
    let (_, i, fp, fn_) = best.expect("at least two candidate thresholds");
    Ok(Eer {
        rate: (fp as f64 / n as f64 + fn_ as f64 / p as f64) / 2.0,
        threshold: thresholds[i],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Every score at or above this value is predicted positive.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: u64,
    pub fp: u64,
}

/// Precision-recall points at descending distinct scores and the step-wise
/// average precision `sum_k (R_k - R_{k-1}) * P_k`.
pub fn pr_ap<T: Scored>(items: &[T]) -> Result<(Vec<PrPoint>, f64)> {
    let points = pr_points(items)?;
    let total_pos = points.last().map_or(0, |p| p.tp) as f64;
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for pt in &points {
        ap += (pt.tp - prev_tp) as f64 / total_pos * pt.precision;
        prev_tp = pt.tp;
    }
    Ok((points, ap))
}

fn pr_points<T: Scored>(items: &[T]) -> Result<Vec<PrPoint>> {
    let g = Groups::build(items)?;
    if g.total_pos == 0 {
        return Err(Error::validation("average precision needs at least one positive"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    Ok((0..g.scores.len())
        .rev()
        .map(|i| {
            tp += g.pos[i];
            fp += g.neg[i];
            PrPoint {
                threshold: g.scores[i],
                recall: tp as f64 / g.total_pos as f64,
                precision: tp as f64 / (tp + fp) as f64,
                tp,
                fp,
            }
        })
        .collect())
}

/// Average precision as a reduced fraction `(numerator, denominator)`;
/// `None` if the exact value overflows 128-bit arithmetic.
pub fn average_precision_ratio<T: Scored>(items: &[T]) -> Result<Option<(u128, u128)>> {
    let points = pr_points(items)?;
    let total_pos = u128::from(points.last().map_or(0, |p| p.tp));
    let (mut num, mut den) = (0u128, 1u128);
    let mut prev_tp = 0u128;
    for pt in &points {
        let tp = u128::from(pt.tp);
        let (dn, dd) = ((tp - prev_tp) * tp, total_pos * (tp + u128::from(pt.fp)));
        prev_tp = tp;
        if dn == 0 {
            continue;
        }
        let Some(sum) = add_fractions((num, den), (dn, dd)) else {
            return Ok(None);
        };
        (num, den) = sum;
    }
    Ok(Some((num, den)))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn add_fractions((an, ad): (u128, u128), (bn, bd): (u128, u128)) -> Option<(u128, u128)> {
    let g = gcd(ad, bd);
    let den = (ad / g).checked_mul(bd)?;
    let num = an.checked_mul(bd / g)?.checked_add(bn.checked_mul(ad / g)?)?;
    let r = gcd(num, den).max(1);
    Some((num / r, den / r))
}

/// Result of the k-fold threshold protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAccuracy {
    pub mean: f64,
    pub fold_accuracies: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Fold index per item: each class is shuffled independently and dealt
/// round-robin, so class proportions are preserved in every fold.
pub fn stratified_folds<T: Scored>(items: &[T], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = rng::seeded(seed);
    let mut assignment = vec![0; items.len()];
    for positive in [true, false] {
        let mut idx: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].is_positive() == positive)
            .collect();
        if idx.len() < folds {
            return Err(Error::validation(format!(
                "{} class has {} members, fewer than {folds} folds",
                if positive { "positive" } else { "negative" },
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (rank, i) in idx.into_iter().enumerate() {
            assignment[i] = rank % folds;
        }
    }
    Ok(assignment)
}

/// The accuracy-maximising threshold on `items` and its number of correct
/// decisions.
pub fn best_threshold<T: Scored>(items: &[T]) -> Result<(f64, u64)> {
    let g = Groups::build(items)?;
    let thresholds = g.thresholds();
    let mut correct = g.total_pos;
    let mut best = (thresholds[0], correct);
    for (i, &t) in thresholds.iter().enumerate().skip(1) {
        correct = correct + g.neg[i - 1] - g.pos[i - 1];
        if correct > best.1 {
            best = (t, correct);
        }
    }
    Ok(best)
}

/// Threshold cross-validation over stratified random folds: for each fold,
/// pick the best threshold on the other folds and score the held-out fold.
pub fn cv_threshold_accuracy<T: Scored>(items: &[T], folds: usize, seed: u64) -> Result<CvAccuracy> {
    let assignment = stratified_folds(items, folds, seed)?;
    cv_with_folds(items, &assignment, folds)
}

/// Threshold cross-validation over a given fold index per item
/// (`0..folds`).
pub fn cv_with_folds<T: Scored>(items: &[T], assignment: &[usize], folds: usize) -> Result<CvAccuracy> {
    if assignment.len() != items.len() {
        return Err(Error::Dim {
            expected: items.len(),
            got: assignment.len(),
        });
    }
    let mut fold_accuracies = Vec::with_capacity(folds);
    let mut thresholds = Vec::with_capacity(folds);
    for k in 0..folds {
        let mut held = Vec::new();
        let mut rest = Vec::new();
        for (it, &f) in items.iter().zip(assignment) {
            if f == k {
                held.push(it);
            } else {
                rest.push(it);
            }
        }
        if held.is_empty() || rest.is_empty() {
            return Err(Error::validation(format!("fold {k} is empty or covers every item")));
        }
        let (t, _) = best_threshold(&rest)?;
        let correct = held.iter().filter(|it| (it.score() >= t) == it.is_positive()).count();
        fold_accuracies.push(correct as f64 / held.len() as f64);
        thresholds.push(t);
    }
    let mean = fold_accuracies.iter().sum::<f64>() / folds as f64;
    Ok(CvAccuracy {
        mean,
        fold_accuracies,
        thresholds,
    })
}

/// Tri-subject score: the larger of the father-child and mother-child scores.
pub fn triplet_score(score_fc: f64, score_mc: f64) -> f64 {
    score_fc.max(score_mc)
}
