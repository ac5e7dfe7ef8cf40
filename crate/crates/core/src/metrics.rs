//! Scalar evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("non-finite value in {name}")));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted as one half. Uses the Mann-Whitney rank sum with mid-ranks.
pub fn roc_auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::Metric(format!(
            "roc_auc needs both classes (got {} positives, {} negatives)",
            scores_pos.len(),
            scores_neg.len()
        )));
    }
    check_finite("positive scores", scores_pos)?;
    check_finite("negative scores", scores_neg)?;
    let mut all: Vec<(f64, bool)> = scores_pos
        .iter()
        .map(|&s| (s, true))
        .chain(scores_neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the mid-rank keeps the sum integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_group = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank2_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let np = scores_pos.len() as u128;
    let nn = scores_neg.len() as u128;
    let u2 = rank2_sum - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// ROC-AUC of `scores` for separating flagged examples (positives) from the rest.
pub fn detection_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} flags",
            scores.len(),
            positive.len()
        )));
    }
    let (pos, neg): (Vec<_>, Vec<_>) = scores.iter().zip(positive).partition(|(_, &p)| p);
    let pos: Vec<f64> = pos.into_iter().map(|(s, _)| *s).collect();
    let neg: Vec<f64> = neg.into_iter().map(|(s, _)| *s).collect();
    roc_auc(&pos, &neg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub confidence_sum: f64,
    pub accuracy_sum: f64,
    pub count: usize,
}

/// Equal-width reliability bins on (0, 1]. `ece` is a fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCalibration {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

impl BinnedCalibration {
    pub fn ece_percent(&self) -> f64 {
        100.0 * self.ece
    }
}

/// Bin for confidence `c`: bin `b` covers `(b/M, (b+1)/M]`, and 0 joins the first bin.
pub fn calibration_bin(c: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = ((c * m).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    while b > 0 && c <= b as f64 / m {
        b -= 1;
    }
    while b + 1 < bins && c > (b + 1) as f64 / m {
        b += 1;
    }
    b
}

pub fn calibration(confidences: &[f64], correct: &[bool], bins: usize) -> Result<BinnedCalibration> {
    if confidences.is_empty() {
        return Err(Error::Metric("calibration of an empty set".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::Metric(format!(
            "{} confidences for {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if bins < 1 {
        return Err(Error::Metric("calibration needs at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Metric(format!("confidence {c} outside [0, 1]")));
    }
    let mut out = vec![CalibrationBin::default(); bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let bin = &mut out[calibration_bin(c, bins)];
        bin.confidence_sum += c;
        bin.accuracy_sum += if ok { 1.0 } else { 0.0 };
        bin.count += 1;
    }
    let n = confidences.len() as f64;
    let ece = out
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.accuracy_sum - b.confidence_sum).abs() / n)
        .sum();
    Ok(BinnedCalibration { bins: out, ece })
}

/// Expected calibration error in percent.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    Ok(calibration(confidences, correct, bins)?.ece_percent())
}

/// F1 at threshold 0.5 and average precision.
pub fn f1_and_ap(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite("scores", scores)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Metric("f1/ap need at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= 0.5 {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fn_ = positives - tp;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };

    // step-wise area: each distinct threshold adds (ΔR)·P at that threshold
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let new_hits = order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        hits += new_hits;
        ap += new_hits as f64 / positives as f64 * (hits as f64 / seen as f64);
        i = j + 1;
    }
    Ok((f1, ap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: usize,
    pub count: usize,
    pub f1: f64,
    pub ap: f64,
    /// Percent.
    pub ece: f64,
}

/// Per-group binary metrics; gaps are `max − min` across groups (`|A − B|` for two).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: Vec<GroupMetrics>,
    pub f1_gap: f64,
    pub ap_gap: f64,
    pub ece_gap: f64,
}

fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let hi = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.fold(f64::INFINITY, f64::min);
    hi - lo
}

/// `scores` are positive-class probabilities; ECE uses the confidence of the
/// thresholded prediction, `max(s, 1 − s)`.
pub fn group_report(
    scores: &[f64],
    labels: &[bool],
    group_ids: &[usize],
    bins: usize,
) -> Result<GroupReport> {
    if scores.len() != labels.len() || scores.len() != group_ids.len() {
        return Err(Error::Metric("scores, labels and group ids differ in length".into()));
    }
    let mut ids: Vec<usize> = group_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Metric(format!(
            "group report needs at least two groups, found {}",
            ids.len()
        )));
    }
    let mut groups = Vec::with_capacity(ids.len());
    for &g in &ids {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| group_ids[i] == g).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let (f1, ap) = f1_and_ap(&s, &l)
            .map_err(|e| Error::Metric(format!("group {g} is degenerate: {e}")))?;
        let conf: Vec<f64> = s.iter().map(|&p| p.max(1.0 - p)).collect();
        let correct: Vec<bool> = s.iter().zip(&l).map(|(&p, &y)| (p >= 0.5) == y).collect();
        let e = ece(&conf, &correct, bins)
            .map_err(|e| Error::Metric(format!("group {g} is degenerate: {e}")))?;
        groups.push(GroupMetrics {
            group: g,
            count: idx.len(),
            f1,
            ap,
            ece: e,
        });
    }
    Ok(GroupReport {
        f1_gap: spread(groups.iter().map(|g| g.f1)),
        ap_gap: spread(groups.iter().map(|g| g.ap)),
        ece_gap: spread(groups.iter().map(|g| g.ece)),
        groups,
    })
}
