use serde::{Deserialize, Serialize};

use super::DetectionError;

type Result<T> = std::result::Result<T, DetectionError>;

fn split(scores: &[f64], is_ood: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != is_ood.len() {
        return Err(DetectionError::Length {
            what: "is_ood",
            expected: scores.len(),
            got: is_ood.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(DetectionError::NonFinite(i));
    }
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for (&s, &o) in scores.iter().zip(is_ood) {
        if o {
            ood.push(s);
        } else {
            id.push(s);
        }
    }
    if id.is_empty() {
        return Err(DetectionError::NoId);
    }
    if ood.is_empty() {
        return Err(DetectionError::NoOod);
    }
    Ok((id, ood))
}

/// Probability that a random OOD node outscores a random ID node, ties
/// counting one half. Computed from midranks.
pub fn auroc(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let (id, ood) = split(scores, is_ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_id * n_ood))
}

/// Average precision with OOD as the positive class: a descending sweep
/// over distinct scores, adding `precision * recall increment` at each.
pub fn aupr(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let (_, ood) = split(scores, is_ood)?;
    let n_pos = ood.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let before = tp;
        while i < order.len() && scores[order[i]] == s {
            if is_ood[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > before {
            ap += (tp - before) as f64 / n_pos * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Fraction of ID nodes flagged at the largest threshold that still flags
/// at least 95% of OOD nodes (OOD iff score >= threshold).
pub fn fpr_at_95_tpr(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let (id, mut ood) = split(scores, is_ood)?;
    ood.sort_by(|a, b| b.total_cmp(a));
    let needed = (95 * ood.len()).div_ceil(100);
    let threshold = ood[needed.max(1) - 1];
    let flagged = id.iter().filter(|&&s| s >= threshold).count();
    Ok(flagged as f64 / id.len() as f64)
}

/// Threshold-free detection metrics plus ID accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub id_accuracy: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Scores higher for more OOD-like nodes. `id_mask` selects the entries
/// whose prediction counts toward accuracy.
pub fn evaluate(
    scores: &[f64],
    is_ood: &[bool],
    predictions: &[usize],
    labels: &[Option<usize>],
    id_mask: &[bool],
) -> Result<DetectionReport> {
    for (what, len) in [
        ("predictions", predictions.len()),
        ("labels", labels.len()),
        ("id_mask", id_mask.len()),
    ] {
        if len != scores.len() {
            return Err(DetectionError::Length {
                what,
                expected: scores.len(),
                got: len,
            });
        }
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for i in (0..scores.len()).filter(|&i| id_mask[i]) {
        if let Some(l) = labels[i] {
            total += 1;
            hits += usize::from(predictions[i] == l);
        }
    }
    let n_ood = is_ood.iter().filter(|&&o| o).count();
    Ok(DetectionReport {
        auroc: auroc(scores, is_ood)?,
        aupr: aupr(scores, is_ood)?,
        fpr95: fpr_at_95_tpr(scores, is_ood)?,
        id_accuracy: if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        },
        n_id: scores.len() - n_ood,
        n_ood,
    })
}
