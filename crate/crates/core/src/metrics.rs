//! Rank-based OOD evaluation metrics and scoring-time measurement.
//!
//! OOD is the positive class throughout. AUROC uses the rank (Mann-Whitney)
//! formulation with average ranks on ties; AUPR is average precision with
//! step interpolation; FPR@TPR picks the largest threshold reaching the
//! target TPR, without interpolation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::detectors::{DetectorModel, ScoreVector};
use crate::error::{Error, Result};

/// One evaluation run: the three rank metrics plus wall-clock scoring time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
    pub inference_seconds: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricsReport {
    /// Computes the rank metrics for one score vector.
    pub fn from_scores(
        scores: &ScoreVector,
        is_ood: &[bool],
        inference_seconds: f64,
    ) -> Result<MetricsReport> {
        Ok(MetricsReport {
            auroc: auroc(scores, is_ood)?,
            aupr: aupr(scores, is_ood)?,
            fpr_at_95: fpr_at_tpr(scores, is_ood, 0.95)?,
            inference_seconds,
            n_id: is_ood.iter().filter(|&&o| !o).count(),
            n_ood: is_ood.iter().filter(|&&o| o).count(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<MetricsReport> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("metrics JSON: {e}")))
    }
}

fn check_inputs(scores: &ScoreVector, is_ood: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != is_ood.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} flags",
            scores.len(),
            is_ood.len()
        )));
    }
    let n_ood = is_ood.iter().filter(|&&o| o).count();
    let n_id = is_ood.len() - n_ood;
    if n_ood == 0 || n_id == 0 {
        return Err(Error::Metric(
            "metrics require at least one ID and one OOD entry".into(),
        ));
    }
    Ok((n_id, n_ood))
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counted half.
pub fn auroc(scores: &ScoreVector, is_ood: &[bool]) -> Result<f64> {
    let (n_id, n_ood) = check_inputs(scores, is_ood)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores.scores[i]
            .partial_cmp(&scores.scores[j])
            .expect("finite scores")
    });

    // Average ranks across tie groups (1-based ranks).
    let mut rank_sum_ood = 0.0;
    let mut idx = 0usize;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len()
            && scores.scores[order[end]] == scores.scores[order[idx]]
        {
            end += 1;
        }
        let avg_rank = (idx + 1 + end) as f64 / 2.0;
        for &i in &order[idx..end] {
            if is_ood[i] {
                rank_sum_ood += avg_rank;
            }
        }
        idx = end;
    }

    let n_ood_f = n_ood as f64;
    let u = rank_sum_ood - n_ood_f * (n_ood_f + 1.0) / 2.0;
    Ok(u / (n_id as f64 * n_ood_f))
}

/// Average precision over descending score thresholds, one step per
/// distinct value.
pub fn aupr(scores: &ScoreVector, is_ood: &[bool]) -> Result<f64> {
    let (_, n_ood) = check_inputs(scores, is_ood)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores.scores[j]
            .partial_cmp(&scores.scores[i])
            .expect("finite scores")
    });

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut idx = 0usize;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len()
            && scores.scores[order[end]] == scores.scores[order[idx]]
        {
            end += 1;
        }
        for &i in &order[idx..end] {
            if is_ood[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_ood as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        idx = end;
    }
    Ok(ap)
}

/// False-positive rate on ID data at the largest threshold whose TPR (OOD
/// recall, scores strictly above the threshold) reaches `tpr_target`.
pub fn fpr_at_tpr(scores: &ScoreVector, is_ood: &[bool], tpr_target: f64) -> Result<f64> {
    let (n_id, n_ood) = check_inputs(scores, is_ood)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Precondition(format!(
            "tpr_target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores.scores[j]
            .partial_cmp(&scores.scores[i])
            .expect("finite scores")
    });

    // Sweep candidate thresholds at each distinct score, descending. At a
    // threshold equal to a score value, entries with that value compare
    // "not above". Track the best (largest) feasible threshold.
    let mut above_ood = 0usize;
    let mut above_id = 0usize;
    let mut idx = 0usize;
    let mut result: Option<f64> = None;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len()
            && scores.scores[order[end]] == scores.scores[order[idx]]
        {
            end += 1;
        }
        // Threshold just below the previous group: the current group is the
        // boundary. First evaluate the threshold at this group's value.
        let tpr = above_ood as f64 / n_ood as f64;
        if tpr >= tpr_target && result.is_none() {
            result = Some(above_id as f64 / n_id as f64);
        }
        for &i in &order[idx..end] {
            if is_ood[i] {
                above_ood += 1;
            } else {
                above_id += 1;
            }
        }
        idx = end;
    }
    // Threshold below the minimum score: everything is OOD, TPR = 1.
    Ok(result.unwrap_or(1.0))
}

/// Times `model.score(queries)` with a monotonic clock: reports the median
/// of `repeats` runs together with the (bit-identical) scores.
pub fn time_scoring(
    model: &DetectorModel,
    queries: &EmbeddingMatrix,
    repeats: usize,
) -> Result<(ScoreVector, f64)> {
    let repeats = repeats.max(1);
    let mut times = Vec::with_capacity(repeats);
    let mut scores = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let s = model.score(queries)?;
        times.push(start.elapsed().as_secs_f64());
        if let Some(prev) = &scores {
            if prev != &s {
                return Err(Error::Internal("scoring is not deterministic".into()));
            }
        } else {
            scores = Some(s);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let median = times[times.len() / 2];
    Ok((scores.expect("at least one repeat"), median))
}
