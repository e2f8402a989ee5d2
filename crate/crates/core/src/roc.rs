//! ROC curve and trapezoidal AUC.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(fpr, tpr)`, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point: a device is called positive when its score
    /// is `>=` the threshold. Starts at `+inf`, ends at `-inf`.
    #[serde(skip)]
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// Sweeps every distinct score as a threshold. Equal scores move together,
/// so ties contribute a diagonal segment.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::data("scores", "contain NaN"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::parameter(
            "ground_truth",
            "ROC needs at least one positive and one negative",
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(s);
    }
    points.push((1.0, 1.0));
    thresholds.push(f64::NEG_INFINITY);

    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum();
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}
