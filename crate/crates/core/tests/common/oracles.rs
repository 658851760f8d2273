//! Brute-force reference implementations of the evaluation metrics.

/// Confusion counts `(tp, fp, fn, tn)` with `score >= threshold` positive.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for i in 0..scores.len() {
        let predicted = scores[i] >= threshold;
        match (predicted, labels[i]) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

pub fn f1_oracle(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (tp, fp, fn_, _) = confusion(scores, labels, threshold);
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Step-wise area under the precision-recall curve obtained by sweeping
/// the threshold over every distinct score, highest first.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&y| y).count() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for th in thresholds {
        let (tp, fp, _, _) = confusion(scores, labels, th);
        let recall = tp as f64 / positives;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}
