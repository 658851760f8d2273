use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};

/// Confusion counts and derived scores at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(RoarError::invalid("metric over empty input"));
    }
    if scores.len() != labels.len() {
        return Err(RoarError::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(RoarError::invalid(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Predictions with `score >= threshold` count as positive.
pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> Result<F1Report> {
    check_inputs(scores, labels)?;
    let mut r = F1Report {
        threshold,
        ..F1Report::default()
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => r.tp += 1,
            (true, false) => r.fp += 1,
            (false, true) => r.fn_ += 1,
            (false, false) => r.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.tp, r.tp + r.fn_);
    r.f1 = if r.precision + r.recall > 0.0 {
        2.0 * r.precision * r.recall / (r.precision + r.recall)
    } else {
        0.0
    };
    Ok(r)
}

/// Average precision. Equal scores form one group whose precision, taken at
/// the end of the group, is credited to each of its positives.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(RoarError::invalid("PR-AUC needs at least one positive label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut acc) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_pos = 0;
        while i < order.len() && scores[order[i]] == s {
            group_pos += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += group_pos;
        acc += group_pos as f64 * tp as f64 / seen as f64;
    }
    Ok(acc / positives as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_splits() {
        assert_eq!(f1_score(&[0.9, 0.2], &[true, false], 0.5).unwrap().f1, 1.0);
        assert_eq!(f1_score(&[0.2, 0.9], &[true, false], 0.5).unwrap().f1, 0.0);
        assert_eq!(pr_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let labels = [true, false, false, true, false];
        assert!((pr_auc(&[0.3; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(f1_score(&[], &[], 0.5).is_err());
        assert!(pr_auc(&[0.4, 0.6], &[false, false]).is_err());
    }
}
