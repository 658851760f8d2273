use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_score, pr_auc, F1Report};
use crate::error::{Result, RoarError};
use crate::fieldsim::Episode;
use crate::fusion::{ForwardMode, RoarModel};
use crate::numerics::ParamStore;

/// Episodes run side by side during evaluation.
pub const EVAL_CHUNK: usize = 4;

/// Deterministic outputs of one episode run from a zero state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodePredictions {
    pub episode: usize,
    /// Per frame, T failure probabilities.
    pub y_hat: Vec<Vec<f64>>,
    pub p_camera: Vec<f64>,
    pub p_lidar: Option<Vec<f64>>,
}

/// Runs every episode in evaluation mode, batching equal-length episodes.
pub fn predict_episodes(
    model: &RoarModel,
    params: &ParamStore,
    episodes: &[Episode],
) -> Result<Vec<EpisodePredictions>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in episodes.iter().enumerate().filter(|(_, e)| !e.is_empty()) {
        by_len.entry(e.len()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(episodes.len());
    for ids in by_len.values() {
        for chunk in ids.chunks(EVAL_CHUNK) {
            let seqs: Vec<_> = chunk.iter().map(|&i| episodes[i].frames.as_slice()).collect();
            let steps = model.roar_forward_batch(params, &seqs, ForwardMode::EVAL, &mut rng)?;
            for (&i, frames) in chunk.iter().zip(steps) {
                out.push(EpisodePredictions {
                    episode: i,
                    p_camera: frames.iter().map(|f| f.y_camera).collect(),
                    p_lidar: frames.iter().map(|f| f.y_lidar).collect(),
                    y_hat: frames.into_iter().map(|f| f.y_hat).collect(),
                });
            }
        }
    }
    out.sort_by_key(|p| p.episode);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pr_auc: f64,
    /// At threshold 0.5.
    pub f1: F1Report,
    pub occ_camera_pr_auc: Option<f64>,
    pub occ_lidar_pr_auc: Option<f64>,
    pub frames: usize,
    pub predictions: usize,
    pub positives: usize,
}

/// Pools every (frame, horizon step) pair before each episode's tail for
/// failure metrics and every frame for occlusion metrics.
pub fn score_predictions(episodes: &[Episode], preds: &[EpisodePredictions]) -> Result<EvalReport> {
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut cam_s, mut cam_y, mut lid_s, mut lid_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut frames = 0;
    for p in preds {
        let ep = episodes
            .get(p.episode)
            .ok_or_else(|| RoarError::invalid(format!("prediction for missing episode {}", p.episode)))?;
        let tail = ep.tail_start();
        for (t, (f, y)) in ep.frames.iter().zip(&p.y_hat).enumerate() {
            cam_s.push(p.p_camera[t]);
            cam_y.push(f.occ_camera_auto);
            if let Some(l) = &p.p_lidar {
                lid_s.push(l[t]);
                lid_y.push(f.occ_lidar_auto);
            }
            if t < tail {
                frames += 1;
                scores.extend_from_slice(y);
                labels.extend_from_slice(&f.y_future);
            }
        }
    }
    let optional_auc = |s: &[f64], y: &[bool]| -> Result<Option<f64>> {
        if y.iter().any(|&v| v) {
            pr_auc(s, y).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(EvalReport {
        pr_auc: pr_auc(&scores, &labels)?,
        f1: f1_score(&scores, &labels, 0.5)?,
        occ_camera_pr_auc: optional_auc(&cam_s, &cam_y)?,
        occ_lidar_pr_auc: if lid_s.is_empty() {
            None
        } else {
            optional_auc(&lid_s, &lid_y)?
        },
        frames,
        predictions: scores.len(),
        positives: labels.iter().filter(|&&y| y).count(),
    })
}

pub fn evaluate(model: &RoarModel, params: &ParamStore, episodes: &[Episode]) -> Result<EvalReport> {
    score_predictions(episodes, &predict_episodes(model, params, episodes)?)
}
