use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};
use crate::fieldsim::{
    corrupt_scan, label_camera_occlusion, label_lidar_occlusion, occluded_camera, Episode, WorldConfig,
};
use crate::fusion::{ForwardMode, RoarModel};
use crate::numerics::ParamStore;
use crate::util::mix_seed;

/// Probability above which an output counts as a raised alarm.
pub const ALARM_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub k: usize,
    /// Indices of the occluded frames.
    pub occluded_frames: Vec<usize>,
    /// T failure probabilities for every frame of the episode.
    pub probabilities: Vec<Vec<f64>>,
    /// Highest probability over the occluded frames, or over the whole
    /// episode when `k = 0`.
    pub max_probability: f64,
    /// Any output above the alarm threshold in the frames considered.
    pub false_positive: bool,
}

impl StressReport {
    /// Probabilities of the occluded frames only.
    pub fn occluded_predictions(&self) -> impl Iterator<Item = &[f64]> {
        self.occluded_frames.iter().map(|&t| self.probabilities[t].as_slice())
    }
}

/// World settings that produce failure-free episodes.
pub fn clear_world(base: &WorldConfig) -> WorldConfig {
    WorldConfig {
        obstacle_rate: 0.0,
        occlusion_rate: 0.0,
        drift_rate: 0.0,
        ..base.clone()
    }
}

/// Overwrites the final `k` frames with both sensors fully occluded.
pub fn inject_total_occlusion(episode: &Episode, k: usize, seed: u64) -> Result<Episode> {
    if k > episode.len() {
        return Err(RoarError::invalid(format!(
            "cannot occlude {k} frames of a {}-frame episode",
            episode.len()
        )));
    }
    let cfg = &episode.config;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
    let mut out = episode.clone();
    let n = out.len();
    for f in &mut out.frames[n - k..] {
        corrupt_scan(&mut f.scan, cfg, &mut rng);
        f.camera = occluded_camera(cfg.image_height, cfg.image_width, &mut rng);
        f.occ_lidar_true = true;
        f.occ_camera_true = true;
        f.occ_lidar_auto = label_lidar_occlusion(&f.scan, cfg);
        f.occ_camera_auto = label_camera_occlusion(&f.camera, cfg);
    }
    Ok(out)
}

/// Occludes the last `k` frames of a failure-free episode and checks the
/// model's failure outputs over those frames.
pub fn occlusion_stress_test(
    model: &RoarModel,
    params: &ParamStore,
    episode: &Episode,
    k: usize,
    seed: u64,
) -> Result<StressReport> {
    if episode.frames.iter().any(|f| f.is_anomalous()) {
        return Err(RoarError::Precondition(format!(
            "stress episode {} contains true failures",
            episode.seed
        )));
    }
    let occluded = inject_total_occlusion(episode, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let steps = model.roar_forward(params, &occluded.frames, ForwardMode::EVAL, &mut rng)?;
    let probabilities: Vec<Vec<f64>> = steps.into_iter().map(|s| s.y_hat).collect();
    let n = probabilities.len();
    let occluded_frames: Vec<usize> = (n - k..n).collect();
    let considered: Vec<usize> = if k == 0 {
        (0..n).collect()
    } else {
        occluded_frames.clone()
    };
    let max_probability = considered
        .iter()
        .flat_map(|&t| probabilities[t].iter().copied())
        .fold(0.0, f64::max);
    Ok(StressReport {
        k,
        occluded_frames,
        probabilities,
        max_probability,
        false_positive: max_probability > ALARM_THRESHOLD,
    })
}

/// Aggregate over a set of clear episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressSummary {
    pub k: usize,
    pub episodes: usize,
    /// Fraction of episodes with a false positive.
    pub fp_rate: f64,
    pub mean_max_probability: f64,
    pub reports: Vec<StressReport>,
}

pub fn stress_summary(
    model: &RoarModel,
    params: &ParamStore,
    episodes: &[Episode],
    k: usize,
    seed: u64,
) -> Result<StressSummary> {
    if episodes.is_empty() {
        return Err(RoarError::invalid("stress test needs at least one episode"));
    }
    let reports = episodes
        .iter()
        .enumerate()
        .map(|(i, e)| occlusion_stress_test(model, params, e, k, mix_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    Ok(StressSummary {
        k,
        episodes: reports.len(),
        fp_rate: reports.iter().filter(|r| r.false_positive).count() as f64 / n,
        mean_max_probability: reports.iter().map(|r| r.max_probability).sum::<f64>() / n,
        reports,
    })
}
