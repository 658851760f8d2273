//! Future-failure labels and the automatic occlusion labelers.

use std::ops::RangeInclusive;

use super::camera::CameraFrame;
use super::config::WorldConfig;
use super::geometry::LidarScan;

/// Width of the LiDAR sector examined for occlusion, as a fraction of a 270° sweep.
pub const OCCLUSION_SECTOR_DEG: f64 = 215.0;
pub const REFERENCE_FOV_DEG: f64 = 270.0;
/// Median range below which the LiDAR counts as occluded, meters.
pub const LIDAR_OCCLUSION_RANGE: f64 = 0.3;

/// `y_future[i] = instantaneous[frame + i]` for `i < horizon`, false past the end.
pub fn label_failures(instantaneous: &[bool], frame: usize, horizon: usize) -> Vec<bool> {
    (0..horizon)
        .map(|i| instantaneous.get(frame + i).copied().unwrap_or(false))
        .collect()
}

/// Centered beams whose angle offset lies within `(215/270)·fov / 2`.
pub fn lidar_occlusion_sector(beams: usize, fov_deg: f64) -> RangeInclusive<usize> {
    let res = fov_deg / (beams - 1).max(1) as f64;
    let half = OCCLUSION_SECTOR_DEG / REFERENCE_FOV_DEG * fov_deg / 2.0;
    let center = (beams - 1) as f64 / 2.0;
    let reach = (half / res + 1e-9).floor();
    // With an even beam count the center falls between beams.
    let offset = center - center.floor();
    let span = if offset > 0.0 {
        ((half / res - offset) + 1e-9).floor() + offset
    } else {
        reach
    };
    let lo = (center - span).round() as usize;
    let hi = (center + span).round() as usize;
    lo..=hi
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median range of the center sector, meters.
pub fn lidar_sector_median(scan: &LidarScan, config: &WorldConfig) -> f64 {
    let sector = lidar_occlusion_sector(scan.ranges.len(), config.lidar_fov);
    let mut vals = scan.ranges[sector].to_vec();
    median(&mut vals)
}

pub fn label_lidar_occlusion(scan: &LidarScan, config: &WorldConfig) -> bool {
    lidar_sector_median(scan, config) < LIDAR_OCCLUSION_RANGE
}

/// Mean absolute response of the 4-neighbour Laplacian over interior pixels
/// of the grayscale image, and the grayscale variance.
pub fn sharpness_and_variance(frame: &CameraFrame) -> (f64, f64) {
    let g = frame.grayscale();
    let (h, w) = (frame.height, frame.width);
    let mut lap = 0.0;
    let mut count = 0usize;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let v = g[(r - 1) * w + c] + g[(r + 1) * w + c] + g[r * w + c - 1] + g[r * w + c + 1] - 4.0 * g[r * w + c];
            lap += v.abs();
            count += 1;
        }
    }
    let sharp = if count > 0 { lap / count as f64 } else { 0.0 };
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (sharp, var)
}

pub fn label_camera_occlusion(frame: &CameraFrame, config: &WorldConfig) -> bool {
    let (sharp, var) = sharpness_and_variance(frame);
    sharp < config.camera_sharpness_min || var < config.camera_variance_min
}

/// Agreement-maximizing camera thresholds `(sharpness_min, variance_min)`.
///
/// `samples` holds `(sharpness, variance, occluded)` triples. The variance
/// threshold is fit first, then the sharpness threshold given it; each is
/// placed midway between adjacent observed values.
pub fn calibrate_camera_thresholds(samples: &[(f64, f64, bool)]) -> (f64, f64) {
    let v_min = best_threshold(samples, |_| false, |s| s.1);
    let s_min = best_threshold(samples, |s| s.1 < v_min, |s| s.0);
    (s_min, v_min)
}

/// Threshold `θ` maximizing agreement of `already || key < θ` with the truth.
fn best_threshold(
    samples: &[(f64, f64, bool)],
    already: impl Fn(&(f64, f64, bool)) -> bool,
    key: impl Fn(&(f64, f64, bool)) -> f64,
) -> f64 {
    let mut free: Vec<(f64, bool)> = samples.iter().filter(|s| !already(s)).map(|s| (key(s), s.2)).collect();
    free.sort_by(|a, b| a.0.total_cmp(&b.0));
    // θ below every value: nothing free is flagged.
    let mut correct = free.iter().filter(|s| !s.1).count();
    let (mut best, mut best_theta) = (correct, free.first().map_or(0.0, |s| s.0 * 0.5));
    for i in 0..free.len() {
        correct = if free[i].1 { correct + 1 } else { correct - 1 };
        if i + 1 < free.len() && free[i + 1].0 == free[i].0 {
            continue;
        }
        if correct > best {
            best = correct;
            best_theta = match free.get(i + 1) {
                Some(next) => 0.5 * (free[i].0 + next.0),
                None => free[i].0 * 1.5 + 1e-12,
            };
        }
    }
    best_theta
}
