use crate::encoders::{camera_batch, path_batch, scan_batch};
use crate::error::{Result, RoarError};
use crate::fieldsim::Frame;
use crate::numerics::Tensor;

/// `B` equal-length frame sequences laid out step-major: row `s·B + b`
/// holds step `s` of sequence `b`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub batch: usize,
    pub steps: usize,
    pub horizon: usize,
    /// `[S·B, 3, H, W]`.
    pub camera: Tensor,
    /// `[S·B, 1, H/2, W]`.
    pub path: Tensor,
    /// `[S·B, L]`, normalized by the maximum range.
    pub scans: Tensor,
    /// `S·B·T` failure targets.
    pub y_future: Vec<f64>,
    /// `S·B` automatic occlusion labels.
    pub occ_camera: Vec<f64>,
    pub occ_lidar: Vec<f64>,
}

impl SequenceBatch {
    pub fn from_windows(windows: &[&[Frame]], max_range: f64) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(RoarError::invalid("empty sequence batch"));
        };
        let steps = first.len();
        if steps == 0 || windows.iter().any(|w| w.len() != steps) {
            return Err(RoarError::invalid("sequence batch needs equal, nonzero lengths"));
        }
        let horizon = first[0].y_future.len();
        let ordered: Vec<&Frame> = (0..steps).flat_map(|s| windows.iter().map(move |w| &w[s])).collect();
        if ordered.iter().any(|f| f.y_future.len() != horizon) {
            return Err(RoarError::invalid("sequence batch mixes horizons"));
        }
        let flag = |b: bool| b as u8 as f64;
        Ok(SequenceBatch {
            batch: windows.len(),
            steps,
            horizon,
            camera: camera_batch(&ordered.iter().map(|f| &f.camera).collect::<Vec<_>>())?,
            path: path_batch(&ordered.iter().map(|f| &f.path).collect::<Vec<_>>())?,
            scans: scan_batch(&ordered.iter().map(|f| &f.scan).collect::<Vec<_>>(), max_range)?,
            y_future: ordered
                .iter()
                .flat_map(|f| f.y_future.iter().map(|&y| flag(y)))
                .collect(),
            occ_camera: ordered.iter().map(|f| flag(f.occ_camera_auto)).collect(),
            occ_lidar: ordered.iter().map(|f| flag(f.occ_lidar_auto)).collect(),
        })
    }

    /// Targets of step `s`, `[B·T]`.
    pub fn y_at(&self, s: usize) -> &[f64] {
        let n = self.batch * self.horizon;
        &self.y_future[s * n..(s + 1) * n]
    }

    pub fn occ_camera_at(&self, s: usize) -> &[f64] {
        &self.occ_camera[s * self.batch..(s + 1) * self.batch]
    }

    pub fn occ_lidar_at(&self, s: usize) -> &[f64] {
        &self.occ_lidar[s * self.batch..(s + 1) * self.batch]
    }
}
