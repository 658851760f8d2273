//! Feature extractors for the planned path, the camera and the LiDAR.
//!
//! Each encoder maps a batch of sensor frames to `[B, 64]` features on a
//! [`Tape`]. The `encode_*` functions are single-frame evaluation wrappers.

mod convnet;
mod svae;

use serde::{Deserialize, Serialize};

pub use convnet::{camera_batch, path_batch, CameraEncoder, PathEncoder};
pub use svae::{scan_batch, svae_loss, Svae, SvaeOutput, SvaeTapeOutput, LATENT_DIM};

use crate::error::{Result, RoarError};
use crate::fieldsim::WorldConfig;
use crate::numerics::ParamStore;

/// Width of every sensor and path feature.
pub const FEATURE_DIM: usize = 64;

/// A 64-dim feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVec {
    pub values: Vec<f64>,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(RoarError::invalid(format!(
                "feature has {} values, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RoarError::NonFinite("feature vector".into()));
        }
        Ok(FeatureVec { values })
    }
}

/// Sensor geometry and layer widths shared by the three encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub lidar_beams: usize,
    pub lidar_max_range: f64,
    pub svae_hidden: [usize; 2],
}

impl EncoderConfig {
    pub fn from_world(world: &WorldConfig, svae_hidden: [usize; 2]) -> Self {
        EncoderConfig {
            image_height: world.image_height,
            image_width: world.image_width,
            lidar_beams: world.lidar_beams,
            lidar_max_range: world.lidar_max_range,
            svae_hidden,
        }
    }
}

/// All parameters whose name starts with `prefix`.
pub fn param_names<'a>(store: &'a ParamStore, prefix: &'a str) -> impl Iterator<Item = &'a str> {
    store.names().filter(move |n| n.starts_with(prefix))
}
