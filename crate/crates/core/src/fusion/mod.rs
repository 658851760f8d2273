//! Occlusion-aware attention fusion with a bounded recurrent state.
//!
//! Per frame: the three encoders produce `f_path`, `f_camera`, `f_lidar`;
//! each sensor feature feeds an occlusion head whose 32-dim hidden layer
//! forms the query for the state token. Keys and values are
//! `[h, f_path, f_camera, f_lidar]`, queries `[f_occ, f_path, f_camera,
//! f_lidar]`. Attended token 0, clamped to `[-10, 10]`, becomes the next
//! state; all attended tokens feed the T-step failure head.

mod batch;
mod heads;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::SequenceBatch;
pub use heads::{OcclusionHead, OcclusionHeadOutput, Sensor, OCC_HIDDEN};
pub use model::{fuse_step, ForwardMode, FuseOutput, FusionStepOutput, ModelConfig, RoarModel, SequenceVars, StepVars};

use crate::error::{Result, RoarError};

/// Bound of every state component.
pub const STATE_LIMIT: f64 = 10.0;
/// Width of the state and of every token.
pub const STATE_DIM: usize = 64;

/// Architecture variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// State forced to zero at every step.
    NoState,
    /// Token-0 query equals the state (Q = K = V); occlusion losses dropped.
    NoOcclusion,
    /// Token-0 query is the repeated auto occlusion labels.
    FixedOcclusion,
    /// Camera and path only: no LiDAR encoder or LiDAR occlusion head.
    IoRoar,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoState,
        Variant::NoOcclusion,
        Variant::FixedOcclusion,
        Variant::IoRoar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoState => "no_state",
            Variant::NoOcclusion => "no_occlusion",
            Variant::FixedOcclusion => "fixed_occlusion",
            Variant::IoRoar => "io_roar",
        }
    }

    pub fn uses_lidar(self) -> bool {
        self != Variant::IoRoar
    }

    /// Whether the occlusion heads are trained.
    pub fn trains_occlusion(self) -> bool {
        self != Variant::NoOcclusion
    }

    pub fn tokens(self) -> usize {
        if self.uses_lidar() {
            4
        } else {
            3
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = RoarError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            RoarError::invalid(format!(
                "unknown variant {s:?} (expected one of full, no_state, no_occlusion, fixed_occlusion, io_roar)"
            ))
        })
    }
}

/// The recurrent state `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub h: Vec<f64>,
}

impl LatentState {
    pub fn zeros() -> Self {
        LatentState {
            h: vec![0.0; STATE_DIM],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Token-0 query of the fixed-occlusion variant: `[cam, lidar]` repeated.
pub fn repeated_label_query(camera: bool, lidar: bool) -> Vec<f64> {
    let (c, l) = (camera as u8 as f64, lidar as u8 as f64);
    (0..STATE_DIM).map(|i| if i % 2 == 0 { c } else { l }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("roar".parse::<Variant>().is_err());
    }

    #[test]
    fn repeated_query_alternates() {
        let q = repeated_label_query(true, false);
        assert_eq!(q.len(), 64);
        assert_eq!(&q[..4], &[1.0, 0.0, 1.0, 0.0]);
    }
}
