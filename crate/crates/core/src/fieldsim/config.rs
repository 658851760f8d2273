use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};

/// Parameters of the synthetic crop-row world and its sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Half the row width, meters.
    pub row_half_width: f64,
    /// Distance the robot travels per episode, meters.
    pub row_length: f64,
    /// Obstacles per meter of row.
    pub obstacle_rate: f64,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Canopy occlusion events per meter of row.
    pub occlusion_rate: f64,
    /// Inclusive frame range of canopy occlusion events.
    pub occlusion_duration_range: [usize; 2],
    /// Lateral disturbance events per meter of row.
    pub drift_rate: f64,
    /// Lateral disturbance speed range, m/s.
    pub drift_speed_range: [f64; 2],
    pub drift_duration_range: [usize; 2],
    /// Within this distance of a crop row both sensors are buried in foliage.
    pub contact_margin: f64,
    /// An obstacle on a collision course whose near surface is closer than
    /// this, meters, blocks both sensors.
    pub obstruction_range: f64,
    pub robot_speed: f64,
    pub tick_rate: f64,
    pub lidar_beams: usize,
    /// Degrees.
    pub lidar_fov: f64,
    pub lidar_max_range: f64,
    pub image_height: usize,
    pub image_width: usize,
    /// Camera height above ground, meters.
    pub camera_height: f64,
    /// Horizontal field of view of the camera, degrees.
    pub camera_hfov: f64,
    /// Number of future frames labeled per frame (T).
    pub horizon: usize,
    pub rng_seed: u64,
    /// Camera frames with mean |Laplacian| below this are labeled occluded.
    pub camera_sharpness_min: f64,
    /// Camera frames with grayscale variance below this are labeled occluded.
    pub camera_variance_min: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            row_half_width: 0.38,
            row_length: 20.0,
            obstacle_rate: 0.04,
            obstacle_radius_min: 0.05,
            obstacle_radius_max: 0.15,
            occlusion_rate: 0.1,
            occlusion_duration_range: [1, 3],
            drift_rate: 0.03,
            drift_speed_range: [0.15, 0.35],
            drift_duration_range: [6, 12],
            contact_margin: 0.1,
            obstruction_range: 0.4,
            robot_speed: 0.6,
            tick_rate: 3.0,
            lidar_beams: 1081,
            lidar_fov: 270.0,
            lidar_max_range: 10.0,
            image_height: 48,
            image_width: 64,
            camera_height: 0.35,
            camera_hfov: 90.0,
            horizon: 10,
            rng_seed: 0,
            camera_sharpness_min: 0.045,
            camera_variance_min: 0.00126,
        }
    }
}

impl WorldConfig {
    /// Meters travelled per frame.
    pub fn step_length(&self) -> f64 {
        self.robot_speed / self.tick_rate
    }

    pub fn frames_per_episode(&self) -> usize {
        (self.row_length / self.step_length() + 1e-9).floor() as usize
    }

    /// Angular spacing between adjacent beams, degrees.
    pub fn beam_resolution(&self) -> f64 {
        if self.lidar_beams > 1 {
            self.lidar_fov / (self.lidar_beams - 1) as f64
        } else {
            self.lidar_fov
        }
    }

    /// Returns one message per invalid field.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        check(self.row_half_width > 0.0, "world.row_half_width must be > 0");
        check(self.row_length > 0.0, "world.row_length must be > 0");
        check(self.obstacle_rate >= 0.0, "world.obstacle_rate must be >= 0");
        check(self.occlusion_rate >= 0.0, "world.occlusion_rate must be >= 0");
        check(self.drift_rate >= 0.0, "world.drift_rate must be >= 0");
        check(
            self.obstacle_radius_min > 0.0 && self.obstacle_radius_min <= self.obstacle_radius_max,
            "world.obstacle_radius_min must be in (0, obstacle_radius_max]",
        );
        check(
            self.occlusion_duration_range[0] >= 1
                && self.occlusion_duration_range[0] <= self.occlusion_duration_range[1],
            "world.occlusion_duration_range must be [lo, hi] with 1 <= lo <= hi",
        );
        check(
            self.drift_duration_range[0] >= 1 && self.drift_duration_range[0] <= self.drift_duration_range[1],
            "world.drift_duration_range must be [lo, hi] with 1 <= lo <= hi",
        );
        check(
            self.drift_speed_range[0] >= 0.0 && self.drift_speed_range[0] <= self.drift_speed_range[1],
            "world.drift_speed_range must be [lo, hi] with 0 <= lo <= hi",
        );
        check(
            self.contact_margin >= 0.0 && self.contact_margin < self.row_half_width,
            "world.contact_margin must be in [0, row_half_width)",
        );
        check(self.obstruction_range >= 0.0, "world.obstruction_range must be >= 0");
        check(self.robot_speed > 0.0, "world.robot_speed must be > 0");
        check(self.tick_rate > 0.0, "world.tick_rate must be > 0");
        check(self.lidar_beams >= 2, "world.lidar_beams must be >= 2");
        check(
            self.lidar_fov > 0.0 && self.lidar_fov <= 360.0,
            "world.lidar_fov must be in (0, 360]",
        );
        check(self.lidar_max_range > 0.0, "world.lidar_max_range must be > 0");
        check(
            self.image_height >= 16 && self.image_height.is_multiple_of(2),
            "world.image_height must be even and >= 16",
        );
        check(self.image_width >= 16, "world.image_width must be >= 16");
        check(self.camera_height >= 0.0, "world.camera_height must be >= 0");
        check(
            self.camera_hfov > 0.0 && self.camera_hfov < 180.0,
            "world.camera_hfov must be in (0, 180)",
        );
        check(self.horizon >= 1, "world.horizon must be >= 1");
        check(
            self.camera_sharpness_min >= 0.0,
            "world.camera_sharpness_min must be >= 0",
        );
        check(
            self.camera_variance_min >= 0.0,
            "world.camera_variance_min must be >= 0",
        );
        if self.robot_speed > 0.0 && self.tick_rate > 0.0 {
            check(
                self.frames_per_episode() >= 1,
                "world.row_length shorter than one frame step",
            );
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.problems();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RoarError::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_field_logging() {
        let c = WorldConfig::default();
        c.validate().unwrap();
        assert_eq!(c.horizon, 10);
        assert_eq!(c.lidar_beams, 1081);
        assert!((c.beam_resolution() - 0.25).abs() < 1e-12);
        assert!((c.step_length() - 0.2).abs() < 1e-12);
        assert_eq!(c.frames_per_episode(), 100);
    }

    #[test]
    fn each_bad_field_is_reported() {
        let c = WorldConfig {
            tick_rate: 0.0,
            lidar_fov: 400.0,
            horizon: 0,
            obstacle_rate: -1.0,
            ..WorldConfig::default()
        };
        let errs = c.problems();
        assert_eq!(errs.len(), 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("tick_rate")));
        assert!(c.validate().is_err());
    }
}
