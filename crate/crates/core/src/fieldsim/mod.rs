//! Synthetic crop-row world: episode generation, sensors, labels, storage.

mod camera;
mod config;
mod dataset;
mod geometry;
mod labels;
mod sim;

pub use camera::{occluded_camera, rasterize_path, render_camera, CameraFrame, CameraModel, PathImage};
pub use config::WorldConfig;
pub use dataset::{read_dataset, read_manifest, write_dataset, EpisodeEntry, Manifest, EPISODES_FILE, MANIFEST_FILE};
pub use geometry::{beam_offsets, normalize_angle, raycast_scan, LidarScan, Obstacle, Pose, Segment, WorldGeometry};
pub use labels::{
    calibrate_camera_thresholds, label_camera_occlusion, label_failures, label_lidar_occlusion, lidar_occlusion_sector,
    lidar_sector_median, sharpness_and_variance, LIDAR_OCCLUSION_RANGE,
};
pub use sim::{
    corrupt_scan, generate_episodes, instantaneous_failure, obstacle_contact, obstructed, planned_waypoints,
    simulate_episode, simulate_layout, simulate_seeded, DriftEvent, Episode, Frame, OccludedSensors, OcclusionEvent,
    WorldLayout, COLLISION_CLEARANCE,
};
