//! Episode generation: a robot following the row centerline under
//! stochastic obstacles, lateral disturbances and canopy occlusions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{occluded_camera, rasterize_path, render_camera, CameraFrame, CameraModel, PathImage};
use super::config::WorldConfig;
use super::geometry::{beam_offsets, raycast_scan, LidarScan, Obstacle, Pose, WorldGeometry};
use super::labels::{label_camera_occlusion, label_failures, label_lidar_occlusion};
use crate::error::Result;
use crate::util::mix_seed;

/// A robot center within `radius + COLLISION_CLEARANCE` of an obstacle center collides.
pub const COLLISION_CLEARANCE: f64 = 0.05;
/// Pure-pursuit lookahead distance, meters.
pub const LOOKAHEAD: f64 = 1.0;
/// Yaw-rate limit, rad/s.
pub const MAX_YAW_RATE: f64 = 0.8;
/// Planned-path rollout: waypoint count and spacing.
pub const PLAN_WAYPOINTS: usize = 15;
pub const PLAN_SPACING: f64 = 0.2;
/// Crop stalks stop lateral motion this far beyond the row edge.
pub const LATERAL_SLACK: f64 = 0.1;
/// Corrupted LiDAR returns are drawn from this range, meters.
pub const OCCLUDED_RANGE: (f64, f64) = (0.05, 0.25);
/// Bounds of the corrupted LiDAR sector width, degrees (scaled by `fov / 270`).
pub const OCCLUDED_SECTOR_DEG: (f64, f64) = (215.0, 270.0);
const SUBSTEPS: usize = 4;
/// Obstacles and drifts are not placed in the first meters of the row.
const CLEAR_START: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccludedSensors {
    Camera,
    Lidar,
    Both,
}

impl OccludedSensors {
    pub fn camera(self) -> bool {
        matches!(self, OccludedSensors::Camera | OccludedSensors::Both)
    }

    pub fn lidar(self) -> bool {
        matches!(self, OccludedSensors::Lidar | OccludedSensors::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionEvent {
    pub start_frame: usize,
    pub duration: usize,
    pub sensors: OccludedSensors,
}

/// A lateral push (world `y` velocity, m/s) active for `duration` frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub start_frame: usize,
    pub duration: usize,
    pub velocity: f64,
}

/// Everything stochastic about an episode except sensor noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldLayout {
    pub start: Option<Pose>,
    pub obstacles: Vec<Obstacle>,
    pub drifts: Vec<DriftEvent>,
    pub occlusions: Vec<OcclusionEvent>,
}

fn event_positions<R: Rng>(rate: f64, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 || hi <= lo {
        return out;
    }
    let mut x = lo;
    loop {
        let u: f64 = rng.gen();
        x += -(1.0 - u).ln() / rate;
        if x >= hi {
            return out;
        }
        out.push(x);
    }
}

impl WorldLayout {
    /// Samples event positions as Poisson processes along the row.
    pub fn sample(config: &WorldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
        let hw = config.row_half_width;
        let step = config.step_length();
        let frames = config.frames_per_episode();
        let start = Pose::new(0.0, rng.gen_range(-0.1..=0.1), rng.gen_range(-0.1..=0.1));
        let obstacles = event_positions(config.obstacle_rate, CLEAR_START, config.row_length + 2.0, &mut rng)
            .into_iter()
            .map(|x| {
                let radius = rng.gen_range(config.obstacle_radius_min..=config.obstacle_radius_max);
                let reach = (hw - radius).max(0.0);
                Obstacle {
                    x,
                    y: rng.gen_range(-reach..=reach),
                    radius,
                }
            })
            .collect();
        let frame_of = |x: f64| ((x / step) as usize).min(frames.saturating_sub(1));
        let drifts = event_positions(config.drift_rate, CLEAR_START, config.row_length, &mut rng)
            .into_iter()
            .map(|x| {
                let [lo, hi] = config.drift_duration_range;
                let [vlo, vhi] = config.drift_speed_range;
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                DriftEvent {
                    start_frame: frame_of(x),
                    duration: rng.gen_range(lo..=hi),
                    velocity: sign * rng.gen_range(vlo..=vhi),
                }
            })
            .collect();
        let occlusions = event_positions(config.occlusion_rate, 0.0, config.row_length, &mut rng)
            .into_iter()
            .map(|x| {
                let [lo, hi] = config.occlusion_duration_range;
                let u: f64 = rng.gen();
                let sensors = if u < 0.4 {
                    OccludedSensors::Both
                } else if u < 0.7 {
                    OccludedSensors::Camera
                } else {
                    OccludedSensors::Lidar
                };
                OcclusionEvent {
                    start_frame: frame_of(x),
                    duration: rng.gen_range(lo..=hi),
                    sensors,
                }
            })
            .collect();
        WorldLayout {
            start: Some(start),
            obstacles,
            drifts,
            occlusions,
        }
    }

    fn drift_velocity(&self, frame: usize) -> f64 {
        self.drifts
            .iter()
            .filter(|d| frame >= d.start_frame && frame < d.start_frame + d.duration)
            .map(|d| d.velocity)
            .sum()
    }

    fn canopy(&self, frame: usize) -> (bool, bool) {
        self.occlusions
            .iter()
            .filter(|o| frame >= o.start_frame && frame < o.start_frame + o.duration)
            .fold((false, false), |(c, l), o| {
                (c || o.sensors.camera(), l || o.sensors.lidar())
            })
    }
}

/// One time step of multi-modal input plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub scan: LidarScan,
    pub camera: CameraFrame,
    pub path: PathImage,
    /// Failure at steps `t..t+T-1`.
    pub y_future: Vec<bool>,
    pub occ_lidar_true: bool,
    pub occ_camera_true: bool,
    pub occ_lidar_auto: bool,
    pub occ_camera_auto: bool,
    /// Robot pose when the frame was captured.
    pub pose: Pose,
}

impl Frame {
    pub fn is_anomalous(&self) -> bool {
        self.y_future.iter().any(|&y| y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub config: WorldConfig,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames whose horizon runs past the end of the recording.
    pub fn tail_start(&self) -> usize {
        self.frames.len().saturating_sub(self.config.horizon.saturating_sub(1))
    }

    pub fn instantaneous_failures(&self) -> Vec<bool> {
        self.frames
            .iter()
            .map(|f| f.y_future.first().copied().unwrap_or(false))
            .collect()
    }
}

/// Heading rate commanded by pure pursuit toward the centerline.
fn pursuit_yaw_rate(pose: &Pose, speed: f64) -> f64 {
    let (tx, ty) = pose.to_local(pose.x + LOOKAHEAD, 0.0);
    let d2 = tx * tx + ty * ty;
    let curvature = 2.0 * ty / d2;
    (speed * curvature).clamp(-MAX_YAW_RATE, MAX_YAW_RATE)
}

/// Advances one frame period; `drift` is a world-frame lateral velocity.
fn advance(pose: &Pose, config: &WorldConfig, drift: f64) -> Pose {
    let dt = 1.0 / config.tick_rate / SUBSTEPS as f64;
    let v = config.robot_speed;
    let limit = config.row_half_width + LATERAL_SLACK;
    let mut p = *pose;
    for _ in 0..SUBSTEPS {
        let w = pursuit_yaw_rate(&p, v);
        let heading = p.heading + w * dt;
        let (s, c) = heading.sin_cos();
        p = Pose::new(
            p.x + v * c * dt,
            (p.y + (v * s + drift) * dt).clamp(-limit, limit),
            heading,
        );
    }
    p
}

/// Undisturbed controller rollout, as waypoints in the robot frame.
pub fn planned_waypoints(pose: &Pose, config: &WorldConfig) -> Vec<(f64, f64)> {
    let rollout = WorldConfig {
        robot_speed: PLAN_SPACING * config.tick_rate,
        ..config.clone()
    };
    let mut p = *pose;
    (0..PLAN_WAYPOINTS)
        .map(|_| {
            p = advance(&p, &rollout, 0.0);
            pose.to_local(p.x, p.y)
        })
        .collect()
}

pub fn obstacle_contact(pose: &Pose, world: &WorldGeometry) -> bool {
    world
        .obstacles
        .iter()
        .any(|o| (pose.x - o.x).hypot(pose.y - o.y) < o.radius + COLLISION_CLEARANCE)
}

pub fn instantaneous_failure(pose: &Pose, world: &WorldGeometry, config: &WorldConfig) -> bool {
    pose.y.abs() > config.row_half_width || obstacle_contact(pose, world)
}

/// True when an obstacle on a collision course is within `obstruction_range`.
pub fn obstructed(pose: &Pose, world: &WorldGeometry, config: &WorldConfig) -> bool {
    world.obstacles.iter().any(|o| {
        let (ahead, lateral) = pose.to_local(o.x, o.y);
        ahead > 0.0 && lateral.abs() < o.radius + COLLISION_CLEARANCE && ahead - o.radius < config.obstruction_range
    })
}

/// Overwrites the centered sector with short foliage returns.
pub fn corrupt_scan<R: Rng + ?Sized>(scan: &mut LidarScan, config: &WorldConfig, rng: &mut R) {
    let scale = config.lidar_fov / 270.0;
    let width = rng.gen_range(OCCLUDED_SECTOR_DEG.0..=OCCLUDED_SECTOR_DEG.1) * scale;
    let half = width.to_radians() / 2.0;
    for (r, off) in scan.ranges.iter_mut().zip(beam_offsets(config)) {
        if off.abs() <= half + 1e-9 {
            *r = rng.gen_range(OCCLUDED_RANGE.0..=OCCLUDED_RANGE.1);
        }
    }
}

/// Simulates the episode for `config.rng_seed`.
pub fn simulate_episode(config: &WorldConfig) -> Result<Episode> {
    simulate_seeded(config, config.rng_seed)
}

pub fn simulate_seeded(config: &WorldConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    let layout = WorldLayout::sample(config, seed);
    simulate_layout(config, &layout, seed)
}

/// Simulates a fixed layout; `seed` drives only sensor noise.
pub fn simulate_layout(config: &WorldConfig, layout: &WorldLayout, seed: u64) -> Result<Episode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut world = WorldGeometry::straight_row(config.row_half_width, -2.0, config.row_length + 5.0);
    world.obstacles = layout.obstacles.clone();
    let cam = CameraModel::from_config(config);
    let n = config.frames_per_episode();
    let contact = config.row_half_width - config.contact_margin;

    let mut pose = layout.start.unwrap_or(Pose::new(0.0, 0.0, 0.0));
    let mut stuck = false;
    let mut partial = Vec::with_capacity(n);
    let mut failures = Vec::with_capacity(n);
    for t in 0..n {
        let (canopy_cam, canopy_lidar) = layout.canopy(t);
        let touching = pose.y.abs() > contact || obstructed(&pose, &world, config);
        let occ_camera_true = canopy_cam || touching;
        let occ_lidar_true = canopy_lidar || touching;

        let mut scan = raycast_scan(&world, &pose, config);
        if occ_lidar_true {
            corrupt_scan(&mut scan, config, &mut rng);
        }
        let camera = if occ_camera_true {
            occluded_camera(config.image_height, config.image_width, &mut rng)
        } else {
            render_camera(&world, &pose, &cam, &mut rng)
        };
        let path = rasterize_path(&planned_waypoints(&pose, config), &cam);
        failures.push(instantaneous_failure(&pose, &world, config));
        partial.push((scan, camera, path, occ_lidar_true, occ_camera_true, pose));
        // Rigid obstacles halt the robot for the rest of the episode.
        stuck = stuck || obstacle_contact(&pose, &world);
        if !stuck {
            pose = advance(&pose, config, layout.drift_velocity(t));
        }
    }

    let frames = partial
        .into_iter()
        .enumerate()
        .map(
            |(t, (scan, camera, path, occ_lidar_true, occ_camera_true, pose))| Frame {
                occ_lidar_auto: label_lidar_occlusion(&scan, config),
                occ_camera_auto: label_camera_occlusion(&camera, config),
                y_future: label_failures(&failures, t, config.horizon),
                scan,
                camera,
                path,
                occ_lidar_true,
                occ_camera_true,
                pose,
            },
        )
        .collect();
    Ok(Episode {
        frames,
        config: config.clone(),
        seed,
    })
}

/// `count` episodes with seeds derived from `config.rng_seed`.
pub fn generate_episodes(config: &WorldConfig, count: usize) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| simulate_seeded(config, mix_seed(config.rng_seed, 1000 + i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> WorldConfig {
        WorldConfig {
            obstacle_rate: 0.0,
            occlusion_rate: 0.0,
            drift_rate: 0.0,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn poisson_positions_are_sorted_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = event_positions(0.5, 1.0, 30.0, &mut rng);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert!(xs.iter().all(|x| (1.0..30.0).contains(x)));
        assert!(event_positions(0.0, 0.0, 10.0, &mut rng).is_empty());
    }

    #[test]
    fn robot_advances_one_step_per_frame_on_centerline() {
        let cfg = quiet();
        let p = advance(&Pose::new(0.0, 0.0, 0.0), &cfg, 0.0);
        assert!((p.x - 0.2).abs() < 1e-12 && p.y == 0.0 && p.heading == 0.0);
    }

    #[test]
    fn controller_recovers_from_offset() {
        let cfg = quiet();
        let mut p = Pose::new(0.0, 0.25, 0.0);
        for _ in 0..40 {
            p = advance(&p, &cfg, 0.0);
        }
        assert!(p.y.abs() < 0.05, "{p:?}");
    }

    #[test]
    fn planned_path_heads_back_toward_centerline() {
        let cfg = quiet();
        let wps = planned_waypoints(&Pose::new(0.0, 0.2, 0.0), &cfg);
        assert_eq!(wps.len(), PLAN_WAYPOINTS);
        assert!(wps.last().unwrap().1 < -0.1);
        assert!(wps.windows(2).all(|w| w[1].0 > w[0].0));
    }

    #[test]
    fn corrupted_scan_has_low_median() {
        let cfg = WorldConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut scan = LidarScan {
                ranges: vec![10.0; 1081],
            };
            corrupt_scan(&mut scan, &cfg, &mut rng);
            assert!(label_lidar_occlusion(&scan, &cfg));
            assert!(scan.ranges.iter().all(|r| *r > 0.0 && *r <= 10.0));
        }
    }
}
