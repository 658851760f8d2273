//! Planar world geometry and the 2-D LiDAR ray caster.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::config::WorldConfig;

/// Smallest range a beam can report.
pub const MIN_RANGE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Everything a beam can hit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldGeometry {
    pub walls: Vec<Segment>,
    pub obstacles: Vec<Obstacle>,
}

impl WorldGeometry {
    /// A straight row: two parallel walls at `±half_width` spanning `[x0, x1]`.
    pub fn straight_row(half_width: f64, x0: f64, x1: f64) -> Self {
        WorldGeometry {
            walls: vec![
                Segment {
                    a: (x0, half_width),
                    b: (x1, half_width),
                },
                Segment {
                    a: (x0, -half_width),
                    b: (x1, -half_width),
                },
            ],
            obstacles: Vec::new(),
        }
    }

    /// Distance along the unit ray from `(ox, oy)` in direction `angle`
    /// to the nearest surface, if any.
    pub fn cast(&self, ox: f64, oy: f64, angle: f64) -> Option<f64> {
        let (dy, dx) = angle.sin_cos();
        let mut best: Option<f64> = None;
        let mut keep = |t: f64| {
            if t > 0.0 && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        for w in &self.walls {
            if let Some(t) = ray_segment(ox, oy, dx, dy, w) {
                keep(t);
            }
        }
        for o in &self.obstacles {
            if let Some(t) = ray_circle(ox, oy, dx, dy, o) {
                keep(t);
            }
        }
        best
    }
}

pub(crate) fn ray_segment(ox: f64, oy: f64, dx: f64, dy: f64, s: &Segment) -> Option<f64> {
    let (ex, ey) = (s.b.0 - s.a.0, s.b.1 - s.a.1);
    let denom = dx * ey - dy * ex;
    if denom.abs() < 1e-12 {
        return None;
    }
    let (wx, wy) = (s.a.0 - ox, s.a.1 - oy);
    let t = (wx * ey - wy * ex) / denom;
    let u = (wx * dy - wy * dx) / denom;
    if t > 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

pub(crate) fn ray_circle(ox: f64, oy: f64, dx: f64, dy: f64, c: &Obstacle) -> Option<f64> {
    let (fx, fy) = (ox - c.x, oy - c.y);
    let b = fx * dx + fy * dy;
    let cc = fx * fx + fy * fy - c.radius * c.radius;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

/// Range returns of one sweep, beam 0 at `heading - fov/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
}

/// Beam angles relative to the sensor heading, radians.
pub fn beam_offsets(config: &WorldConfig) -> Vec<f64> {
    let fov = config.lidar_fov.to_radians();
    let n = config.lidar_beams;
    (0..n)
        .map(|i| -fov / 2.0 + fov * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

pub fn raycast_scan(world: &WorldGeometry, pose: &Pose, config: &WorldConfig) -> LidarScan {
    let max = config.lidar_max_range;
    let ranges = beam_offsets(config)
        .into_iter()
        .map(|off| {
            world
                .cast(pose.x, pose.y, pose.heading + off)
                .map_or(max, |t| t.min(max))
                .max(MIN_RANGE)
        })
        .collect();
    LidarScan { ranges }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorldConfig {
        WorldConfig::default()
    }

    #[test]
    fn empty_world_reads_max_range() {
        let scan = raycast_scan(&WorldGeometry::default(), &Pose::new(0.0, 0.0, 0.3), &cfg());
        assert_eq!(scan.ranges.len(), 1081);
        assert!(scan.ranges.iter().all(|r| *r == 10.0));
    }

    fn wall_ahead() -> WorldGeometry {
        WorldGeometry {
            walls: vec![Segment {
                a: (1.0, -50.0),
                b: (1.0, 50.0),
            }],
            obstacles: vec![],
        }
    }

    #[test]
    fn perpendicular_wall_at_one_meter() {
        let scan = raycast_scan(&wall_ahead(), &Pose::new(0.0, 0.0, 0.0), &cfg());
        assert!((scan.ranges[540] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sixty_degree_beam_reads_twice_the_distance() {
        // Beam 540 + 240 sits at +60° with 0.25° spacing.
        let scan = raycast_scan(&wall_ahead(), &Pose::new(0.0, 0.0, 0.0), &cfg());
        // Independent oracle: parametric line intersection x = t·cos θ = 1.
        let theta = 60f64.to_radians();
        let oracle = 1.0 / theta.cos();
        assert!((scan.ranges[780] - oracle).abs() < 1e-9);
        assert!((scan.ranges[780] - 2.0).abs() < 1e-9);
        assert!((scan.ranges[300] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn circles_are_hit_from_outside_and_inside() {
        let world = WorldGeometry {
            walls: vec![],
            obstacles: vec![Obstacle {
                x: 2.0,
                y: 0.0,
                radius: 0.5,
            }],
        };
        assert!((world.cast(0.0, 0.0, 0.0).unwrap() - 1.5).abs() < 1e-12);
        assert!((world.cast(2.0, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(world.cast(0.0, 0.0, PI).is_none());
    }

    #[test]
    fn ranges_stay_in_bounds() {
        let mut world = WorldGeometry::straight_row(0.38, -2.0, 30.0);
        world.obstacles.push(Obstacle {
            x: 0.0,
            y: 0.0,
            radius: 0.1,
        });
        let scan = raycast_scan(&world, &Pose::new(0.0, 0.0, 0.0), &cfg());
        assert!(scan.ranges.iter().all(|r| *r > 0.0 && *r <= 10.0));
    }

    #[test]
    fn angles_normalize_into_half_open_interval() {
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5) - 0.5).abs() < 1e-15);
        let p = Pose::new(1.0, 1.0, PI / 2.0);
        let (lx, ly) = p.to_local(1.0, 2.0);
        assert!((lx - 1.0).abs() < 1e-12 && ly.abs() < 1e-12);
    }
}
