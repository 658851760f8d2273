//! Pinhole camera: scene rendering and planned-path rasterization.

use rand::Rng;

use super::config::WorldConfig;
use super::geometry::{ray_circle, ray_segment, Pose, WorldGeometry};

/// Row-major `H×W×3` image, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl CameraFrame {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        CameraFrame {
            height,
            width,
            pixels: rgb.iter().copied().cycle().take(height * width * 3).collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.pixels[(r * self.width + c) * 3 + ch]
    }

    /// Luma, `H×W`.
    pub fn grayscale(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

/// Row-major `H×W` single-channel image of the projected planned path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    /// Source waypoints in the robot frame, meters.
    pub waypoints: Vec<(f64, f64)>,
}

impl PathImage {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.width + c]
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|p| *p == 0.0)
    }
}

/// Forward-looking pinhole camera with zero pitch. Pixel centers sit on
/// integer coordinates; the principal point is `(W/2, H/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Height of the optical center above the ground plane.
    pub mount_height: f64,
}

/// Points closer than this to the image plane are not projected.
const NEAR_PLANE: f64 = 0.05;

impl CameraModel {
    pub fn from_config(config: &WorldConfig) -> Self {
        let f = config.image_width as f64 / 2.0 / (config.camera_hfov.to_radians() / 2.0).tan();
        CameraModel {
            width: config.image_width,
            height: config.image_height,
            fx: f,
            fy: f,
            cx: config.image_width as f64 / 2.0,
            cy: config.image_height as f64 / 2.0,
            mount_height: config.camera_height,
        }
    }

    /// Projects a point given in the camera frame (x forward, y left, z up).
    pub fn project(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
        if x < NEAR_PLANE {
            return None;
        }
        Some((self.cx - self.fx * y / x, self.cy - self.fy * z / x))
    }

    /// Projects a ground point given in the robot frame.
    pub fn project_ground(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.project(x, y, -self.mount_height)
    }

    /// Unit-free ray direction through pixel `(r, c)` in the camera frame.
    fn pixel_ray(&self, r: usize, c: usize) -> (f64, f64, f64) {
        (1.0, -(c as f64 - self.cx) / self.fx, -(r as f64 - self.cy) / self.fy)
    }
}

/// Crop rows are drawn this tall.
const WALL_HEIGHT: f64 = 1.2;
const OBSTACLE_HEIGHT: f64 = 0.45;

fn texture(a: f64, b: f64) -> f64 {
    // Cheap deterministic high-frequency pattern.
    let v = (a * 12.9898 + b * 78.233).sin() * 43758.5453;
    v - v.floor()
}

/// Renders the row as seen from `pose`, with mild per-pixel sensor noise.
pub fn render_camera<R: Rng + ?Sized>(
    world: &WorldGeometry,
    pose: &Pose,
    cam: &CameraModel,
    rng: &mut R,
) -> CameraFrame {
    let (s, c) = pose.heading.sin_cos();
    let mut pixels = Vec::with_capacity(cam.width * cam.height * 3);
    for r in 0..cam.height {
        for col in 0..cam.width {
            let (lx, ly, lz) = cam.pixel_ray(r, col);
            let (dx, dy) = (c * lx - s * ly, s * lx + c * ly);
            let dz = lz;
            let horiz = (dx * dx + dy * dy).sqrt();
            let (ux, uy) = (dx / horiz, dy / horiz);
            let mut best = f64::INFINITY;
            let mut rgb = {
                let t = (r as f64 / cam.height as f64).min(1.0);
                [0.55 + 0.15 * t, 0.7 + 0.1 * t, 0.95 - 0.05 * t]
            };
            if dz < 0.0 {
                let t = cam.mount_height / -dz;
                let (gx, gy) = (pose.x + t * dx, pose.y + t * dy);
                let n = texture((gx * 8.0).floor(), (gy * 8.0).floor());
                let stripe = 0.5 + 0.5 * (gx * 9.0).sin() * (gy * 11.0).cos();
                let v = 0.25 + 0.2 * n + 0.1 * stripe;
                rgb = [v * 1.5, v * 1.1, v * 0.7];
                best = t;
            }
            for w in &world.walls {
                if let Some(t) = ray_segment(pose.x, pose.y, ux, uy, w) {
                    let t3 = t / horiz;
                    let z = cam.mount_height + t3 * dz;
                    if t3 < best && (0.0..=WALL_HEIGHT).contains(&z) {
                        best = t3;
                        let along = pose.x + t * ux;
                        let n = texture((along * 14.0).floor(), (z * 14.0).floor());
                        let stalk = 0.5 + 0.5 * (along * 40.0).sin();
                        let g = 0.3 + 0.25 * n + 0.15 * stalk;
                        rgb = [0.25 * g, g, 0.2 * g];
                    }
                }
            }
            for o in &world.obstacles {
                if let Some(t) = ray_circle(pose.x, pose.y, ux, uy, o) {
                    let t3 = t / horiz;
                    let z = cam.mount_height + t3 * dz;
                    if t3 < best && (0.0..=OBSTACLE_HEIGHT).contains(&z) {
                        best = t3;
                        let shade = 0.6 + 0.4 * texture((z * 20.0).floor(), (uy.atan2(ux) * 50.0).floor());
                        rgb = [0.85 * shade, 0.3 * shade, 0.15 * shade];
                    }
                }
            }
            for v in rgb {
                let noisy = v + rng.gen_range(-0.01..=0.01);
                pixels.push(noisy.clamp(0.0, 1.0) as f32);
            }
        }
    }
    CameraFrame {
        height: cam.height,
        width: cam.width,
        pixels,
    }
}

/// A lens covered by foliage: a flat leaf color plus faint noise.
pub fn occluded_camera<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> CameraFrame {
    let u: f32 = rng.gen();
    let base = [0.12 + 0.1 * u, 0.28 + 0.15 * u, 0.08 + 0.05 * u];
    let mut pixels = Vec::with_capacity(height * width * 3);
    for _ in 0..height * width {
        for b in base {
            pixels.push((b + rng.gen_range(-0.02f32..=0.02)).clamp(0.0, 1.0));
        }
    }
    CameraFrame { height, width, pixels }
}

/// Projects ground waypoints (robot frame) and joins them with
/// anti-aliased 1-pixel segments of intensity 1 on a zero background.
///
/// Waypoints behind the camera are dropped; if none remain the image is
/// blank.
pub fn rasterize_path(waypoints: &[(f64, f64)], cam: &CameraModel) -> PathImage {
    let mut pixels = vec![0.0f32; cam.width * cam.height];
    let projected: Vec<(f64, f64)> = waypoints
        .iter()
        .filter_map(|(x, y)| cam.project_ground(*x, *y))
        .collect();
    match projected.len() {
        0 => {}
        1 => draw_segment(&mut pixels, cam, projected[0], projected[0]),
        _ => {
            for pair in projected.windows(2) {
                draw_segment(&mut pixels, cam, pair[0], pair[1]);
            }
        }
    }
    PathImage {
        height: cam.height,
        width: cam.width,
        pixels,
        waypoints: waypoints.to_vec(),
    }
}

/// Intensity `1 - distance` to the segment, max-composited.
fn draw_segment(pixels: &mut [f32], cam: &CameraModel, a: (f64, f64), b: (f64, f64)) {
    let (u0, v0) = a;
    let (u1, v1) = b;
    let lo_u = (u0.min(u1) - 1.0).floor().max(0.0);
    let hi_u = (u0.max(u1) + 1.0).ceil().min(cam.width as f64 - 1.0);
    let lo_v = (v0.min(v1) - 1.0).floor().max(0.0);
    let hi_v = (v0.max(v1) + 1.0).ceil().min(cam.height as f64 - 1.0);
    if lo_u > hi_u || lo_v > hi_v {
        return;
    }
    let (eu, ev) = (u1 - u0, v1 - v0);
    let len2 = eu * eu + ev * ev;
    for r in lo_v as usize..=hi_v as usize {
        for c in lo_u as usize..=hi_u as usize {
            let (pu, pv) = (c as f64, r as f64);
            let t = if len2 > 0.0 {
                (((pu - u0) * eu + (pv - v0) * ev) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qu, qv) = (u0 + t * eu, v0 + t * ev);
            let d = ((pu - qu).powi(2) + (pv - qv).powi(2)).sqrt();
            let val = (1.0 - d).max(0.0) as f32;
            let px = &mut pixels[r * cam.width + c];
            if val > *px {
                *px = val;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::from_config(&WorldConfig::default())
    }

    #[test]
    fn empty_waypoints_give_blank_image() {
        let img = rasterize_path(&[], &cam());
        assert!(img.is_blank());
        assert_eq!(img.pixels.len(), 48 * 64);
    }

    #[test]
    fn waypoints_behind_camera_give_blank_image() {
        let img = rasterize_path(&[(-1.0, 0.0), (-0.5, 0.2), (0.0, 0.0)], &cam());
        assert!(img.is_blank());
    }

    #[test]
    fn point_on_optical_axis_lights_image_center() {
        let cam = CameraModel {
            mount_height: 0.0,
            ..cam()
        };
        // Pinhole by hand: u = cx - fx·0/1 = 32, v = cy - fy·0/1 = 24.
        let img = rasterize_path(&[(1.0, 0.0)], &cam);
        assert_eq!(img.get(24, 32), 1.0);
        let lit = img.pixels.iter().filter(|p| **p > 0.0).count();
        assert_eq!(lit, 1);
    }

    #[test]
    fn straight_path_is_left_right_symmetric() {
        let pts: Vec<(f64, f64)> = (1..=15).map(|i| (0.2 * i as f64 + 0.3, 0.0)).collect();
        let cam = cam();
        let img = rasterize_path(&pts, &cam);
        assert!(!img.is_blank());
        for r in 0..cam.height {
            let row: Vec<(usize, f32)> = (0..cam.width)
                .map(|c| (c, img.get(r, c)))
                .filter(|(_, v)| *v > 0.0)
                .collect();
            if row.is_empty() {
                continue;
            }
            let mass: f32 = row.iter().map(|(_, v)| v).sum();
            let centroid = row.iter().map(|(c, v)| *c as f32 * v).sum::<f32>() / mass;
            assert!((centroid as f64 - cam.cx).abs() <= 1.0, "row {r}: {centroid}");
        }
        // Everything lies in the lower half.
        assert!((0..cam.height / 2).all(|r| (0..cam.width).all(|c| img.get(r, c) == 0.0)));
    }

    #[test]
    fn rendered_frames_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let world = WorldGeometry::straight_row(0.38, -2.0, 30.0);
        let f = render_camera(&world, &Pose::new(0.0, 0.1, 0.2), &cam(), &mut rng);
        assert_eq!(f.pixels.len(), 48 * 64 * 3);
        assert!(f.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        let o = occluded_camera(48, 64, &mut rng);
        assert!(o.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
