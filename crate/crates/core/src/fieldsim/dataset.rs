//! On-disk episode container.
//!
//! A dataset directory holds two files:
//!
//! * `episodes.jsonl`: one JSON object per line, one line per episode:
//!   `{"seed": u64, "frames": [FrameRecord, ...]}`.
//! * `manifest.json`: `{"format": "roar-episodes", "version": 1,
//!   "config": WorldConfig, "episodes": [{"seed", "frames"}, ...]}`.
//!
//! A `FrameRecord` has the fields
//!
//! | field | content |
//! |---|---|
//! | `scan` | ranges, base-64 of little-endian `f64` |
//! | `camera` | `H·W·3` pixels, row-major HWC, base-64 of little-endian `f32` |
//! | `path` | `H·W` pixels, base-64 of little-endian `f32` |
//! | `waypoints` | `[[x, y], ...]` in the robot frame |
//! | `pose` | `{"x", "y", "heading"}` |
//! | `y_future` | `T` booleans |
//! | `occ_lidar_true`, `occ_camera_true`, `occ_lidar_auto`, `occ_camera_auto` | booleans |
//!
//! Image dimensions come from the manifest config.

use std::io::{BufRead, BufReader};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::camera::{CameraFrame, PathImage};
use super::config::WorldConfig;
use super::geometry::{LidarScan, Pose};
use super::sim::{Episode, Frame};
use crate::error::{Result, RoarError};
use crate::util::write_atomic_with;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_NAME: &str = "roar-episodes";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub seed: u64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: WorldConfig,
    pub episodes: Vec<EpisodeEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    scan: String,
    camera: String,
    path: String,
    waypoints: Vec<(f64, f64)>,
    pose: Pose,
    y_future: Vec<bool>,
    occ_lidar_true: bool,
    occ_camera_true: bool,
    occ_lidar_auto: bool,
    occ_camera_auto: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    seed: u64,
    frames: Vec<FrameRecord>,
}

pub fn encode_f64s<I: IntoIterator<Item = f64>>(values: I) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode_bytes(text: &str, expected: usize, width: usize, what: &str) -> Result<Vec<u8>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| RoarError::format("dataset", format!("{what}: bad base-64: {e}")))?;
    if bytes.len() != expected * width {
        return Err(RoarError::format(
            "dataset",
            format!("{what}: expected {expected} values, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes)
}

pub fn decode_f64s(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    Ok(decode_bytes(text, expected, 8, what)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn encode_f32s(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32s(text: &str, expected: usize, what: &str) -> Result<Vec<f32>> {
    Ok(decode_bytes(text, expected, 4, what)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect())
}

fn frame_record(f: &Frame) -> FrameRecord {
    FrameRecord {
        scan: encode_f64s(f.scan.ranges.iter().copied()),
        camera: encode_f32s(&f.camera.pixels),
        path: encode_f32s(&f.path.pixels),
        waypoints: f.path.waypoints.clone(),
        pose: f.pose,
        y_future: f.y_future.clone(),
        occ_lidar_true: f.occ_lidar_true,
        occ_camera_true: f.occ_camera_true,
        occ_lidar_auto: f.occ_lidar_auto,
        occ_camera_auto: f.occ_camera_auto,
    }
}

fn frame_from_record(r: FrameRecord, cfg: &WorldConfig) -> Result<Frame> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    if r.y_future.len() != cfg.horizon {
        return Err(RoarError::format(
            "dataset",
            format!("y_future has {} entries, horizon is {}", r.y_future.len(), cfg.horizon),
        ));
    }
    Ok(Frame {
        scan: LidarScan {
            ranges: decode_f64s(&r.scan, cfg.lidar_beams, "scan")?,
        },
        camera: CameraFrame {
            height: h,
            width: w,
            pixels: decode_f32s(&r.camera, h * w * 3, "camera")?,
        },
        path: PathImage {
            height: h,
            width: w,
            pixels: decode_f32s(&r.path, h * w, "path")?,
            waypoints: r.waypoints,
        },
        y_future: r.y_future,
        occ_lidar_true: r.occ_lidar_true,
        occ_camera_true: r.occ_camera_true,
        occ_lidar_auto: r.occ_lidar_auto,
        occ_camera_auto: r.occ_camera_auto,
        pose: r.pose,
    })
}

/// Writes `episodes` (which must share one config) into `dir`.
pub fn write_dataset(dir: &Path, episodes: &[Episode]) -> Result<Manifest> {
    let config = match episodes.first() {
        Some(e) => e.config.clone(),
        None => return Err(RoarError::invalid("cannot write an empty dataset")),
    };
    if episodes.iter().any(|e| e.config != config) {
        return Err(RoarError::invalid("episodes in one dataset must share a config"));
    }
    write_atomic_with(&dir.join(EPISODES_FILE), |w| {
        for e in episodes {
            let rec = EpisodeRecord {
                seed: e.seed,
                frames: e.frames.iter().map(frame_record).collect(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let manifest = Manifest {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        config,
        episodes: episodes
            .iter()
            .map(|e| EpisodeEntry {
                seed: e.seed,
                frames: e.frames.len(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::util::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| RoarError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| RoarError::format("dataset manifest", e.to_string()))?;
    if m.format != FORMAT_NAME || m.version != FORMAT_VERSION {
        return Err(RoarError::format(
            "dataset manifest",
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    m.config.validate()?;
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(EPISODES_FILE);
    let file = std::fs::File::open(&path).map_err(|e| RoarError::io(&path, e))?;
    let mut out = Vec::with_capacity(manifest.episodes.len());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RoarError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord =
            serde_json::from_str(&line).map_err(|e| RoarError::format("dataset", format!("line {}: {e}", i + 1)))?;
        let frames = rec
            .frames
            .into_iter()
            .map(|f| frame_from_record(f, &manifest.config))
            .collect::<Result<Vec<_>>>()?;
        out.push(Episode {
            frames,
            config: manifest.config.clone(),
            seed: rec.seed,
        });
    }
    let listed: Vec<(u64, usize)> = manifest.episodes.iter().map(|e| (e.seed, e.frames)).collect();
    let found: Vec<(u64, usize)> = out.iter().map(|e| (e.seed, e.frames.len())).collect();
    if listed != found {
        return Err(RoarError::format("dataset", "episode file disagrees with manifest"));
    }
    Ok(out)
}
