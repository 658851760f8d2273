//! Fits the camera occlusion thresholds against simulator ground truth and
//! reports how often each automatic labeler agrees with it.
//!
//! ```text
//! cargo run --release --example calibrate_labelers -- [episodes]
//! ```

use roar::fieldsim::{calibrate_camera_thresholds, generate_episodes, sharpness_and_variance, WorldConfig};

fn main() -> roar::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let config = WorldConfig::default();
    let start = std::time::Instant::now();
    let episodes = generate_episodes(&config, count)?;
    println!("generated {count} episodes in {:.1}s", start.elapsed().as_secs_f64());

    let frames: Vec<_> = episodes.iter().flat_map(|e| &e.frames).collect();
    let samples: Vec<(f64, f64, bool)> = frames
        .iter()
        .map(|f| {
            let (s, v) = sharpness_and_variance(&f.camera);
            (s, v, f.occ_camera_true)
        })
        .collect();
    let summarize = |occluded: bool| {
        let pick: Vec<_> = samples.iter().filter(|s| s.2 == occluded).collect();
        let (mut s_lo, mut s_hi, mut v_lo, mut v_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (s, v, _) in &pick {
            s_lo = s_lo.min(*s);
            s_hi = s_hi.max(*s);
            v_lo = v_lo.min(*v);
            v_hi = v_hi.max(*v);
        }
        println!(
            "{:>8}: {:5} frames  sharpness [{s_lo:.5}, {s_hi:.5}]  variance [{v_lo:.6}, {v_hi:.6}]",
            if occluded { "occluded" } else { "clear" },
            pick.len()
        );
    };
    summarize(false);
    summarize(true);

    let (s_min, v_min) = calibrate_camera_thresholds(&samples);
    println!("fitted camera_sharpness_min = {s_min:.6}, camera_variance_min = {v_min:.6}");
    println!(
        "configured camera_sharpness_min = {}, camera_variance_min = {}",
        config.camera_sharpness_min, config.camera_variance_min
    );

    let n = frames.len() as f64;
    let cam = frames.iter().filter(|f| f.occ_camera_auto == f.occ_camera_true).count() as f64 / n;
    let lidar = frames.iter().filter(|f| f.occ_lidar_auto == f.occ_lidar_true).count() as f64 / n;
    let occ_cam = frames.iter().filter(|f| f.occ_camera_true).count() as f64 / n;
    let occ_lidar = frames.iter().filter(|f| f.occ_lidar_true).count() as f64 / n;
    let anomalous = frames.iter().filter(|f| f.is_anomalous()).count() as f64 / n;
    let failing = frames.iter().filter(|f| f.y_future[0]).count() as f64 / n;
    println!(
        "camera auto/true agreement {:.4}, lidar auto/true agreement {:.4}",
        cam, lidar
    );
    println!("occluded: camera {occ_cam:.3}, lidar {occ_lidar:.3}; anomalous frames {anomalous:.3}; failing now {failing:.3}");
    Ok(())
}
