//! Simulates one crop-row episode and prints its frame timeline; optionally
//! writes a dataset of `count` episodes to `dir`.
//!
//! ```text
//! cargo run --release --example simulate_world -- [seed] [dir count]
//! ```

use std::path::Path;

use roar::fieldsim::{generate_episodes, simulate_seeded, write_dataset, WorldConfig};

fn flag(b: bool, c: char) -> char {
    if b {
        c
    } else {
        '.'
    }
}

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = WorldConfig::default();
    let episode = simulate_seeded(&config, seed)?;

    println!(
        "episode seed {seed}: {} frames at {} Hz",
        episode.len(),
        config.tick_rate
    );
    println!("frame      x      y  cam lidar  y_future");
    for (t, f) in episode.frames.iter().enumerate() {
        let future: String = f.y_future.iter().map(|&y| flag(y, '#')).collect();
        println!(
            "{t:5} {:6.2} {:6.2}   {}{}   {}{}   {future}",
            f.pose.x,
            f.pose.y,
            flag(f.occ_camera_true, 'T'),
            flag(f.occ_camera_auto, 'A'),
            flag(f.occ_lidar_true, 'T'),
            flag(f.occ_lidar_auto, 'A'),
        );
    }
    println!("T = simulator ground truth, A = automatic labeler, # = failure at that horizon step");

    if let (Some(dir), Some(count)) = (args.get(1), args.get(2).and_then(|c| c.parse().ok())) {
        let manifest = write_dataset(Path::new(dir), &generate_episodes(&config, count)?)?;
        println!("wrote {} episodes to {dir}", manifest.episodes.len());
    }
    Ok(())
}
