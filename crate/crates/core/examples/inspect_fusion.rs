//! Trains briefly, then steps the fused model through one held-out episode and
//! prints occlusion estimates, the recurrent state norm and the failure
//! forecast per frame.
//!
//! ```text
//! cargo run --release --example inspect_fusion -- [variant] [train episodes] [epochs]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roar::fieldsim::{generate_episodes, WorldConfig};
use roar::fusion::{ForwardMode, Variant};
use roar::pipeline::{train, TrainConfig};

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let variant: Variant = args.first().map_or(Ok(Variant::Full), |v| v.parse())?;
    let (n_train, epochs) = (arg(1, 60), arg(2, 6));

    let world = WorldConfig::default();
    let mut episodes = generate_episodes(&world, n_train + 1)?;
    let held_out = episodes.pop().expect("one held-out episode");
    let config = TrainConfig {
        variant,
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &episodes, &mut |e| {
        println!("epoch {:2}  total {:.4}", e.epoch, e.loss.total);
        Ok(())
    })?;

    let steps = outcome.model.roar_forward(
        &outcome.final_params,
        &held_out.frames,
        ForwardMode::EVAL,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    println!("frame  cam label/pred  lidar label/pred   |h|  max y_hat  anomalous");
    for (t, (f, s)) in held_out.frames.iter().zip(&steps).enumerate() {
        let lidar = s.y_lidar.map_or("   -".to_string(), |p| format!("{p:.2}"));
        println!(
            "{t:5}  {:>5} {:.2}      {:>5} {lidar}      {:5.2}  {:.3}      {}",
            f.occ_camera_auto,
            s.y_camera,
            f.occ_lidar_auto,
            s.new_state.max_abs(),
            s.y_hat.iter().cloned().fold(0.0, f64::max),
            f.is_anomalous()
        );
    }
    Ok(())
}
