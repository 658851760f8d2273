//! Trains a model, then blanks both sensors for the last `k` frames of
//! obstacle-free episodes and reports how often an alarm is raised.
//!
//! ```text
//! cargo run --release --example occlusion_stress -- [variant] [train episodes] [epochs] [k,k,...]
//! ```

use roar::fieldsim::{generate_episodes, WorldConfig};
use roar::fusion::Variant;
use roar::pipeline::{clear_world, stress_summary, train, TrainConfig, ALARM_THRESHOLD};

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let variant: Variant = args.first().map_or(Ok(Variant::Full), |v| v.parse())?;
    let (n_train, epochs) = (arg(1, 60), arg(2, 4));
    let ks: Vec<usize> = args.get(3).map_or_else(
        || vec![3, 6, 12],
        |s| s.split(',').filter_map(|k| k.parse().ok()).collect(),
    );

    let world = WorldConfig::default();
    let train_set = generate_episodes(&world, n_train)?;
    let config = TrainConfig {
        variant,
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &train_set, &mut |e| {
        println!("epoch {:2}  total {:.4}", e.epoch, e.loss.total);
        Ok(())
    })?;

    let clear = generate_episodes(
        &WorldConfig {
            rng_seed: 2,
            ..clear_world(&world)
        },
        10,
    )?;
    for k in ks {
        let s = stress_summary(&outcome.model, &outcome.final_params, &clear, k, 5)?;
        println!(
            "k={k:2}: {:.0}% of episodes exceed {ALARM_THRESHOLD}, mean peak probability {:.3}",
            100.0 * s.fp_rate,
            s.mean_max_probability
        );
        let first = &s.reports[0];
        let trace: Vec<String> = first
            .occluded_predictions()
            .map(|p| format!("{:.2}", p.iter().cloned().fold(0.0, f64::max)))
            .collect();
        println!("      first episode, peak per occluded frame: [{}]", trace.join(", "));
    }
    Ok(())
}
