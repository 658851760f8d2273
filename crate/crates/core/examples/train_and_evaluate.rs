//! Trains one variant on freshly simulated episodes and scores it on a
//! held-out split.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- [variant] [train episodes] [test episodes] [epochs]
//! ```

use roar::fieldsim::{generate_episodes, WorldConfig};
use roar::fusion::Variant;
use roar::pipeline::{evaluate, train, TrainConfig};

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let variant: Variant = args.first().map_or(Ok(Variant::Full), |v| v.parse())?;
    let (n_train, n_test, epochs) = (arg(1, 40), arg(2, 10), arg(3, 3));

    let world = WorldConfig::default();
    let train_set = generate_episodes(&world, n_train)?;
    let test_set = generate_episodes(&WorldConfig { rng_seed: 1, ..world }, n_test)?;
    let config = TrainConfig {
        variant,
        epochs,
        ..TrainConfig::default()
    };

    let outcome = train(&config, &train_set, &mut |e| {
        println!(
            "epoch {:2}  total {:.4}  svae {:.4}  anomaly {:.4}  cam {:.4}  lidar {:.4}  ({} windows, {:.1}s)",
            e.epoch,
            e.loss.total,
            e.loss.svae,
            e.loss.anomaly,
            e.loss.cam_occ,
            e.loss.lidar_occ,
            e.windows,
            e.wall_seconds
        );
        Ok(())
    })?;
    let report = evaluate(&outcome.model, &outcome.final_params, &test_set)?;
    println!(
        "test: PR-AUC {:.3}  F1 {:.3} (P {:.3}, R {:.3})  {} positives of {} predictions",
        report.pr_auc, report.f1.f1, report.f1.precision, report.f1.recall, report.positives, report.predictions
    );
    let show = |name: &str, v: Option<f64>| match v {
        Some(v) => println!("{name} occlusion PR-AUC {v:.3}"),
        None => println!("{name} occlusion: no positives in test split"),
    };
    show("camera", report.occ_camera_pr_auc);
    show("lidar", report.occ_lidar_pr_auc);
    Ok(())
}
