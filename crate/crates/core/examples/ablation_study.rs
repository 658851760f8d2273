//! Trains several variants over several seeds, then reports held-out
//! failure metrics and the occlusion stress test for each.
//!
//! ```text
//! cargo run --release --example ablation_study -- [variants] [seeds] [episodes] [epochs]
//! cargo run --release --example ablation_study -- full,no_state 1,2,3 200 20
//! ```

use roar::fieldsim::{generate_episodes, WorldConfig};
use roar::fusion::Variant;
use roar::pipeline::{clear_world, run_ablation, AblationPlan, TrainConfig};

fn list<T: std::str::FromStr>(arg: Option<&String>, default: &str) -> Vec<T> {
    arg.map_or(default, |s| s.as_str())
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect()
}

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variants: Vec<Variant> = list(args.first(), "full,no_state");
    let seeds: Vec<u64> = list(args.get(1), "1");
    let episodes: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(60);
    let epochs: usize = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(5);

    let world = WorldConfig::default();
    let all = generate_episodes(&world, episodes)?;
    let (train_set, test_set) = all.split_at(episodes * 4 / 5);
    let stress_set = generate_episodes(&clear_world(&WorldConfig { rng_seed: 2, ..world }), 20)?;

    let plan = AblationPlan {
        variants,
        seeds,
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        stress_ks: vec![3, 6, 12],
        stress_seed: 5,
    };
    let report = run_ablation(
        train_set,
        test_set,
        &stress_set,
        &plan,
        &mut |e| {
            if e.epoch == 1 || e.epoch % 5 == 0 {
                println!(
                    "  {} seed {} epoch {:2}: loss {:.4}",
                    e.variant, e.seed, e.epoch, e.loss.total
                );
            }
            Ok(())
        },
        &mut |_, row| {
            let stress: Vec<String> = row
                .stress
                .iter()
                .map(|p| format!("k={} fp {:.2} max {:.3}", p.k, p.fp_rate, p.mean_max_probability))
                .collect();
            println!(
                "{:<16} seed {}: PR-AUC {:.3}  F1 {:.3}  | {}",
                row.variant,
                row.seed,
                row.eval.pr_auc,
                row.eval.f1.f1,
                stress.join("  ")
            );
            Ok(())
        },
    )?;

    println!(
        "\n{:<16} {:>9} {:>9} {:>9} {:>9}   stress fp (k=3,6,12)",
        "variant", "PR-AUC", "best", "F1", "best F1"
    );
    for (v, s) in &report.variants {
        let fp: Vec<String> = s.stress.iter().map(|p| format!("{:.2}", p.fp_rate)).collect();
        println!(
            "{:<16} {:>9.3} {:>9.3} {:>9.3} {:>9.3}   {}",
            v.name(),
            s.mean_pr_auc,
            s.best_pr_auc,
            s.mean_f1,
            s.best_f1,
            fp.join(" / ")
        );
    }
    Ok(())
}
