//! Finite-difference check of every parameter gradient of a model variant on
//! a two-frame window.
//!
//! ```text
//! cargo run --release --example gradient_check -- [variant] [beams] [fit steps]
//! ```

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roar::encoders::EncoderConfig;
use roar::fieldsim::{generate_episodes, WorldConfig};
use roar::fusion::{ForwardMode, ModelConfig, RoarModel, SequenceBatch, Variant};
use roar::numerics::{adam_step, gradient_check, AdamConfig, AdamState, ParamStore, Tape};
use roar::pipeline::{window_loss, LossCoefficients, TrainConfig};

fn main() -> roar::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or(Ok(Variant::Full), |v| v.parse())?;
    let beams = args.get(1).and_then(|b| b.parse().ok()).unwrap_or(1081);
    let fit_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let world = WorldConfig {
        lidar_beams: beams,
        ..WorldConfig::default()
    };
    let encoder = EncoderConfig::from_world(&world, TrainConfig::default().svae_hidden);
    let model = RoarModel::new(ModelConfig::new(variant, encoder, world.horizon));
    let mut params = model.init(0)?;
    // Zero biases on blank path pixels sit exactly on ReLU kinks.
    let mut jitter = ChaCha8Rng::seed_from_u64(9);
    for (name, t) in params.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = jitter.gen_range(-0.1..0.1));
        }
    }
    let episode = generate_episodes(&world, 1)?.remove(0);
    let window = [&episode.frames[20..22]];
    let batch = SequenceBatch::from_windows(&window, world.lidar_max_range)?;
    let mode = ForwardMode {
        dropout: false,
        sample_latent: true,
    };

    let loss = |store: &ParamStore, tape: &mut Tape| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(
            window_loss(&model, tape, store, &batch, mode, LossCoefficients::default(), &mut rng)?
                .0
                .total,
        )
    };

    let start = Instant::now();
    // Central differences lose about ulp(loss) / eps, so fit the window first.
    let mut adam = AdamState::new(AdamConfig::default());
    for _ in 0..fit_steps {
        let mut tape = Tape::new();
        let total = loss(&params, &mut tape)?;
        let grads = tape.backward(total)?.param_grads(&tape);
        adam_step(&mut params, &grads, &mut adam)?;
    }
    let mut tape = Tape::new();
    let fitted = loss(&params, &mut tape)?;
    println!(
        "loss after {fit_steps} fitting steps: {:.4e}",
        tape.value(fitted).data()[0]
    );

    let report = gradient_check(loss, &params, 1e-5, 0)?;
    println!(
        "{variant}: {} parameter tensors, {} coordinates checked in {:.1}s",
        params.len(),
        report.coords_checked,
        start.elapsed().as_secs_f64()
    );
    println!(
        "max relative error {:.3e} at {}[{}]",
        report.max_rel_error, report.worst_param, report.worst_index
    );
    Ok(())
}
