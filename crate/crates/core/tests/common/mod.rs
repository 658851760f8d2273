#![allow(dead_code)]
pub mod oracles;

use roar::encoders::EncoderConfig;
use roar::fieldsim::{generate_episodes, Episode, WorldConfig};
use roar::fusion::{ModelConfig, RoarModel, Variant};
use roar::numerics::ParamStore;

/// A reduced world that keeps every mechanism but simulates quickly.
pub fn small_world() -> WorldConfig {
    WorldConfig {
        row_length: 8.0,
        lidar_beams: 271,
        image_height: 16,
        image_width: 24,
        obstacle_rate: 0.15,
        drift_rate: 0.15,
        occlusion_rate: 0.3,
        ..WorldConfig::default()
    }
}

pub fn small_episodes(count: usize, seed: u64) -> Vec<Episode> {
    generate_episodes(
        &WorldConfig {
            rng_seed: seed,
            ..small_world()
        },
        count,
    )
    .unwrap()
}

pub fn small_model(variant: Variant, seed: u64) -> (RoarModel, ParamStore) {
    let world = small_world();
    let enc = EncoderConfig::from_world(&world, [48, 24]);
    let model = RoarModel::new(ModelConfig::new(variant, enc, world.horizon));
    let params = model.init(seed).unwrap();
    (model, params)
}
