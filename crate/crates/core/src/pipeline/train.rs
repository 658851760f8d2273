use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{breakdown_of, effective_coefficients, window_loss, LossBreakdown, LossCoefficients};
use super::windows::{make_trimmed_sequences, rebalance, Window, REBALANCE_TARGET};
use crate::error::{Result, RoarError};
use crate::fieldsim::Episode;
use crate::fusion::{ForwardMode, ModelConfig, RoarModel, SequenceBatch, Variant};
use crate::numerics::{adam_step, AdamConfig, AdamState, ParamStore, Tape};
use crate::util::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Anomalous window fraction after rebalancing.
    pub rebalance_target: f64,
    /// Hidden widths of the SVAE encoder and decoder.
    pub svae_hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        let c = LossCoefficients::default();
        let adam = AdamConfig::default();
        TrainConfig {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            seq_len: 8,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            variant: Variant::Full,
            rebalance_target: REBALANCE_TARGET,
            svae_hidden: [256, 128],
        }
    }
}

impl TrainConfig {
    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Every out-of-range field, each prefixed with `train.`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut nonneg = |name: &str, v: f64| {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("train.{name} must be finite and >= 0 (got {v})"));
            }
        };
        nonneg("alpha", self.alpha);
        nonneg("beta", self.beta);
        nonneg("gamma", self.gamma);
        nonneg("lr", self.lr);
        nonneg("weight_decay", self.weight_decay);
        if self.seq_len < 1 {
            out.push("train.seq_len must be >= 1".into());
        }
        if self.batch_size < 1 {
            out.push("train.batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.rebalance_target) {
            out.push(format!(
                "train.rebalance_target must lie in [0, 1] (got {})",
                self.rebalance_target
            ));
        }
        if self.svae_hidden.contains(&0) {
            out.push("train.svae_hidden widths must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(RoarError::Config(p))
        }
    }
}

/// One line of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Starts at 1.
    pub epoch: usize,
    pub variant: Variant,
    pub seed: u64,
    pub loss: LossBreakdown,
    pub windows: usize,
    pub batches: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: RoarModel,
    pub final_params: ParamStore,
    /// Parameters at the end of the epoch with the lowest mean total loss.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub optimizer: AdamState,
    pub log: Vec<EpochLog>,
}

/// Sub-seed of batch `batch` in epoch `epoch` (1-based).
pub fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    mix_seed(mix_seed(seed, 100 + epoch as u64), batch as u64)
}

/// Builds the model for `config` from the episodes' world parameters.
pub fn model_for(config: &TrainConfig, episodes: &[Episode]) -> Result<RoarModel> {
    let world = &episodes
        .first()
        .ok_or_else(|| RoarError::Precondition("training set is empty".into()))?
        .config;
    let enc = crate::encoders::EncoderConfig::from_world(world, config.svae_hidden);
    Ok(RoarModel::new(ModelConfig::new(config.variant, enc, world.horizon)))
}

/// Runs `epochs` passes over rebalanced, shuffled windows.
///
/// Every window starts from a zero state; gradients flow through its
/// `seq_len` steps only. `on_epoch` sees each log entry as it is produced.
pub fn train(
    config: &TrainConfig,
    episodes: &[Episode],
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = model_for(config, episodes)?;
    let windows = make_trimmed_sequences(episodes, config.seq_len)?;
    if windows.is_empty() {
        return Err(RoarError::Precondition(format!(
            "no training windows of length {} in {} episodes",
            config.seq_len,
            episodes.len()
        )));
    }
    let flags: Vec<bool> = windows.iter().map(|w| w.is_anomalous(episodes)).collect();
    let coeffs = effective_coefficients(&model, config.coefficients());
    let max_range = model.config.encoder.lidar_max_range;

    let mut params = model.init(config.seed)?;
    let mut optimizer = AdamState::new(config.adam());
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let order = rebalance(&flags, config.rebalance_target, mix_seed(config.seed, epoch as u64))?;
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let seed = batch_seed(config.seed, epoch, b);
            let loss = train_batch(
                &model,
                &mut params,
                &mut optimizer,
                episodes,
                &windows,
                chunk,
                coeffs,
                max_range,
                seed,
            )
            .map_err(|e| match e {
                RoarError::NonFinite(what) => {
                    RoarError::Divergence(format!("{what} in epoch {epoch}, batch {b} (batch seed {seed})"))
                }
                other => other,
            })?;
            losses.push(loss);
        }
        let entry = EpochLog {
            epoch,
            variant: config.variant,
            seed: config.seed,
            loss: LossBreakdown::mean(&losses).expect("at least one batch"),
            windows: order.len(),
            batches: losses.len(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "{} seed {} epoch {epoch}: total {:.5} ({:.1}s)",
            config.variant, config.seed, entry.loss.total, entry.wall_seconds
        );
        on_epoch(&entry)?;
        if best.as_ref().is_none_or(|(l, _, _)| entry.loss.total < *l) {
            best = Some((entry.loss.total, epoch, params.clone()));
        }
        log.push(entry);
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        model,
        final_params: params,
        best_params,
        best_epoch,
        optimizer,
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &RoarModel,
    params: &mut ParamStore,
    optimizer: &mut AdamState,
    episodes: &[Episode],
    windows: &[Window],
    chunk: &[usize],
    coeffs: LossCoefficients,
    max_range: f64,
    seed: u64,
) -> Result<LossBreakdown> {
    let frames: Vec<_> = chunk.iter().map(|&i| windows[i].frames(episodes)).collect();
    let batch = SequenceBatch::from_windows(&frames, max_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let (vars, _) = window_loss(model, &mut tape, params, &batch, ForwardMode::TRAIN, coeffs, &mut rng)?;
    let breakdown = breakdown_of(&tape, &vars, coeffs);
    if !breakdown.total.is_finite() {
        return Err(RoarError::NonFinite(format!("loss {}", breakdown.total)));
    }
    let grads = tape.backward(vars.total)?.param_grads(&tape);
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(RoarError::NonFinite(format!("gradient of {name}")));
    }
    adam_step(params, &grads, optimizer)?;
    Ok(breakdown)
}
