use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::SequenceBatch;
use super::heads::{OcclusionHead, OcclusionHeadOutput, Sensor, OCC_HIDDEN};
use super::{repeated_label_query, LatentState, Variant, STATE_DIM, STATE_LIMIT};
use crate::encoders::{CameraEncoder, EncoderConfig, FeatureVec, PathEncoder, Svae, SvaeTapeOutput};
use crate::error::{Result, RoarError};
use crate::fieldsim::Frame;
use crate::numerics::{dropout, Linear, MultiHeadAttention, ParamStore, Tape, Tensor, Var};
use crate::util::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub horizon: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, encoder: EncoderConfig, horizon: usize) -> Self {
        ModelConfig {
            variant,
            encoder,
            horizon,
            heads: 8,
            head_hidden: 128,
            dropout: 0.5,
        }
    }
}

/// Which stochastic parts of the forward pass are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub dropout: bool,
    pub sample_latent: bool,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode {
        dropout: true,
        sample_latent: true,
    };
    pub const EVAL: ForwardMode = ForwardMode {
        dropout: false,
        sample_latent: false,
    };
}

/// Tape handles of one time step over a batch of `B` sequences.
#[derive(Clone, Debug)]
pub struct StepVars {
    /// `[B, T]` failure probabilities.
    pub y_hat: Var,
    /// `[B, 1]` occlusion probabilities.
    pub p_camera: Var,
    pub p_lidar: Option<Var>,
    /// `[B, 32]` occlusion-head hidden layers.
    pub hidden_camera: Var,
    pub hidden_lidar: Option<Var>,
    /// `[B, 64]` token-0 query before projection.
    pub query0: Var,
    /// `[B·n, 64]` query and key inputs before projection.
    pub queries: Var,
    pub keys: Var,
    pub state_in: Var,
    pub state_out: Var,
    /// `[B·n, 64]` attended tokens after the output projection.
    pub attended: Var,
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct SequenceVars {
    pub steps: Vec<StepVars>,
    pub svae: Option<SvaeTapeOutput>,
    /// `[S·B, L]` normalized scans, present with the SVAE.
    pub scans: Option<Var>,
}

/// Result of [`fuse_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct FuseOutput {
    /// `[n, 64]` attended tokens.
    pub attended: Tensor,
    pub new_state: LatentState,
    /// `[n, 64]` query and key token inputs.
    pub queries: Tensor,
    pub keys: Tensor,
    /// `[heads, n, n]` attention weights.
    pub weights: Vec<f64>,
}

/// Per-frame outputs of [`RoarModel::roar_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct FusionStepOutput {
    pub attended: Tensor,
    pub new_state: LatentState,
    pub y_hat: Vec<f64>,
    pub y_camera: f64,
    pub y_lidar: Option<f64>,
    pub hidden_camera: Vec<f64>,
    pub hidden_lidar: Option<Vec<f64>>,
    pub query0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RoarModel {
    pub config: ModelConfig,
    pub path: PathEncoder,
    pub camera: CameraEncoder,
    pub svae: Option<Svae>,
    pub occ_camera: OcclusionHead,
    pub occ_lidar: Option<OcclusionHead>,
    pub attention: MultiHeadAttention,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl RoarModel {
    pub fn new(config: ModelConfig) -> Self {
        let lidar = config.variant.uses_lidar();
        let tokens = config.variant.tokens();
        RoarModel {
            path: PathEncoder::new(&config.encoder),
            camera: CameraEncoder::new(&config.encoder),
            svae: lidar.then(|| Svae::new(&config.encoder)),
            occ_camera: OcclusionHead::new("fusion.occ_cam", STATE_DIM),
            occ_lidar: lidar.then(|| OcclusionHead::new("fusion.occ_lidar", STATE_DIM)),
            attention: MultiHeadAttention::new("fusion.attn", STATE_DIM, config.heads),
            head_hidden: Linear::new("fusion.head.fc1", tokens * STATE_DIM, config.head_hidden),
            head_out: Linear::new("fusion.head.fc2", config.head_hidden, config.horizon),
            config,
        }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn tokens(&self) -> usize {
        self.config.variant.tokens()
    }

    /// Fresh parameters drawn from a stream derived from `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 10));
        let mut store = ParamStore::new();
        self.path.init(&mut store, &mut rng)?;
        self.camera.init(&mut store, &mut rng)?;
        if let Some(svae) = &self.svae {
            svae.init(&mut store, &mut rng)?;
        }
        self.occ_camera.init(&mut store, &mut rng)?;
        if let Some(head) = &self.occ_lidar {
            head.init(&mut store, &mut rng)?;
        }
        self.attention.init(&mut store, &mut rng)?;
        self.head_hidden.init(&mut store, &mut rng)?;
        self.head_out.init(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Builds query/key token sets, attends, and derives the clamped state.
    ///
    /// Returns `(queries, keys, attended, attention node, new state)`.
    pub fn fuse_tokens(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Var,
        query0: Var,
        sensors: &[Var],
    ) -> Result<(Var, Var, Var, Var, Var)> {
        fuse_tokens(&self.attention, tape, store, state, query0, sensors)
    }

    /// `[B·n, 64]` attended tokens to `[B, T]` probabilities.
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        attended: Var,
        batch: usize,
        drop: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let width = self.tokens() * STATE_DIM;
        let flat = tape.reshape(attended, vec![batch, width])?;
        let h = self.head_hidden.forward(tape, store, flat)?;
        let mut h = tape.relu(h);
        if let Some(rng) = drop {
            h = dropout(tape, h, self.config.dropout, rng)?;
        }
        let logits = self.head_out.forward(tape, store, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Runs `B` sequences from a zero state, recording every step.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &SequenceBatch,
        mode: ForwardMode,
        rng: &mut dyn RngCore,
    ) -> Result<SequenceVars> {
        let variant = self.variant();
        let b = batch.batch;
        let cam_in = tape.constant(batch.camera.clone());
        let f_cam_all = self.camera.forward(tape, store, cam_in)?;
        let path_in = tape.constant(batch.path.clone());
        let f_path_all = self.path.forward(tape, store, path_in)?;
        let (svae_out, scans) = match &self.svae {
            Some(svae) => {
                let x = tape.constant(batch.scans.clone());
                let noise: Option<&mut dyn RngCore> = if mode.sample_latent { Some(&mut *rng) } else { None };
                (Some(svae.forward(tape, store, x, noise)?), Some(x))
            }
            None => (None, None),
        };

        let mut state = tape.constant(Tensor::zeros(&[b, STATE_DIM]));
        let mut steps = Vec::with_capacity(batch.steps);
        for s in 0..batch.steps {
            let f_cam = tape.slice_rows(f_cam_all, s * b, b)?;
            let f_path = tape.slice_rows(f_path_all, s * b, b)?;
            let (hidden_camera, p_camera) = self.occ_camera.forward(tape, store, f_cam)?;
            let mut sensors = vec![f_path, f_cam];
            let (mut hidden_lidar, mut p_lidar) = (None, None);
            if let (Some(out), Some(head)) = (&svae_out, &self.occ_lidar) {
                let f_lidar = tape.slice_rows(out.feature, s * b, b)?;
                let (h, p) = head.forward(tape, store, f_lidar)?;
                hidden_lidar = Some(h);
                p_lidar = Some(p);
                sensors.push(f_lidar);
            }
            let state_in = if variant == Variant::NoState {
                tape.constant(Tensor::zeros(&[b, STATE_DIM]))
            } else {
                state
            };
            let query0 = match (variant, hidden_lidar) {
                (Variant::NoOcclusion, _) => state_in,
                (Variant::FixedOcclusion, _) => {
                    let (cams, lidars) = (batch.occ_camera_at(s), batch.occ_lidar_at(s));
                    let data = cams
                        .iter()
                        .zip(lidars)
                        .flat_map(|(&c, &l)| repeated_label_query(c > 0.5, l > 0.5))
                        .collect();
                    tape.constant(Tensor::matrix(b, STATE_DIM, data)?)
                }
                (_, Some(hl)) => tape.concat_cols(&[hidden_camera, hl])?,
                (_, None) => {
                    let pad = tape.constant(Tensor::zeros(&[b, STATE_DIM - OCC_HIDDEN]));
                    tape.concat_cols(&[hidden_camera, pad])?
                }
            };
            let (queries, keys, attended, attention, state_out) =
                self.fuse_tokens(tape, store, state_in, query0, &sensors)?;
            let drop: Option<&mut dyn RngCore> = if mode.dropout { Some(&mut *rng) } else { None };
            let y_hat = self.head_forward(tape, store, attended, b, drop)?;
            state = state_out;
            steps.push(StepVars {
                y_hat,
                p_camera,
                p_lidar,
                hidden_camera,
                hidden_lidar,
                query0,
                queries,
                keys,
                state_in,
                state_out,
                attended,
                attention,
            });
        }
        Ok(SequenceVars {
            steps,
            svae: svae_out,
            scans,
        })
    }

    /// Occlusion probability and hidden layer for one sensor feature.
    pub fn occlusion_head(
        &self,
        store: &ParamStore,
        feature: &FeatureVec,
        which: Sensor,
    ) -> Result<OcclusionHeadOutput> {
        match which {
            Sensor::Camera => self.occ_camera.apply(store, feature),
            Sensor::Lidar => self
                .occ_lidar
                .as_ref()
                .ok_or_else(|| RoarError::invalid(format!("variant {} has no LiDAR head", self.variant())))?
                .apply(store, feature),
        }
    }

    /// T failure probabilities from `[n, 64]` attended tokens.
    pub fn predict_anomalies(
        &self,
        store: &ParamStore,
        attended: &Tensor,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        if attended.shape() != [self.tokens(), STATE_DIM] {
            return Err(RoarError::invalid(format!(
                "attended tokens {:?}, expected [{}, {STATE_DIM}]",
                attended.shape(),
                self.tokens()
            )));
        }
        let mut tape = Tape::inference();
        let x = tape.constant(attended.clone());
        let drop: Option<&mut dyn RngCore> = if train { Some(rng) } else { None };
        let y = self.head_forward(&mut tape, store, x, 1, drop)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Runs one sequence from a zero state.
    pub fn roar_forward(
        &self,
        store: &ParamStore,
        frames: &[Frame],
        mode: ForwardMode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<FusionStepOutput>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.roar_forward_batch(store, &[frames], mode, rng)?.remove(0))
    }

    /// Runs equal-length sequences side by side; each starts from a zero state.
    pub fn roar_forward_batch(
        &self,
        store: &ParamStore,
        sequences: &[&[Frame]],
        mode: ForwardMode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<FusionStepOutput>>> {
        let batch = SequenceBatch::from_windows(sequences, self.config.encoder.lidar_max_range)?;
        let mut tape = Tape::inference();
        let vars = self.forward(&mut tape, store, &batch, mode, rng)?;
        let b = batch.batch;
        let n = self.tokens();
        let mut out: Vec<Vec<FusionStepOutput>> = (0..b).map(|_| Vec::with_capacity(batch.steps)).collect();
        for step in &vars.steps {
            let rows = |v: Var, width: usize, i: usize| tape.value(v).data()[i * width..(i + 1) * width].to_vec();
            for (i, seq) in out.iter_mut().enumerate() {
                let t = self.config.horizon;
                seq.push(FusionStepOutput {
                    attended: Tensor::matrix(n, STATE_DIM, rows(step.attended, n * STATE_DIM, i))?,
                    new_state: LatentState {
                        h: rows(step.state_out, STATE_DIM, i),
                    },
                    y_hat: rows(step.y_hat, t, i),
                    y_camera: tape.value(step.p_camera).data()[i],
                    y_lidar: step.p_lidar.map(|p| tape.value(p).data()[i]),
                    hidden_camera: rows(step.hidden_camera, OCC_HIDDEN, i),
                    hidden_lidar: step.hidden_lidar.map(|h| rows(h, OCC_HIDDEN, i)),
                    query0: rows(step.query0, STATE_DIM, i),
                });
            }
        }
        Ok(out)
    }
}

fn fuse_tokens(
    attn: &MultiHeadAttention,
    tape: &mut Tape,
    store: &ParamStore,
    state: Var,
    query0: Var,
    sensors: &[Var],
) -> Result<(Var, Var, Var, Var, Var)> {
    let n = sensors.len() + 1;
    let mut k_tokens = Vec::with_capacity(n);
    k_tokens.push(state);
    k_tokens.extend_from_slice(sensors);
    let mut q_tokens = Vec::with_capacity(n);
    q_tokens.push(query0);
    q_tokens.extend_from_slice(sensors);
    let keys = tape.interleave(&k_tokens)?;
    let queries = tape.interleave(&q_tokens)?;
    let (attended, att) = attn.forward(tape, store, queries, keys, keys, n)?;
    let first = tape.take_token(attended, 0, n)?;
    let new_state = tape.hardtanh(first, -STATE_LIMIT, STATE_LIMIT);
    Ok((queries, keys, attended, att, new_state))
}

/// One fusion step with the full token layout: keys/values
/// `[h, f_path, f_camera, f_lidar]`, queries `[o_camera ++ o_lidar, f_path,
/// f_camera, f_lidar]`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_step(
    attn: &MultiHeadAttention,
    store: &ParamStore,
    h: &LatentState,
    f_path: &FeatureVec,
    f_camera: &FeatureVec,
    f_lidar: &FeatureVec,
    o_camera: &[f64],
    o_lidar: &[f64],
) -> Result<FuseOutput> {
    if h.h.len() != STATE_DIM || o_camera.len() + o_lidar.len() != STATE_DIM {
        return Err(RoarError::invalid(format!(
            "fuse_step: state {} and occlusion hiddens {}+{} must be {STATE_DIM} wide",
            h.h.len(),
            o_camera.len(),
            o_lidar.len()
        )));
    }
    let mut tape = Tape::inference();
    let row =
        |tape: &mut Tape, v: &[f64]| -> Result<Var> { Ok(tape.constant(Tensor::matrix(1, v.len(), v.to_vec())?)) };
    let state = row(&mut tape, &h.h)?;
    let occ: Vec<f64> = o_camera.iter().chain(o_lidar).copied().collect();
    let query0 = row(&mut tape, &occ)?;
    let sensors = [
        row(&mut tape, &f_path.values)?,
        row(&mut tape, &f_camera.values)?,
        row(&mut tape, &f_lidar.values)?,
    ];
    let (queries, keys, attended, att, new_state) = fuse_tokens(attn, &mut tape, store, state, query0, &sensors)?;
    Ok(FuseOutput {
        attended: tape.value(attended).clone(),
        new_state: LatentState {
            h: tape.value(new_state).data().to_vec(),
        },
        queries: tape.value(queries).clone(),
        keys: tape.value(keys).clone(),
        weights: tape.attention_weights(att).map(<[f64]>::to_vec).unwrap_or_default(),
    })
}
