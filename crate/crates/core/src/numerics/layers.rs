//! Parameterized building blocks that record onto a [`Tape`].
//!
//! Layers only hold parameter names and sizes; the tensors live in a
//! [`ParamStore`]. Weights are initialized uniform in `±sqrt(1/fan_in)`,
//! biases at zero.

use rand::Rng;

use super::kernels::ConvGeometry;
use super::tape::{Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::Result;

fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            fan_in,
            fan_out,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let bound = init_bound(self.fan_in);
        store.insert(&self.weight, Tensor::uniform(&[self.fan_in, self.fan_out], bound, rng))?;
        store.insert(&self.bias, Tensor::zeros(&[self.fan_out]))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight);
        let b = tape.param(store, &self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// 3×3, stride-2, pad-1 convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: String,
    pub bias: String,
    pub geom: ConvGeometry,
}

impl Conv2d {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, in_h: usize, in_w: usize) -> Self {
        Conv2d {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            geom: ConvGeometry {
                in_channels,
                out_channels,
                in_h,
                in_w,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let g = &self.geom;
        let bound = init_bound(g.patch_len());
        store.insert(
            &self.weight,
            Tensor::uniform(&[g.out_channels, g.patch_len()], bound, rng),
        )?;
        store.insert(&self.bias, Tensor::zeros(&[g.out_channels]))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight);
        let b = tape.param(store, &self.bias);
        tape.conv2d(x, w, b, self.geom)
    }
}

/// Inverted dropout: zeroes with probability `p` and rescales survivors by `1/(1-p)`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    let keep = 1.0 - p;
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    tape.mul_const(x, mask)
}
