//! Plain-tensor versions of the scalar losses and activations.

use super::kernels::stable_sum;
use super::tape::bce_term;
use super::tensor::Tensor;
use crate::error::{Result, RoarError};

/// Elementwise clamp to `[lo, hi]`.
pub fn hardtanh(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    assert!(lo < hi, "hardtanh needs lo < hi");
    let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// `-(y ln p + (1-y) ln(1-p))` with `p` clamped to `[1e-7, 1-1e-7]`.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    bce_term(p, y)
}

/// Mean cross-entropy over paired probabilities and labels.
pub fn mean_binary_cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(RoarError::invalid(format!(
            "{} probabilities vs {} labels",
            p.len(),
            y.len()
        )));
    }
    Ok(stable_sum(p.iter().zip(y).map(|(p, y)| bce_term(*p, *y))) / p.len() as f64)
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal, summed.
pub fn kl_to_standard_normal(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(RoarError::invalid(format!(
            "mu {:?} vs logvar {:?}",
            mu.shape(),
            logvar.shape()
        )));
    }
    Ok(-0.5
        * stable_sum(
            mu.data()
                .iter()
                .zip(logvar.data())
                .map(|(m, lv)| 1.0 + lv - m * m - lv.exp()),
        ))
}
