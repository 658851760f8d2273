use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};
use crate::fusion::{ForwardMode, RoarModel, SequenceBatch, SequenceVars};
use crate::numerics::{binary_cross_entropy, kernels::stable_sum, ParamStore, Tape, Var};

/// Weights of the anomaly and occlusion terms relative to the SVAE term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            alpha: 6.21,
            beta: 0.621,
            gamma: 0.621,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub svae: f64,
    pub anomaly: f64,
    pub cam_occ: f64,
    pub lidar_occ: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    pub fn combine(svae: f64, anomaly: f64, cam_occ: f64, lidar_occ: f64, c: LossCoefficients) -> Self {
        LossBreakdown {
            svae,
            anomaly,
            cam_occ,
            lidar_occ,
            total: svae + c.alpha * anomaly + c.beta * cam_occ + c.gamma * lidar_occ,
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
        }
    }

    /// Element-wise mean of several breakdowns sharing coefficients.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| stable_sum(items.iter().map(f)) / n;
        Some(LossBreakdown {
            svae: avg(|l| l.svae),
            anomaly: avg(|l| l.anomaly),
            cam_occ: avg(|l| l.cam_occ),
            lidar_occ: avg(|l| l.lidar_occ),
            total: avg(|l| l.total),
            ..*first
        })
    }
}

/// Plain per-batch model outputs and their targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchOutputs {
    /// SVAE loss of each frame.
    pub svae_per_frame: Vec<f64>,
    /// Failure probabilities and targets, pooled over frames and horizon.
    pub y_hat: Vec<f64>,
    pub y_future: Vec<bool>,
    pub p_camera: Vec<f64>,
    pub occ_camera: Vec<bool>,
    pub p_lidar: Vec<f64>,
    pub occ_lidar: Vec<bool>,
}

fn mean_bce(p: &[f64], y: &[bool], what: &str) -> Result<f64> {
    if p.len() != y.len() {
        return Err(RoarError::invalid(format!(
            "{what}: {} predictions for {} labels",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(stable_sum(p.iter().zip(y).map(|(p, y)| binary_cross_entropy(*p, *y as u8 as f64))) / p.len() as f64)
}

/// Weighted sum of the SVAE, anomaly and occlusion terms; each
/// cross-entropy term is a mean, empty terms count as zero.
pub fn total_loss(out: &BatchOutputs, coeffs: LossCoefficients) -> Result<LossBreakdown> {
    let svae = if out.svae_per_frame.is_empty() {
        0.0
    } else {
        stable_sum(out.svae_per_frame.iter().copied()) / out.svae_per_frame.len() as f64
    };
    Ok(LossBreakdown::combine(
        svae,
        mean_bce(&out.y_hat, &out.y_future, "anomaly")?,
        mean_bce(&out.p_camera, &out.occ_camera, "camera occlusion")?,
        mean_bce(&out.p_lidar, &out.occ_lidar, "lidar occlusion")?,
        coeffs,
    ))
}

/// Coefficients actually applied for the model's variant: occlusion terms
/// vanish when occlusion modeling is removed.
pub fn effective_coefficients(model: &RoarModel, c: LossCoefficients) -> LossCoefficients {
    if model.variant().trains_occlusion() {
        c
    } else {
        LossCoefficients {
            beta: 0.0,
            gamma: 0.0,
            ..c
        }
    }
}

/// Scalar handles of each loss term on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub svae: Option<Var>,
    pub anomaly: Var,
    pub cam_occ: Option<Var>,
    pub lidar_occ: Option<Var>,
}

/// Records the forward pass of a window batch and its total loss.
///
/// Terms whose coefficient is zero, or whose sensor is absent, are left out
/// of the graph entirely.
pub fn window_loss(
    model: &RoarModel,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &SequenceBatch,
    mode: ForwardMode,
    coeffs: LossCoefficients,
    rng: &mut dyn RngCore,
) -> Result<(LossVars, SequenceVars)> {
    let c = effective_coefficients(model, coeffs);
    let vars = model.forward(tape, store, batch, mode, rng)?;
    let steps = vars.steps.len() as f64;

    let mean_over_steps = |tape: &mut Tape, terms: Vec<Var>| -> Result<Var> {
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = tape.add(acc, *t)?;
        }
        Ok(tape.scale(acc, 1.0 / steps))
    };

    let anomaly_terms = vars
        .steps
        .iter()
        .enumerate()
        .map(|(s, st)| tape.bce(st.y_hat, batch.y_at(s).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let anomaly = mean_over_steps(tape, anomaly_terms)?;

    let svae = match (&model.svae, &vars.svae, vars.scans) {
        (Some(m), Some(out), Some(x)) => Some(m.loss(tape, out, x)?),
        _ => None,
    };
    let cam_occ = if c.beta != 0.0 {
        let terms = vars
            .steps
            .iter()
            .enumerate()
            .map(|(s, st)| tape.bce(st.p_camera, batch.occ_camera_at(s).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Some(mean_over_steps(tape, terms)?)
    } else {
        None
    };
    let lidar_occ = if c.gamma != 0.0 && model.occ_lidar.is_some() {
        let terms = vars
            .steps
            .iter()
            .enumerate()
            .map(|(s, st)| tape.bce(st.p_lidar.expect("lidar head present"), batch.occ_lidar_at(s).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Some(mean_over_steps(tape, terms)?)
    } else {
        None
    };

    let mut total = tape.scale(anomaly, c.alpha);
    if let Some(s) = svae {
        total = tape.add(total, s)?;
    }
    if let Some(v) = cam_occ {
        let w = tape.scale(v, c.beta);
        total = tape.add(total, w)?;
    }
    if let Some(v) = lidar_occ {
        let w = tape.scale(v, c.gamma);
        total = tape.add(total, w)?;
    }
    Ok((
        LossVars {
            total,
            svae,
            anomaly,
            cam_occ,
            lidar_occ,
        },
        vars,
    ))
}

/// Reads the term values back from the tape.
pub fn breakdown_of(tape: &Tape, vars: &LossVars, coeffs: LossCoefficients) -> LossBreakdown {
    let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let mut b = LossBreakdown::combine(
        get(vars.svae),
        tape.value(vars.anomaly).item(),
        get(vars.cam_occ),
        get(vars.lidar_occ),
        coeffs,
    );
    b.total = tape.value(vars.total).item();
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_terms_with_default_weights_total_8_452() {
        let b = LossBreakdown::combine(1.0, 1.0, 1.0, 1.0, LossCoefficients::default());
        assert!((b.total - 8.452).abs() < 1e-12);
        let z = LossBreakdown::combine(0.0, 0.0, 0.0, 0.0, LossCoefficients::default());
        assert_eq!(z.total, 0.0);
    }

    #[test]
    fn default_occlusion_weights_are_a_tenth_of_alpha() {
        let c = LossCoefficients::default();
        assert!((c.beta - 0.1 * c.alpha).abs() < 1e-15);
        assert!((c.gamma - 0.1 * c.alpha).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let out = BatchOutputs {
            y_hat: vec![0.5],
            y_future: vec![],
            ..BatchOutputs::default()
        };
        assert!(total_loss(&out, LossCoefficients::default()).is_err());
    }
}
