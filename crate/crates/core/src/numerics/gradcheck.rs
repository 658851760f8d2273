//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::ParamStore;
use crate::error::{Result, RoarError};

/// Coordinates sampled per parameter tensor (all of them when fewer).
pub const COORDS_PER_PARAM: usize = 200;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backward-pass gradients of `loss_fn` against central differences.
///
/// `loss_fn` must record a deterministic scalar loss on the provided tape
/// (reseed any noise inside it). Parameters the loss never touches are
/// checked against an analytic gradient of zero.
pub fn gradient_check<F>(mut loss_fn: F, params: &ParamStore, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(params, &mut tape)?;
    let base = tape.value(loss).item();
    if !base.is_finite() {
        return Err(RoarError::NonFinite(format!("loss at the sample point is {base}")));
    }
    let analytic = tape.backward(loss)?.param_grads(&tape);
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut eval = |store: &ParamStore, name: &str| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(store, &mut t)?;
        let v = t.value(l).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RoarError::NonFinite(format!("loss became {v} while perturbing {name}")))
        }
    };
    for name in &names {
        let len = params.expect(name).len();
        let coords: Vec<usize> = if len <= COORDS_PER_PARAM {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, COORDS_PER_PARAM).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = params.expect(name).data()[idx];
            work.get_mut(name).unwrap().data_mut()[idx] = orig + eps;
            let plus = eval(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig - eps;
            let minus = eval(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::vector(values)).unwrap();
        s
    }

    #[test]
    fn quadratic_matches_tightly() {
        let p = store(vec![0.3, -1.2, 2.5, 0.01]);
        let report = gradient_check(
            |s, t| {
                let th = t.param(s, "theta");
                let sq = t.square(th);
                let sum = t.sum(sq);
                Ok(t.scale(sum, 0.5))
            },
            &p,
            1e-5,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn hardtanh_interior_gradient_is_exactly_one() {
        let p = store(vec![0.5, -3.0, 9.0]);
        let mut t = Tape::new();
        let th = t.param(&p, "theta");
        let h = t.hardtanh(th, -10.0, 10.0);
        let s = t.sum(h);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(th).unwrap(), &[1.0, 1.0, 1.0]);
        let report = gradient_check(
            |s, t| {
                let th = t.param(s, "theta");
                let h = t.hardtanh(th, -10.0, 10.0);
                Ok(t.sum(h))
            },
            &p,
            1e-5,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let p = store(vec![0.0]);
        let err = gradient_check(
            |s, t| {
                let th = t.param(s, "theta");
                let v = t.value(th).item();
                // Blows up only once the coordinate is perturbed.
                let c = t.constant(Tensor::vector(vec![if v != 0.0 { f64::INFINITY } else { 1.0 }]));
                let m = t.mul(th, c)?;
                Ok(t.sum(m))
            },
            &p,
            1e-5,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }

    #[test]
    fn large_tensors_are_subsampled() {
        let p = store((0..1000).map(|i| i as f64 * 1e-3).collect());
        let report = gradient_check(
            |s, t| {
                let th = t.param(s, "theta");
                let sq = t.square(th);
                Ok(t.sum(sq))
            },
            &p,
            1e-5,
            1,
        )
        .unwrap();
        assert_eq!(report.coords_checked, COORDS_PER_PARAM);
    }
}
