use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{EncoderConfig, FeatureVec};
use crate::error::{Result, RoarError};
use crate::fieldsim::LidarScan;
use crate::numerics::{kl_to_standard_normal, Linear, ParamStore, Tape, Tensor, Var};

/// Posterior width; `mu ++ logvar` is the 64-dim LiDAR feature.
pub const LATENT_DIM: usize = 32;

/// Variational autoencoder over normalized LiDAR scans.
#[derive(Clone, Debug)]
pub struct Svae {
    enc1: Linear,
    enc2: Linear,
    mu: Linear,
    logvar: Linear,
    dec1: Linear,
    dec2: Linear,
    dec3: Linear,
    beams: usize,
    max_range: f64,
}

/// Tape handles of one batched SVAE pass; all are `[B, ·]`.
#[derive(Clone, Copy, Debug)]
pub struct SvaeTapeOutput {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub reconstruction: Var,
    pub feature: Var,
}

/// Single-scan SVAE result.
#[derive(Clone, Debug, PartialEq)]
pub struct SvaeOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub feature: FeatureVec,
}

impl Svae {
    pub const PREFIX: &'static str = "encoders.svae";

    pub fn new(cfg: &EncoderConfig) -> Self {
        let [h1, h2] = cfg.svae_hidden;
        let l = |name: &str, i, o| Linear::new(&format!("{}.{name}", Self::PREFIX), i, o);
        Svae {
            enc1: l("enc1", cfg.lidar_beams, h1),
            enc2: l("enc2", h1, h2),
            mu: l("mu", h2, LATENT_DIM),
            logvar: l("logvar", h2, LATENT_DIM),
            dec1: l("dec1", LATENT_DIM, h2),
            dec2: l("dec2", h2, h1),
            dec3: l("dec3", h1, cfg.lidar_beams),
            beams: cfg.lidar_beams,
            max_range: cfg.lidar_max_range,
        }
    }

    fn layers(&self) -> [&Linear; 7] {
        [
            &self.enc1,
            &self.enc2,
            &self.mu,
            &self.logvar,
            &self.dec1,
            &self.dec2,
            &self.dec3,
        ]
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in self.layers() {
            l.init(store, rng)?;
        }
        Ok(())
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    /// Encodes normalized scans `[B, L]`. With `noise` the latent is sampled
    /// as `mu + exp(logvar/2)·ε`; without it `z = mu`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scans: Var,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<SvaeTapeOutput> {
        if tape.shape(scans).len() != 2 || tape.shape(scans)[1] != self.beams {
            return Err(RoarError::invalid(format!(
                "svae input {:?}, expected [B, {}]",
                tape.shape(scans),
                self.beams
            )));
        }
        let h = self.enc1.forward(tape, store, scans)?;
        let h = tape.relu(h);
        let h = self.enc2.forward(tape, store, h)?;
        let h = tape.relu(h);
        let mu = self.mu.forward(tape, store, h)?;
        let logvar = self.logvar.forward(tape, store, h)?;
        let z = match noise {
            Some(rng) => {
                let n = tape.value(mu).len();
                let eps: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
                let half = tape.scale(logvar, 0.5);
                let std = tape.exp(half);
                let spread = tape.mul_const(std, eps)?;
                tape.add(mu, spread)?
            }
            None => mu,
        };
        let d = self.dec1.forward(tape, store, z)?;
        let d = tape.relu(d);
        let d = self.dec2.forward(tape, store, d)?;
        let d = tape.relu(d);
        let d = self.dec3.forward(tape, store, d)?;
        let reconstruction = tape.sigmoid(d);
        let feature = tape.concat_cols(&[mu, logvar])?;
        Ok(SvaeTapeOutput {
            mu,
            logvar,
            z,
            reconstruction,
            feature,
        })
    }

    /// Per-scan mean of `KL + 0.5·Σ(reconstruction - scan)²` over the batch.
    pub fn loss(&self, tape: &mut Tape, out: &SvaeTapeOutput, scans: Var) -> Result<Var> {
        let batch = tape.shape(out.mu)[0].max(1);
        let one_plus = tape.add_scalar(out.logvar, 1.0);
        let mu2 = tape.square(out.mu);
        let var = tape.exp(out.logvar);
        let t = tape.sub(one_plus, mu2)?;
        let t = tape.sub(t, var)?;
        let s = tape.sum(t);
        let kl = tape.scale(s, -0.5);
        let diff = tape.sub(out.reconstruction, scans)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        let rec = tape.scale(s, 0.5);
        let total = tape.add(kl, rec)?;
        Ok(tape.scale(total, 1.0 / batch as f64))
    }

    /// Single-scan evaluation or sampling pass.
    pub fn encode(&self, store: &ParamStore, scan: &LidarScan, noise: Option<&mut dyn RngCore>) -> Result<SvaeOutput> {
        let mut tape = Tape::inference();
        let x = tape.constant(scan_batch(&[scan], self.max_range)?);
        let out = self.forward(&mut tape, store, x, noise)?;
        let take = |v: Var| tape.value(v).data().to_vec();
        Ok(SvaeOutput {
            mu: take(out.mu),
            logvar: take(out.logvar),
            z: take(out.z),
            reconstruction: take(out.reconstruction),
            feature: FeatureVec::new(take(out.feature))?,
        })
    }
}

fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    rng.sample(StandardNormal)
}

/// Scans divided by `max_range`, stacked into `[B, L]`.
pub fn scan_batch(scans: &[&LidarScan], max_range: f64) -> Result<Tensor> {
    let Some(first) = scans.first() else {
        return Err(RoarError::invalid("empty scan batch"));
    };
    let beams = first.ranges.len();
    let mut data = Vec::with_capacity(scans.len() * beams);
    for s in scans {
        if s.ranges.len() != beams {
            return Err(RoarError::invalid("scan batch mixes beam counts"));
        }
        data.extend(s.ranges.iter().map(|r| r / max_range));
    }
    Tensor::new(vec![scans.len(), beams], data)
}

/// `KL(mu, logvar) + 0.5·Σ(reconstruction - scan/max_range)²` for one scan.
pub fn svae_loss(output: &SvaeOutput, scan: &LidarScan, max_range: f64) -> Result<f64> {
    if output.reconstruction.len() != scan.ranges.len() {
        return Err(RoarError::invalid(format!(
            "reconstruction has {} values, scan has {}",
            output.reconstruction.len(),
            scan.ranges.len()
        )));
    }
    let kl = kl_to_standard_normal(
        &Tensor::vector(output.mu.clone()),
        &Tensor::vector(output.logvar.clone()),
    )?;
    let rec: f64 = output
        .reconstruction
        .iter()
        .zip(&scan.ranges)
        .map(|(r, s)| (r - s / max_range).powi(2))
        .sum();
    Ok(kl + 0.5 * rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldsim::WorldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Svae, ParamStore) {
        let cfg = EncoderConfig::from_world(&WorldConfig::default(), [256, 128]);
        let svae = Svae::new(&cfg);
        let mut store = ParamStore::new();
        svae.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (svae, store)
    }

    fn random_scan(rng: &mut ChaCha8Rng) -> LidarScan {
        LidarScan {
            ranges: (0..1081).map(|_| rng.gen_range(0.05..10.0)).collect(),
        }
    }

    #[test]
    fn feature_is_mu_then_logvar() {
        let (svae, store) = setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = svae.encode(&store, &random_scan(&mut rng), None).unwrap();
        assert_eq!(&out.feature.values[..32], &out.mu[..]);
        assert_eq!(&out.feature.values[32..], &out.logvar[..]);
        assert_eq!(out.z, out.mu);
        assert!(out.reconstruction.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn zero_logvar_makes_z_minus_mu_the_draw() {
        let (svae, mut store) = setup(2);
        for name in ["encoders.svae.logvar.weight", "encoders.svae.logvar.bias"] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scan = random_scan(&mut rng);
        let mut draw = ChaCha8Rng::seed_from_u64(77);
        let out = svae.encode(&store, &scan, Some(&mut draw)).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(77);
        for (i, (z, m)) in out.z.iter().zip(&out.mu).enumerate() {
            let eps = standard_normal(&mut replay);
            assert!((z - m - eps).abs() < 1e-12, "coordinate {i}");
        }
    }

    #[test]
    fn fresh_encoder_kl_is_finite_and_nonnegative() {
        let (svae, store) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let scan = random_scan(&mut rng);
            let out = svae.encode(&store, &scan, None).unwrap();
            let kl =
                kl_to_standard_normal(&Tensor::vector(out.mu.clone()), &Tensor::vector(out.logvar.clone())).unwrap();
            assert!(kl.is_finite() && kl >= 0.0);
        }
    }

    #[test]
    fn loss_examples() {
        let scan = LidarScan {
            ranges: vec![5.0, 10.0],
        };
        let mut out = SvaeOutput {
            mu: vec![0.0; 32],
            logvar: vec![0.0; 32],
            z: vec![0.0; 32],
            reconstruction: vec![0.5, 1.0],
            feature: FeatureVec::new(vec![0.0; 64]).unwrap(),
        };
        assert_eq!(svae_loss(&out, &scan, 10.0).unwrap(), 0.0);
        out.mu[0] = 1.0;
        assert!((svae_loss(&out, &scan, 10.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tape_loss_matches_term_by_term_sum() {
        let (svae, store) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scans: Vec<LidarScan> = (0..3).map(|_| random_scan(&mut rng)).collect();
        let refs: Vec<&LidarScan> = scans.iter().collect();
        let mut tape = Tape::new();
        let x = tape.constant(scan_batch(&refs, 10.0).unwrap());
        let out = svae.forward(&mut tape, &store, x, None).unwrap();
        let loss = svae.loss(&mut tape, &out, x).unwrap();
        let got = tape.value(loss).item();
        // Separate path: per-scan evaluation, explicit loops.
        let mut want = 0.0;
        for s in &scans {
            let o = svae.encode(&store, s, None).unwrap();
            let mut kl = 0.0;
            for (m, lv) in o.mu.iter().zip(&o.logvar) {
                kl += -0.5 * (1.0 + lv - m * m - lv.exp());
            }
            let mut rec = 0.0;
            for (r, x) in o.reconstruction.iter().zip(&s.ranges) {
                rec += 0.5 * (r - x / 10.0) * (r - x / 10.0);
            }
            want += kl + rec;
        }
        want /= 3.0;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
