use rand::Rng;

use crate::encoders::FeatureVec;
use crate::error::Result;
use crate::numerics::{Linear, ParamStore, Tape, Tensor, Var};

/// Width of an occlusion head's hidden layer.
pub const OCC_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sensor {
    Camera,
    Lidar,
}

/// `hidden = ReLU(f·W1 + b1)`, `prob = sigmoid(hidden·w2 + b2)`.
#[derive(Clone, Debug)]
pub struct OcclusionHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionHeadOutput {
    pub hidden: Vec<f64>,
    pub prob: f64,
}

impl OcclusionHead {
    pub fn new(prefix: &str, width: usize) -> Self {
        OcclusionHead {
            fc1: Linear::new(&format!("{prefix}.fc1"), width, OCC_HIDDEN),
            fc2: Linear::new(&format!("{prefix}.fc2"), OCC_HIDDEN, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.fc2.init(store, rng)
    }

    /// Returns `(hidden [B,32], prob [B,1])`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, feature: Var) -> Result<(Var, Var)> {
        let h = self.fc1.forward(tape, store, feature)?;
        let hidden = tape.relu(h);
        let logit = self.fc2.forward(tape, store, hidden)?;
        Ok((hidden, tape.sigmoid(logit)))
    }

    pub fn apply(&self, store: &ParamStore, feature: &FeatureVec) -> Result<OcclusionHeadOutput> {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::matrix(1, feature.values.len(), feature.values.clone())?);
        let (hidden, prob) = self.forward(&mut tape, store, x)?;
        Ok(OcclusionHeadOutput {
            hidden: tape.value(hidden).data().to_vec(),
            prob: tape.value(prob).item(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_half() {
        let head = OcclusionHead::new("h", 64);
        let mut store = ParamStore::new();
        head.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (_, t) in store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let out = head.apply(&store, &FeatureVec::new(vec![0.0; 64]).unwrap()).unwrap();
        assert_eq!(out.hidden, vec![0.0; 32]);
        assert_eq!(out.prob, 0.5);
    }

    #[test]
    fn probabilities_are_strictly_inside_unit_interval() {
        let head = OcclusionHead::new("h", 64);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        head.init(&mut store, &mut rng).unwrap();
        for scale in [1e-3, 1.0, 30.0] {
            let f = FeatureVec::new((0..64).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap();
            let out = head.apply(&store, &f).unwrap();
            assert!(out.prob > 0.0 && out.prob < 1.0);
            assert!(out.hidden.iter().all(|h| *h >= 0.0));
        }
    }
}
