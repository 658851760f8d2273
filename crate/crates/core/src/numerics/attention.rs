//! Multi-head scaled dot-product attention with learned projections.

use rand::Rng;

use super::kernels::{self, gemm};
use super::layers::Linear;
use super::tape::{Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Result, RoarError};

/// Input projections `W_Q, W_K, W_V` and output projection `W_O` (with biases).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub width: usize,
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, width: usize, heads: usize) -> Self {
        MultiHeadAttention {
            width,
            heads,
            query: Linear::new(&format!("{prefix}.q"), width, width),
            key: Linear::new(&format!("{prefix}.k"), width, width),
            value: Linear::new(&format!("{prefix}.v"), width, width),
            output: Linear::new(&format!("{prefix}.o"), width, width),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in [&self.query, &self.key, &self.value, &self.output] {
            l.init(store, rng)?;
        }
        Ok(())
    }

    /// Attends interleaved `[B·tokens, width]` queries over keys/values.
    ///
    /// Returns the projected output and the raw attention node (whose
    /// weights can be read back with [`Tape::attention_weights`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
    ) -> Result<(Var, Var)> {
        let qp = self.query.forward(tape, store, q)?;
        let kp = self.key.forward(tape, store, k)?;
        let vp = self.value.forward(tape, store, v)?;
        let att = tape.attention(qp, kp, vp, tokens, self.heads)?;
        let out = self.output.forward(tape, store, att)?;
        Ok((out, att))
    }

    pub fn projections(&self, store: &ParamStore) -> AttentionProjections {
        let get = |n: &str| store.expect(n).clone();
        AttentionProjections {
            w_q: get(&self.query.weight),
            b_q: get(&self.query.bias),
            w_k: get(&self.key.weight),
            b_k: get(&self.key.bias),
            w_v: get(&self.value.weight),
            b_v: get(&self.value.bias),
            w_o: get(&self.output.weight),
            b_o: get(&self.output.bias),
        }
    }
}

/// Projection weights stored `[in, out]`, applied as `x·W + b`.
#[derive(Clone, Debug)]
pub struct AttentionProjections {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

impl AttentionProjections {
    pub fn identity(width: usize) -> Self {
        let i = Tensor::identity(width);
        let z = Tensor::zeros(&[width]);
        AttentionProjections {
            w_q: i.clone(),
            b_q: z.clone(),
            w_k: i.clone(),
            b_k: z.clone(),
            w_v: i.clone(),
            b_v: z.clone(),
            w_o: i,
            b_o: z,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `n×d` output after the output projection.
    pub output: Tensor,
    /// One `n×n` row-stochastic matrix per head.
    pub weights: Vec<Tensor>,
}

fn project(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = (x.rows(), x.cols());
    if w.shape() != [d, d] || b.len() != d {
        return Err(RoarError::invalid(format!(
            "projection {:?} does not fit width {d}",
            w.shape()
        )));
    }
    let mut out = vec![0.0; n * d];
    gemm(n, d, d, x.data(), false, w.data(), false, 0.0, &mut out);
    for row in out.chunks_exact_mut(d) {
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Single-sequence multi-head attention over `n×d` query/key/value matrices.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    num_heads: usize,
    proj: &AttentionProjections,
) -> Result<AttentionOutput> {
    if q.shape().len() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(RoarError::invalid(format!(
            "q {:?}, k {:?}, v {:?} must be equal n×d matrices",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (n, d) = (q.rows(), q.cols());
    if num_heads == 0 || d % num_heads != 0 {
        return Err(RoarError::invalid(format!(
            "width {d} not divisible by {num_heads} heads"
        )));
    }
    let qp = project(q, &proj.w_q, &proj.b_q)?;
    let kp = project(k, &proj.w_k, &proj.b_k)?;
    let vp = project(v, &proj.w_v, &proj.b_v)?;
    let (att, w) = kernels::attention_forward(&qp, &kp, &vp, 1, n, d, num_heads);
    let att = Tensor::from_parts(vec![n, d], att);
    let output = Tensor::from_parts(vec![n, d], project(&att, &proj.w_o, &proj.b_o)?);
    let weights = w
        .chunks_exact(n * n)
        .map(|c| Tensor::from_parts(vec![n, n], c.to_vec()))
        .collect();
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_keys_give_uniform_weights_and_mean_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Tensor::uniform(&[4, 64], 1.0, &mut rng);
        let key_row = Tensor::uniform(&[64], 1.0, &mut rng);
        let k = Tensor::matrix(4, 64, key_row.data().repeat(4)).unwrap();
        let v = Tensor::uniform(&[4, 64], 1.0, &mut rng);
        let out = scaled_dot_product_attention(&q, &k, &v, 8, &AttentionProjections::identity(64)).unwrap();
        for w in &out.weights {
            for x in w.data() {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
        for c in 0..64 {
            let mean = (0..4).map(|r| v.data()[r * 64 + c]).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert!((out.output.data()[r * 64 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_one_hot_attention_returns_values() {
        let mut x = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            x.data_mut()[i * 4 + i] = 1000.0;
        }
        let out = scaled_dot_product_attention(&x, &x, &x, 1, &AttentionProjections::identity(4)).unwrap();
        for (a, b) in out.output.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_of_every_head_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mha = MultiHeadAttention::new("a", 64, 8);
        let mut store = ParamStore::new();
        mha.init(&mut store, &mut rng).unwrap();
        let q = Tensor::uniform(&[4, 64], 2.0, &mut rng);
        let k = Tensor::uniform(&[4, 64], 2.0, &mut rng);
        let v = Tensor::uniform(&[4, 64], 2.0, &mut rng);
        let proj = mha.projections(&store);
        let out = scaled_dot_product_attention(&q, &k, &v, 8, &proj).unwrap();
        assert_eq!(out.weights.len(), 8);
        // Naive projections and per-head softmax as the reference.
        let naive = |x: &Tensor, w: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
            (0..4)
                .map(|r| {
                    (0..64)
                        .map(|c| {
                            b.data()[c]
                                + (0..64)
                                    .map(|i| x.data()[r * 64 + i] * w.data()[i * 64 + c])
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let qp = naive(&q, &proj.w_q, &proj.b_q);
        let kp = naive(&k, &proj.w_k, &proj.b_k);
        for (h, w) in out.weights.iter().enumerate() {
            for (r, qr) in qp.iter().enumerate() {
                let logits: Vec<f64> = (0..4)
                    .map(|j| (0..8).map(|c| qr[h * 8 + c] * kp[j][h * 8 + c]).sum::<f64>() / 8f64.sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let row = w.row(r);
                for j in 0..4 {
                    assert!((row[j] - logits[j].exp() / z).abs() < 1e-12);
                }
                assert!(row.iter().all(|x| *x >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_attention_matches_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mha = MultiHeadAttention::new("a", 16, 4);
        let mut store = ParamStore::new();
        mha.init(&mut store, &mut rng).unwrap();
        let q = Tensor::uniform(&[3, 16], 1.0, &mut rng);
        let k = Tensor::uniform(&[3, 16], 1.0, &mut rng);
        let v = Tensor::uniform(&[3, 16], 1.0, &mut rng);
        let plain = scaled_dot_product_attention(&q, &k, &v, 4, &mha.projections(&store)).unwrap();
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let (out, att) = mha.forward(&mut tape, &store, qv, kv, vv, 3).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(plain.output.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = tape.attention_weights(att).unwrap();
        let flat: Vec<f64> = plain.weights.iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(w.len(), flat.len());
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let p = AttentionProjections::identity(6);
        let a = Tensor::zeros(&[4, 6]);
        assert!(scaled_dot_product_attention(&a, &a, &a, 4, &p).is_err());
        assert!(scaled_dot_product_attention(&a, &Tensor::zeros(&[3, 6]), &a, 2, &p).is_err());
    }
}
