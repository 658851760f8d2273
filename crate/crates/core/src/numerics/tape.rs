//! Arena-based reverse-mode differentiation tape.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the operation that produced it. [`Tape::backward`] walks the arena in
//! reverse and accumulates vector-Jacobian products into a [`Gradients`]
//! buffer. Parameters enter the tape once per pass through [`Tape::param`],
//! so repeated use across time steps accumulates into a single gradient.

use std::collections::HashMap;

use super::kernels::{self, ConvGeometry};
use super::tensor::{GradMap, ParamStore, Tensor};
use crate::error::{Result, RoarError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probability clamp applied before logarithms in cross-entropy terms.
pub const BCE_EPS: f64 = 1e-7;

/// Inputs to `exp` are clamped here so activations stay finite.
const EXP_INPUT_MAX: f64 = 50.0;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Hardtanh(Var, f64, f64),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Interleave(Vec<Var>),
    TakeToken(Var, usize, usize),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
        batch: usize,
        cols: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
        heads: usize,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    frozen: bool,
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> RoarError {
    RoarError::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape whose parameters are bound as constants: nothing is kept for
    /// a backward pass.
    pub fn inference() -> Self {
        Tape {
            frozen: true,
            ..Tape::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a differentiable leaf that is not a named parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter, reusing the existing leaf if already bound.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store.expect(name).clone();
        let v = self.push(t, Op::Leaf, !self.frozen);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.value(bias).len() != n {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(bias);
        debug_assert_eq!(out.len(), m * n);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(x, bias), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.value(a).len() != self.value(b).len() {
            return Err(mismatch(name, self.shape(a), self.shape(b)));
        }
        Ok(self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * s).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::Scale(x, s), ng)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v + s).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), Op::AddScalar(x), ng)
    }

    /// Elementwise product with a fixed buffer (dropout masks, sampled noise).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(RoarError::invalid(format!(
                "mul_const: buffer of {} for shape {:?}",
                c.len(),
                self.shape(x)
            )));
        }
        let out = self.data(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulConst(x, c), ng))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, out), op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), |v| v.min(EXP_INPUT_MAX).exp())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square(x), |v| v * v)
    }

    pub fn hardtanh(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        debug_assert!(lo < hi);
        self.map(x, Op::Hardtanh(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims2(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims2(*p).1).collect();
        if parts.iter().any(|p| self.dims2(*p).0 != rows) {
            return Err(RoarError::invalid("concat_cols: row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(*p)[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + len > cols {
            return Err(RoarError::invalid(format!(
                "slice_cols: {start}+{len} exceeds {cols} columns"
            )));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![rows, len], out), Op::SliceCols(x, start), ng))
    }

    /// Rows `start..start+len` of the leading dimension, flattened to `[len, cols]`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + len > rows {
            return Err(RoarError::invalid(format!(
                "slice_rows: {start}+{len} exceeds {rows} rows"
            )));
        }
        let out = self.data(x)[start * cols..(start + len) * cols].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![len, cols], out), Op::SliceRows(x, start), ng))
    }

    /// Stacks `n` token matrices `[B,d]` into `[B·n, d]`, sample-major.
    pub fn interleave(&mut self, tokens: &[Var]) -> Result<Var> {
        let (b, d) = self.dims2(tokens[0]);
        if tokens.iter().any(|t| self.dims2(*t) != (b, d)) {
            return Err(RoarError::invalid("interleave: token shapes differ"));
        }
        let n = tokens.len();
        let mut out = vec![0.0; b * n * d];
        for (j, t) in tokens.iter().enumerate() {
            let src = self.data(*t);
            for r in 0..b {
                out[(r * n + j) * d..(r * n + j + 1) * d].copy_from_slice(&src[r * d..(r + 1) * d]);
            }
        }
        let ng = tokens.iter().any(|t| self.ng(*t));
        Ok(self.push(
            Tensor::from_parts(vec![b * n, d], out),
            Op::Interleave(tokens.to_vec()),
            ng,
        ))
    }

    /// Extracts token `j` of `n` from an interleaved `[B·n, d]` matrix.
    pub fn take_token(&mut self, x: Var, j: usize, n: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if rows % n != 0 || j >= n {
            return Err(RoarError::invalid(format!(
                "take_token: token {j} of {n} from {rows} rows"
            )));
        }
        let b = rows / n;
        let src = self.data(x);
        let mut out = Vec::with_capacity(b * d);
        for r in 0..b {
            out.extend_from_slice(&src[(r * n + j) * d..(r * n + j + 1) * d]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, d], out), Op::TakeToken(x, j, n), ng))
    }

    /// Convolution of `[B, C, H, W]` input with weight `[Cout, C·k·k]` and bias `[Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let x = self.value(input);
        if x.is_empty() || x.cols() != geom.in_len() {
            return Err(RoarError::invalid(format!(
                "conv2d: input {:?} does not match {}x{}x{}",
                x.shape(),
                geom.in_channels,
                geom.in_h,
                geom.in_w
            )));
        }
        if self.shape(weight) != [geom.out_channels, geom.patch_len()] || self.value(bias).len() != geom.out_channels {
            return Err(RoarError::invalid("conv2d: weight/bias shape mismatch"));
        }
        let batch = x.rows();
        let cols = kernels::im2col(x.data(), batch, &geom);
        let p_len = geom.out_h() * geom.out_w();
        let width = batch * p_len;
        let mut flat = vec![0.0; geom.out_channels * width];
        kernels::gemm(
            geom.out_channels,
            geom.patch_len(),
            width,
            self.data(weight),
            false,
            &cols,
            false,
            0.0,
            &mut flat,
        );
        let bvals = self.data(bias);
        let mut out = vec![0.0; batch * geom.out_len()];
        for co in 0..geom.out_channels {
            for b in 0..batch {
                let src = &flat[co * width + b * p_len..co * width + (b + 1) * p_len];
                let dst = &mut out[b * geom.out_len() + co * p_len..][..p_len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bvals[co];
                }
            }
        }
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        let cols = if ng { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::from_parts(vec![batch, geom.out_channels, geom.out_h(), geom.out_w()], out),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
                cols,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention over interleaved `[B·n, d]` tokens.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, tokens: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.dims2(q);
        if self.dims2(k) != (rows, d) || self.dims2(v) != (rows, d) {
            return Err(RoarError::invalid("attention: q/k/v shapes differ"));
        }
        if heads == 0 || d % heads != 0 || tokens == 0 || rows % tokens != 0 {
            return Err(RoarError::invalid(format!(
                "attention: width {d} with {heads} heads over {tokens} tokens"
            )));
        }
        let batch = rows / tokens;
        let (out, weights) =
            kernels::attention_forward(self.data(q), self.data(k), self.data(v), batch, tokens, d, heads);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::Attention {
                q,
                k,
                v,
                tokens,
                heads,
                weights,
            },
            ng,
        ))
    }

    /// Attention weights recorded by an [`Tape::attention`] node, `[B, heads, n, n]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::stable_sum(self.data(x).iter().copied());
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = kernels::stable_sum(self.data(x).iter().copied()) / n;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    pub fn bce(&mut self, p: Var, targets: Vec<f64>) -> Result<Var> {
        if targets.len() != self.value(p).len() || targets.is_empty() {
            return Err(RoarError::invalid(format!(
                "bce: {} targets for shape {:?}",
                targets.len(),
                self.shape(p)
            )));
        }
        let n = targets.len() as f64;
        let s = kernels::stable_sum(self.data(p).iter().zip(&targets).map(|(p, y)| bce_term(*p, *y))) / n;
        let ng = self.ng(p);
        Ok(self.push(Tensor::scalar(s), Op::Bce(p, targets), ng))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(RoarError::invalid(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                if self.ng(*a) {
                    let da = slot(grads, *a, m * k);
                    kernels::gemm(m, n, k, g, false, self.data(*b), true, 1.0, da);
                }
                if self.ng(*b) {
                    let db = slot(grads, *b, k * n);
                    kernels::gemm(k, m, n, self.data(*a), true, g, false, 1.0, db);
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.ng(*b) {
                    let n = self.value(*b).len();
                    let db = slot(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let db = slot(grads, *b, g.len());
                    for (d, gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let other = self.data(*b);
                    let da = slot(grads, *a, g.len());
                    for ((d, gv), o) in da.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if self.ng(*b) {
                    let other = self.data(*a);
                    let db = slot(grads, *b, g.len());
                    for ((d, gv), o) in db.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                let dx = slot(grads, *x, g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv * s;
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::MulConst(x, c) => {
                let dx = slot(grads, *x, g.len());
                for ((d, gv), cv) in dx.iter_mut().zip(g).zip(c) {
                    *d += gv * cv;
                }
            }
            Op::Relu(x) => {
                let dx = slot(grads, *x, g.len());
                for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
                    if *yv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let dx = slot(grads, *x, g.len());
                for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            Op::Exp(x) => {
                let xin = self.data(*x);
                let dx = slot(grads, *x, g.len());
                for (((d, gv), yv), xv) in dx.iter_mut().zip(g).zip(y).zip(xin) {
                    if *xv < EXP_INPUT_MAX {
                        *d += gv * yv;
                    }
                }
            }
            Op::Square(x) => {
                let xin = self.data(*x);
                let dx = slot(grads, *x, g.len());
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xin) {
                    *d += 2.0 * gv * xv;
                }
            }
            Op::Hardtanh(x, lo, hi) => {
                let xin = self.data(*x);
                let dx = slot(grads, *x, g.len());
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xin) {
                    if *xv > *lo && *xv < *hi {
                        *d += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.dims2(parts[0]).0;
                let total = g.len() / rows.max(1);
                let mut off = 0;
                for p in parts {
                    let w = self.dims2(*p).1;
                    if self.ng(*p) {
                        let dp = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = self.dims2(*x);
                let len = g.len() / rows.max(1);
                let dx = slot(grads, *x, rows * cols);
                for r in 0..rows {
                    add_into(
                        &mut dx[r * cols + start..r * cols + start + len],
                        &g[r * len..(r + 1) * len],
                    );
                }
            }
            Op::SliceRows(x, start) => {
                let (rows, cols) = self.dims2(*x);
                let dx = slot(grads, *x, rows * cols);
                add_into(&mut dx[start * cols..start * cols + g.len()], g);
            }
            Op::Interleave(tokens) => {
                let (b, d) = self.dims2(tokens[0]);
                let n = tokens.len();
                for (j, t) in tokens.iter().enumerate() {
                    if !self.ng(*t) {
                        continue;
                    }
                    let dt = slot(grads, *t, b * d);
                    for r in 0..b {
                        add_into(&mut dt[r * d..(r + 1) * d], &g[(r * n + j) * d..(r * n + j + 1) * d]);
                    }
                }
            }
            Op::TakeToken(x, j, n) => {
                let (rows, d) = self.dims2(*x);
                let dx = slot(grads, *x, rows * d);
                for r in 0..rows / n {
                    add_into(&mut dx[(r * n + j) * d..(r * n + j + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
                cols,
            } => {
                let p_len = geom.out_h() * geom.out_w();
                let width = batch * p_len;
                // Rearrange dY from [B, Cout, P] to [Cout, B·P].
                let mut gy = vec![0.0; geom.out_channels * width];
                for b in 0..*batch {
                    for co in 0..geom.out_channels {
                        gy[co * width + b * p_len..co * width + (b + 1) * p_len]
                            .copy_from_slice(&g[b * geom.out_len() + co * p_len..][..p_len]);
                    }
                }
                if self.ng(*bias) {
                    let db = slot(grads, *bias, geom.out_channels);
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += gy[co * width..(co + 1) * width].iter().sum::<f64>();
                    }
                }
                if self.ng(*weight) {
                    let dw = slot(grads, *weight, geom.out_channels * geom.patch_len());
                    kernels::gemm(
                        geom.out_channels,
                        width,
                        geom.patch_len(),
                        &gy,
                        false,
                        cols,
                        true,
                        1.0,
                        dw,
                    );
                }
                if self.ng(*input) {
                    let mut dcols = vec![0.0; geom.patch_len() * width];
                    kernels::gemm(
                        geom.patch_len(),
                        geom.out_channels,
                        width,
                        self.data(*weight),
                        true,
                        &gy,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let dx = slot(grads, *input, batch * geom.in_len());
                    kernels::col2im_add(&dcols, *batch, geom, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                tokens,
                heads,
                weights,
            } => self.attention_backward(g, *q, *k, *v, *tokens, *heads, weights, grads),
            Op::Sum(x) => {
                let dx = slot(grads, *x, self.value(*x).len());
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let dx = slot(grads, *x, n);
                let s = g[0] / n as f64;
                for d in dx.iter_mut() {
                    *d += s;
                }
            }
            Op::Bce(p, targets) => {
                let n = targets.len() as f64;
                let pv = self.data(*p);
                let dp = slot(grads, *p, targets.len());
                for ((d, pi), yi) in dp.iter_mut().zip(pv).zip(targets) {
                    if *pi > BCE_EPS && *pi < 1.0 - BCE_EPS {
                        *d += g[0] * (-(yi / pi) + (1.0 - yi) / (1.0 - pi)) / n;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
        heads: usize,
        weights: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (rows, d) = self.dims2(q);
        let batch = rows / tokens;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut da = vec![0.0; tokens];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let wbase = (b * heads + h) * tokens * tokens;
                for i in 0..tokens {
                    let a_row = &weights[wbase + i * tokens..wbase + (i + 1) * tokens];
                    let go = &g[(b * tokens + i) * d + off..][..dh];
                    // dA_ij = dO_i · V_j ; dV_j += A_ij dO_i
                    for j in 0..tokens {
                        let r = (b * tokens + j) * d + off;
                        da[j] = go.iter().zip(&vd[r..r + dh]).map(|(x, y)| x * y).sum();
                        for (dvv, gov) in dv[r..r + dh].iter_mut().zip(go) {
                            *dvv += a_row[j] * gov;
                        }
                    }
                    let dot: f64 = da.iter().zip(a_row).map(|(x, y)| x * y).sum();
                    let qi = (b * tokens + i) * d + off;
                    for j in 0..tokens {
                        let ds = a_row[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let r = (b * tokens + j) * d + off;
                        for c in 0..dh {
                            dq[qi + c] += ds * kd[r + c];
                            dk[r + c] += ds * qd[qi + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.ng(var) {
                add_into(slot(grads, var, rows * d), &buf);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter the sweep reached.
    pub fn param_grads(&self, tape: &Tape) -> GradMap {
        let mut out = GradMap::new();
        for (name, v) in tape.bound_params() {
            if let Some(g) = self.get(*v) {
                let shape = tape.shape(*v).to_vec();
                out.insert(name.clone(), Tensor::from_parts(shape, g.to_vec()));
            }
        }
        out
    }
}
