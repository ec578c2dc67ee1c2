//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] records each operation together with its output value. Since
//! an operation can only consume values that already exist on the tape, the
//! recording order is a topological order, and [`Tape::backward`] walks it in
//! reverse visiting every reachable node exactly once.
//!
//! Only the operations the trajectory predictor needs are provided: affine
//! maps, valid 1D convolution over time, ReLU, confidence-weighted squared
//! error and a few reductions.

use std::borrow::Cow;

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm, Layout, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Conv1d { x: Var, k: Var, b: Var, seqs: usize },
    Relu(Var),
    Reshape(Var),
    WeightedSqError { pred: Var, truth: Tensor, weights: Tensor },
    WeightedSum { x: Var, coeffs: Vec<f64> },
    Sum(Var),
    Add(Vec<Var>),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Records a parameter, borrowing its current value from the store.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(&store.get(id).value), Op::Param(id), true)
    }

    /// Affine map along the last axis: `x · w + b` with `w: [d_in, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        let xs = xv.shape();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::Shape {
                op: "linear",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        if bv.shape() != [d_out] {
            return Err(Error::Shape {
                op: "linear bias",
                left: ws.to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let rows = xv.len() / d_in;
        let mut out = vec![0.0; rows * d_out];
        gemm(
            rows,
            d_in,
            d_out,
            xv.data(),
            Layout::row_major(d_in),
            wv.data(),
            Layout::row_major(d_out),
            0.0,
            &mut out,
            Layout::row_major(d_out),
        );
        add_row_bias(&mut out, bv.data());
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = d_out;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Cow::Owned(value), Op::Linear { x, w, b }, needs))
    }

    /// Valid (unpadded, stride 1) convolution over the leading time axis.
    ///
    /// `x: [T, c_in]`, `k: [width, c_in, c_out]`, `b: [c_out]`, output
    /// `[T - width + 1, c_out]`.
    pub fn conv1d_valid(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        self.conv1d_valid_seqs(x, k, b, 1)
    }

    /// Valid convolution applied separately to `seqs` equally long
    /// sequences stacked along the first axis of `x`. Output rows are the
    /// `t − width + 1` positions of each sequence in order.
    pub fn conv1d_valid_seqs(&mut self, x: Var, k: Var, b: Var, seqs: usize) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let (xs, ks) = (xv.shape(), kv.shape());
        if xs.len() != 2 || ks.len() != 3 || xs[1] != ks[1] || bv.shape() != [ks[2]] {
            return Err(Error::Shape {
                op: "conv1d_valid",
                left: xs.to_vec(),
                right: ks.to_vec(),
            });
        }
        if seqs == 0 || xs[0] % seqs != 0 {
            return Err(Error::Shape {
                op: "conv1d_valid (rows not divisible into sequences)",
                left: xs.to_vec(),
                right: vec![seqs],
            });
        }
        let (t, c_in) = (xs[0] / seqs, xs[1]);
        let (width, c_out) = (ks[0], ks[2]);
        if t < width {
            return Err(Error::Data(format!(
                "sequence of length {t} is shorter than the kernel width {width}"
            )));
        }
        let rows = seqs * (t - width + 1);
        let mut out = vec![0.0; rows * c_out];
        let (cols, layout) = im2col(xv.data(), seqs, t, width, c_in);
        gemm(
            rows,
            width * c_in,
            c_out,
            &cols,
            layout,
            kv.data(),
            Layout::row_major(c_out),
            0.0,
            &mut out,
            Layout::row_major(c_out),
        );
        add_row_bias(&mut out, bv.data());
        let needs = self.needs(x) || self.needs(k) || self.needs(b);
        let value = Tensor::new(vec![rows, c_out], out)?;
        Ok(self.push(Cow::Owned(value), Op::Conv1d { x, k, b, seqs }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        // NaN passes through so non-finite losses stay visible.
        let data = xv.data().iter().map(|&v| if v <= 0.0 { 0.0 } else { v }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Cow::Owned(value), Op::Relu(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(Cow::Owned(value), Op::Reshape(x), needs))
    }

    /// Confidence-weighted squared error per pose row.
    ///
    /// `pred` and `truth` hold flattened `(x1, y1, …, xJ, yJ)` poses along
    /// the last axis; `weights` holds the matching `J` joint weights per row.
    /// The output drops the last axis: one error per pose.
    pub fn weighted_sq_error(&mut self, pred: Var, truth: Tensor, weights: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        let ps = pv.shape().to_vec();
        let pose_dim = *ps.last().unwrap_or(&0);
        let joints = pose_dim / 2;
        let rows = if pose_dim == 0 { 0 } else { pv.len() / pose_dim };
        if truth.shape() != ps.as_slice() || pose_dim % 2 != 0 || weights.len() != rows * joints
        {
            return Err(Error::Shape {
                op: "weighted_sq_error",
                left: ps,
                right: truth.shape().to_vec(),
            });
        }
        let errors = weighted_sq_error_rows(pv.data(), truth.data(), weights.data(), joints);
        let value = Tensor::new(ps[..ps.len() - 1].to_vec(), errors)?;
        let needs = self.needs(pred);
        Ok(self.push(
            Cow::Owned(value),
            Op::WeightedSqError {
                pred,
                truth,
                weights,
            },
            needs,
        ))
    }

    /// `Σ_i coeffs[i] · x[i]` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, coeffs: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if coeffs.len() != xv.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: xv.shape().to_vec(),
                right: vec![coeffs.len()],
            });
        }
        let s = xv.data().iter().zip(&coeffs).map(|(a, c)| a * c).sum();
        let needs = self.needs(x);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(s)),
            Op::WeightedSum { x, coeffs },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(x), needs)
    }

    /// Elementwise sum of equally shaped values.
    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Validation("add of zero operands".into()))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != acc.shape() {
                return Err(Error::Shape {
                    op: "add",
                    left: acc.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            acc.add_assign(v);
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Cow::Owned(acc), Op::Add(xs.to_vec()), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut v = self.value(x).clone();
        v.scale(factor);
        let needs = self.needs(x);
        self.push(Cow::Owned(v), Op::Scale(x, factor), needs)
    }

    /// Propagates `d loss / d node` back through every recorded operation.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                left: lv.shape().to_vec(),
                right: vec![],
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Linear { x, w, b } => self.linear_backward(&dy, *x, *w, *b, &mut adj),
                Op::Conv1d { x, k, b, seqs } => self.conv_backward(&dy, *x, *k, *b, *seqs, &mut adj),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut adj, *x, dy.clone().reshape(&shape)?);
                }
                Op::WeightedSqError {
                    pred,
                    truth,
                    weights,
                } => {
                    let pv = self.value(*pred);
                    let pose_dim = *pv.shape().last().unwrap();
                    let joints = pose_dim / 2;
                    let mut g = vec![0.0; pv.len()];
                    for (r, &gr) in dy.data().iter().enumerate() {
                        let base = r * pose_dim;
                        for k in 0..joints {
                            let w = weights.data()[r * joints + k];
                            for c in 0..2 {
                                let idx = base + 2 * k + c;
                                g[idx] = gr * 2.0 * w * (pv.data()[idx] - truth.data()[idx]);
                            }
                        }
                    }
                    accumulate(&mut adj, *pred, Tensor::new(pv.shape().to_vec(), g)?);
                }
                Op::WeightedSum { x, coeffs } => {
                    let g0 = dy.item();
                    let xv = self.value(*x);
                    let data = coeffs.iter().map(|c| c * g0).collect();
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut adj, *x, Tensor::full(xv.shape(), dy.item()));
                }
                Op::Add(xs) => {
                    for &x in xs {
                        if self.needs(x) {
                            accumulate(&mut adj, x, dy.clone());
                        }
                    }
                }
                Op::Scale(x, f) => {
                    let mut g = dy.clone();
                    g.scale(*f);
                    accumulate(&mut adj, *x, g);
                }
            }
            adj[i] = Some(dy);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            adjoints: adj,
            params,
        })
    }

    fn linear_backward(&self, dy: &Tensor, x: Var, w: Var, b: Var, adj: &mut [Option<Tensor>]) {
        let (xv, wv) = (self.value(x), self.value(w));
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        let rows = xv.len() / d_in;
        if self.needs(x) {
            let mut dx = vec![0.0; rows * d_in];
            gemm(
                rows,
                d_out,
                d_in,
                dy.data(),
                Layout::row_major(d_out),
                wv.data(),
                Layout::row_major(d_out).transposed(),
                0.0,
                &mut dx,
                Layout::row_major(d_in),
            );
            accumulate(adj, x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
        }
        if self.needs(w) {
            let mut dw = vec![0.0; d_in * d_out];
            gemm(
                d_in,
                rows,
                d_out,
                xv.data(),
                Layout::row_major(d_in).transposed(),
                dy.data(),
                Layout::row_major(d_out),
                0.0,
                &mut dw,
                Layout::row_major(d_out),
            );
            accumulate(adj, w, Tensor::new(vec![d_in, d_out], dw).unwrap());
        }
        if self.needs(b) {
            accumulate(adj, b, column_sums(dy.data(), d_out));
        }
    }

    fn conv_backward(&self, dy: &Tensor, x: Var, k: Var, b: Var, seqs: usize, adj: &mut [Option<Tensor>]) {
        let (xv, kv) = (self.value(x), self.value(k));
        let (t, c_in) = (xv.shape()[0] / seqs, xv.shape()[1]);
        let (width, c_out) = (kv.shape()[0], kv.shape()[2]);
        let t_out = t - width + 1;
        let rows = seqs * t_out;
        let patch = width * c_in;
        if self.needs(k) {
            let (cols, layout) = im2col(xv.data(), seqs, t, width, c_in);
            let mut dk = vec![0.0; patch * c_out];
            gemm(
                patch,
                rows,
                c_out,
                &cols,
                layout.transposed(),
                dy.data(),
                Layout::row_major(c_out),
                0.0,
                &mut dk,
                Layout::row_major(c_out),
            );
            accumulate(adj, k, Tensor::new(kv.shape().to_vec(), dk).unwrap());
        }
        if self.needs(x) {
            // dcols = dy · Kᵀ, then each patch row is added back onto the
            // input rows it was read from.
            let mut dcols = vec![0.0; rows * patch];
            gemm(
                rows,
                c_out,
                patch,
                dy.data(),
                Layout::row_major(c_out),
                kv.data(),
                Layout::row_major(c_out).transposed(),
                0.0,
                &mut dcols,
                Layout::row_major(patch),
            );
            let mut dx = vec![0.0; seqs * t * c_in];
            for s in 0..seqs {
                for i in 0..t_out {
                    let src = &dcols[(s * t_out + i) * patch..(s * t_out + i + 1) * patch];
                    let start = (s * t + i) * c_in;
                    for (d, v) in dx[start..start + patch].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            accumulate(adj, x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
        }
        if self.needs(b) {
            accumulate(adj, b, column_sums(dy.data(), c_out));
        }
    }
}

/// Patch matrix of a valid convolution: one row of `width · c_in` values per
/// output position. Consecutive input rows are contiguous, so for a single
/// sequence the input itself, read with a row stride of `c_in`, is already
/// that matrix.
fn im2col(x: &[f64], seqs: usize, t: usize, width: usize, c_in: usize) -> (Cow<'_, [f64]>, Layout) {
    let patch = width * c_in;
    if seqs == 1 {
        return (Cow::Borrowed(x), Layout { rs: c_in, cs: 1 });
    }
    let t_out = t - width + 1;
    let mut cols = Vec::with_capacity(seqs * t_out * patch);
    for s in 0..seqs {
        for i in 0..t_out {
            let start = (s * t + i) * c_in;
            cols.extend_from_slice(&x[start..start + patch]);
        }
    }
    (Cow::Owned(cols), Layout::row_major(patch))
}

fn add_row_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn column_sums(data: &[f64], cols: usize) -> Tensor {
    let mut s = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::new(vec![cols], s).unwrap()
}

fn accumulate(adj: &mut [Option<Tensor>], x: Var, g: Tensor) {
    match &mut adj[x.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Per-row `Σ_k w_k ((x̂_k − x_k)² + (ŷ_k − y_k)²)`.
pub(crate) fn weighted_sq_error_rows(
    pred: &[f64],
    truth: &[f64],
    weights: &[f64],
    joints: usize,
) -> Vec<f64> {
    pred.chunks_exact(2 * joints)
        .zip(truth.chunks_exact(2 * joints))
        .zip(weights.chunks_exact(joints))
        .map(|((p, t), w)| {
            w.iter()
                .enumerate()
                .map(|(k, wk)| {
                    let dx = p[2 * k] - t[2 * k];
                    let dy = p[2 * k + 1] - t[2 * k + 1];
                    wk * (dx * dx + dy * dy)
                })
                .sum()
        })
        .collect()
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if it influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter recorded on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.adjoints[i].as_ref().map(|g| (id, g)))
    }

    /// Keeps only the parameter gradients.
    pub fn into_param_grads(mut self) -> ParamGrads {
        let grads = self
            .params
            .iter()
            .filter_map(|&(id, i)| self.adjoints[i].take().map(|g| (id, g)))
            .collect();
        ParamGrads(grads)
    }
}

/// Parameter gradients detached from their tape.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads(pub Vec<(ParamId, Tensor)>);

impl ParamStore {
    /// Adds `grads` into the `grad` slot of the matching parameters.
    pub fn accumulate<'g>(&mut self, grads: impl IntoIterator<Item = (ParamId, &'g Tensor)>) {
        for (id, g) in grads {
            self.get_mut(id).grad.add_assign(g);
        }
    }
}

impl ParamGrads {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.0.iter().map(|(id, g)| (*id, g))
    }
}
