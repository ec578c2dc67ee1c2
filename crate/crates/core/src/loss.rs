//! Node, layer and model losses over per-node prediction errors.
//!
//! Node `i` of a supervised layer with timescale `t_k` predicts frames
//! `[i + t_k, i + 2 t_k − 1]`; `e(t, i)` is the confidence-weighted squared
//! error of that prediction at frame `t`. From these:
//!
//! * node loss `L1(i) = Σ_t e(t, i)` over the node's prediction span,
//! * layer loss at a frame `L2(t)` = mean of `e(t, i)` over the nodes
//!   predicting `t`,
//! * layer total `𝕃 = Σ_i L1(i) + Σ_t L2(t)`,
//! * model loss = `Σ 𝕃` over the supervised layers in use.

use crate::error::{Error, Result};
use crate::model::NodeSpan;
use crate::nn::tape::weighted_sq_error_rows;
use crate::nn::{Tape, Tensor, Var};
use crate::trajectory::{NUM_JOINTS, POSE_DIM};

/// `e(t, i)` for one supervised layer, defined only on each present node's
/// prediction span.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeErrorMatrix {
    pub layer: usize,
    pub timescale: usize,
    /// Number of frames `T` in the sequence.
    pub frames: usize,
    /// Number of nodes `M_j` at the layer, including excluded ones.
    pub nodes: usize,
    errors: Vec<f64>,
    mask: Vec<bool>,
}

impl NodeErrorMatrix {
    pub fn new(layer: usize, timescale: usize, nodes: usize, frames: usize) -> Self {
        Self {
            layer,
            timescale,
            frames,
            nodes,
            errors: vec![0.0; nodes * frames],
            mask: vec![false; nodes * frames],
        }
    }

    pub fn span(&self, node: usize) -> NodeSpan {
        NodeSpan::new(self.layer, node, self.timescale)
    }

    /// Whether node `i`'s whole prediction span lies inside the sequence.
    pub fn fits(&self, node: usize) -> bool {
        node < self.nodes && self.span(node).pred_end < self.frames
    }

    /// Sets `e(t, i)`. `t` must lie in node `i`'s prediction span.
    pub fn set(&mut self, t: usize, node: usize, error: f64) {
        assert!(self.span(node).predicts(t) && t < self.frames, "frame {t} outside span of node {node}");
        let k = node * self.frames + t;
        self.errors[k] = error;
        self.mask[k] = true;
    }

    pub fn get(&self, t: usize, node: usize) -> Option<f64> {
        let k = node * self.frames + t;
        self.mask[k].then(|| self.errors[k])
    }

    pub fn node_present(&self, node: usize) -> bool {
        let row = node * self.frames..(node + 1) * self.frames;
        self.mask[row].iter().any(|&m| m)
    }

    /// `n(t)`: number of nodes with an error at frame `t`.
    pub fn coverage(&self, t: usize) -> usize {
        (0..self.nodes).filter(|&i| self.mask[i * self.frames + t]).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Drops every node for which `keep` is false.
    pub fn retain_nodes(&mut self, keep: impl Fn(usize) -> bool) {
        for i in (0..self.nodes).filter(|&i| !keep(i)) {
            self.mask[i * self.frames..(i + 1) * self.frames].fill(false);
        }
    }

    /// Scales every defined error by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.errors.iter_mut().for_each(|e| *e *= factor);
        out
    }
}

/// `L2(t)` for every frame, with coverage counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerErrorSeries {
    pub layer: usize,
    pub timescale: usize,
    pub values: Vec<Option<f64>>,
    pub coverage: Vec<usize>,
}

impl LayerErrorSeries {
    pub fn empty(layer: usize, timescale: usize, frames: usize) -> Self {
        Self {
            layer,
            timescale,
            values: vec![None; frames],
            coverage: vec![0; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        self.values.get(t).copied().flatten()
    }

    /// The series with frame `t` moved to `T − 1 − t`.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.values.reverse();
        out.coverage.reverse();
        out
    }
}

/// Builds `e(t, i)` from decoded node predictions.
///
/// `predictions` is `[M, t_k · 50]`, node `i`'s row holding its `t_k`
/// predicted poses; `truth` is `[T, 50]` and `weights` `[T, 25]`. Nodes whose
/// prediction span runs past the end of `truth` are excluded.
pub fn node_errors(
    layer: usize,
    timescale: usize,
    predictions: &Tensor,
    truth: &Tensor,
    weights: &Tensor,
) -> Result<NodeErrorMatrix> {
    check_inputs(timescale, predictions, truth, weights)?;
    let nodes = predictions.rows();
    let frames = truth.rows();
    let mut m = NodeErrorMatrix::new(layer, timescale, nodes, frames);
    for i in 0..nodes {
        if !m.fits(i) {
            continue;
        }
        let span = m.span(i);
        let pred = predictions.row(i);
        let t0 = span.pred_start;
        let errs = weighted_sq_error_rows(
            pred,
            &truth.data()[t0 * POSE_DIM..(t0 + timescale) * POSE_DIM],
            &weights.data()[t0 * NUM_JOINTS..(t0 + timescale) * NUM_JOINTS],
            NUM_JOINTS,
        );
        for (s, e) in errs.into_iter().enumerate() {
            m.set(t0 + s, i, e);
        }
    }
    Ok(m)
}

fn check_inputs(timescale: usize, predictions: &Tensor, truth: &Tensor, weights: &Tensor) -> Result<()> {
    if predictions.cols() != timescale * POSE_DIM {
        return Err(Error::Shape {
            op: "node_errors predictions",
            left: predictions.shape().to_vec(),
            right: vec![timescale * POSE_DIM],
        });
    }
    if truth.cols() != POSE_DIM || weights.cols() != NUM_JOINTS || truth.rows() != weights.rows() {
        return Err(Error::Shape {
            op: "node_errors truth/weights",
            left: truth.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    Ok(())
}

/// `L1(i) = Σ_{t ∈ 𝕋(i)} e(t, i)`.
pub fn node_loss(m: &NodeErrorMatrix, node: usize) -> f64 {
    (0..m.frames).filter_map(|t| m.get(t, node)).sum()
}

/// `L2(t)`, or `None` when no node predicts frame `t`.
pub fn layer_loss_at(m: &NodeErrorMatrix, t: usize) -> Option<f64> {
    let (sum, n) = (0..m.nodes)
        .filter_map(|i| m.get(t, i))
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// `𝕃 = Σ_i L1(i) + Σ_t L2(t)` over covered frames.
pub fn layer_total(m: &NodeErrorMatrix) -> f64 {
    let nodes: f64 = (0..m.nodes).map(|i| node_loss(m, i)).sum();
    let frames: f64 = (0..m.frames).filter_map(|t| layer_loss_at(m, t)).sum();
    nodes + frames
}

pub fn layer_series(m: &NodeErrorMatrix) -> LayerErrorSeries {
    LayerErrorSeries {
        layer: m.layer,
        timescale: m.timescale,
        values: (0..m.frames).map(|t| layer_loss_at(m, t)).collect(),
        coverage: (0..m.frames).map(|t| m.coverage(t)).collect(),
    }
}

/// `Σ_j 𝕃_j` over the layers that have at least one covered frame.
pub fn model_loss(layers: &[NodeErrorMatrix]) -> Result<f64> {
    let active: Vec<_> = layers.iter().filter(|m| !m.is_empty()).collect();
    if active.is_empty() {
        return Err(Error::Data("no supervised layer has coverage".into()));
    }
    Ok(active.into_iter().map(layer_total).sum())
}

/// Records `𝕃_j` for one layer on the tape, differentiable with respect to
/// the decoder output `predictions` (`[M, t_k · 50]`).
///
/// The layer total is linear in the node errors:
/// `𝕃 = Σ_{(t,i)} e(t, i) · (1 + 1 / n(t))`, which is what gets recorded.
/// Returns `None` when no node's prediction span fits in `truth`.
pub fn layer_loss_on_tape(
    tape: &mut Tape<'_>,
    predictions: Var,
    layer: usize,
    timescale: usize,
    truth: &Tensor,
    weights: &Tensor,
) -> Result<Option<Var>> {
    layer_loss_on_tape_batch(tape, predictions, layer, timescale, &[(truth, weights)])
}

/// Sum of `𝕃_j` over a batch of equally long sequences. `predictions`
/// stacks the `M` node rows of each sequence in batch order.
pub fn layer_loss_on_tape_batch(
    tape: &mut Tape<'_>,
    predictions: Var,
    layer: usize,
    timescale: usize,
    batch: &[(&Tensor, &Tensor)],
) -> Result<Option<Var>> {
    let Some(&(truth0, _)) = batch.first() else {
        return Ok(None);
    };
    let pv = tape.value(predictions);
    let total_nodes = pv.rows();
    let frames = truth0.rows();
    if total_nodes % batch.len() != 0 {
        return Err(Error::Shape {
            op: "layer_loss_on_tape_batch",
            left: pv.shape().to_vec(),
            right: vec![batch.len()],
        });
    }
    let nodes = total_nodes / batch.len();
    for (truth, weights) in batch {
        if truth.rows() != frames {
            return Err(Error::Shape {
                op: "layer_loss_on_tape_batch truth",
                left: truth.shape().to_vec(),
                right: truth0.shape().to_vec(),
            });
        }
        check_inputs(timescale, pv, truth, weights)?;
    }
    let probe = NodeErrorMatrix::new(layer, timescale, nodes, frames);
    let fits: Vec<bool> = (0..nodes).map(|i| probe.fits(i)).collect();
    if !fits.iter().any(|&f| f) {
        return Ok(None);
    }
    let mut coverage = vec![0usize; frames];
    for i in (0..nodes).filter(|&i| fits[i]) {
        for t in i + timescale..i + 2 * timescale {
            coverage[t] += 1;
        }
    }
    let per_seq = nodes * timescale;
    let rows = per_seq * batch.len();
    let mut gathered_truth = vec![0.0; rows * POSE_DIM];
    let mut gathered_w = vec![0.0; rows * NUM_JOINTS];
    let mut coeffs = vec![0.0; rows];
    for (b, (truth, weights)) in batch.iter().enumerate() {
        for i in (0..nodes).filter(|&i| fits[i]) {
            for s in 0..timescale {
                let t = i + timescale + s;
                let r = b * per_seq + i * timescale + s;
                gathered_truth[r * POSE_DIM..(r + 1) * POSE_DIM].copy_from_slice(truth.row(t));
                gathered_w[r * NUM_JOINTS..(r + 1) * NUM_JOINTS].copy_from_slice(weights.row(t));
                coeffs[r] = 1.0 + 1.0 / coverage[t] as f64;
            }
        }
    }
    let flat = tape.reshape(predictions, &[rows, POSE_DIM])?;
    let errs = tape.weighted_sq_error(
        flat,
        Tensor::new(vec![rows, POSE_DIM], gathered_truth)?,
        Tensor::new(vec![rows, NUM_JOINTS], gathered_w)?,
    )?;
    Ok(Some(tape.weighted_sum(errs, coeffs)?))
}
