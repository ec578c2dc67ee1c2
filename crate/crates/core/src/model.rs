//! Multi-timescale trajectory predictor.
//!
//! Each frame is encoded independently by a two-layer MLP, the encodings are
//! stacked into a time series and filtered by a stack of valid 1D
//! convolutions. Node `i` of conv layer `j` sees input frames
//! `[i, i + RF_j − 1]`. Selected layers are *supervised*: their receptive
//! field equals a timescale `t_k`, and a per-timescale decoder maps every node
//! to the `t_k` poses that follow its input span.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::trajectory::POSE_DIM;

/// Prediction direction. The past model sees time-reversed sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Future,
    Past,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Future, Direction::Past];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Future => "future",
            Direction::Past => "past",
        }
    }

    fn seed_salt(self) -> u64 {
        match self {
            Direction::Future => 0,
            Direction::Past => 0x9e37_79b9_7f4a_7c15,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "future" => Ok(Direction::Future),
            "past" => Ok(Direction::Past),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// A conv layer (1-based) that is trained to predict `timescale` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supervision {
    pub layer: usize,
    pub timescale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder width and channel count of every conv layer.
    pub width: usize,
    pub kernel_sizes: Vec<usize>,
    pub supervision: Vec<Supervision>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            kernel_sizes: vec![3, 3, 5, 5, 5, 5, 5],
            supervision: vec![
                Supervision { layer: 1, timescale: 3 },
                Supervision { layer: 2, timescale: 5 },
                Supervision { layer: 4, timescale: 13 },
                Supervision { layer: 7, timescale: 25 },
            ],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Default architecture at a reduced width.
    pub fn with_width(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn num_layers(&self) -> usize {
        self.kernel_sizes.len()
    }

    /// `RF_j = 1 + Σ_{m ≤ j} (k_m − 1)` for 1-based `layer`.
    pub fn receptive_field(&self, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.num_layers() {
            return Err(Error::Config(format!(
                "layer {layer} outside 1..={}",
                self.num_layers()
            )));
        }
        Ok(1 + self.kernel_sizes[..layer].iter().map(|k| k - 1).sum::<usize>())
    }

    pub fn receptive_fields(&self) -> Vec<usize> {
        (1..=self.num_layers())
            .map(|j| self.receptive_field(j).expect("in range"))
            .collect()
    }

    pub fn timescales(&self) -> Vec<usize> {
        self.supervision.iter().map(|s| s.timescale).collect()
    }

    pub fn timescale_of(&self, layer: usize) -> Option<usize> {
        self.supervision
            .iter()
            .find(|s| s.layer == layer)
            .map(|s| s.timescale)
    }

    pub fn layer_of(&self, timescale: usize) -> Option<usize> {
        self.supervision
            .iter()
            .find(|s| s.timescale == timescale)
            .map(|s| s.layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "kernel sizes must be non-empty and positive, got {:?}",
                self.kernel_sizes
            )));
        }
        if self.supervision.is_empty() {
            return Err(Error::Config("at least one supervised layer required".into()));
        }
        for pair in self.supervision.windows(2) {
            if pair[1].layer <= pair[0].layer || pair[1].timescale <= pair[0].timescale {
                return Err(Error::Config(
                    "supervised layers and timescales must be strictly increasing".into(),
                ));
            }
        }
        for s in &self.supervision {
            let rf = self.receptive_field(s.layer)?;
            if rf != s.timescale {
                return Err(Error::Config(format!(
                    "layer {} has receptive field {rf} but is mapped to timescale {}",
                    s.layer, s.timescale
                )));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters:
    /// encoder `50D + D + D² + D`, conv layer `j` `k_j D² + D`,
    /// decoder for `t_k` `D² + D + 50 t_k D + 50 t_k`.
    pub fn param_count(&self) -> usize {
        let d = self.width;
        let encoder = POSE_DIM * d + d + d * d + d;
        let conv: usize = self.kernel_sizes.iter().map(|k| k * d * d + d).sum();
        let decoders: usize = self
            .supervision
            .iter()
            .map(|s| {
                let out = s.timescale * POSE_DIM;
                d * d + d + d * out + out
            })
            .sum();
        encoder + conv + decoders
    }
}

/// Input and prediction spans of one node, as 0-based frame indices into the
/// sequence fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSpan {
    pub layer: usize,
    pub node: usize,
    pub timescale: usize,
    pub input_start: usize,
    pub input_end: usize,
    pub pred_start: usize,
    pub pred_end: usize,
}

impl NodeSpan {
    /// Spans of `node` at a supervised layer whose receptive field is
    /// `timescale`.
    pub fn new(layer: usize, node: usize, timescale: usize) -> Self {
        Self {
            layer,
            node,
            timescale,
            input_start: node,
            input_end: node + timescale - 1,
            pred_start: node + timescale,
            pred_end: node + 2 * timescale - 1,
        }
    }

    pub fn predicts(&self, t: usize) -> bool {
        (self.pred_start..=self.pred_end).contains(&t)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Decoder {
    layer: usize,
    timescale: usize,
    hidden: Dense,
    out: Dense,
}

/// Output of a supervised layer for one input sequence.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub layer: usize,
    pub timescale: usize,
    /// `[nodes, D]` activations.
    pub activations: Var,
    pub nodes: usize,
}

/// Supervised-layer outputs; layers whose receptive field exceeds the input
/// length are absent.
#[derive(Debug, Clone, Default)]
pub struct ForwardOutput {
    pub layers: Vec<LayerOutput>,
    pub absent: Vec<usize>,
}

impl ForwardOutput {
    pub fn layer(&self, layer: usize) -> Option<&LayerOutput> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    direction: Direction,
    config: ModelConfig,
}

#[derive(Debug, Clone)]
pub struct MtpModel {
    pub direction: Direction,
    config: ModelConfig,
    params: ParamStore,
    encoder: [Dense; 2],
    conv: Vec<Dense>,
    decoders: Vec<Decoder>,
}

impl PartialEq for MtpModel {
    fn eq(&self, other: &Self) -> bool {
        self.direction == other.direction
            && self.config == other.config
            && self.params == other.params
    }
}

impl MtpModel {
    /// Builds a model with seeded fan-in-scaled uniform weights
    /// (`U(±√(6 / fan_in))`) and zero biases.
    pub fn new(config: ModelConfig, direction: Direction) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ direction.seed_salt());
        let mut store = ParamStore::new();
        let encoder = [
            init_dense(&mut store, &mut rng, "enc.fc1", POSE_DIM, d)?,
            init_dense(&mut store, &mut rng, "enc.fc2", d, d)?,
        ];
        let mut conv = Vec::with_capacity(config.num_layers());
        for (j, &k) in config.kernel_sizes.iter().enumerate() {
            let bound = (INIT_GAIN / (k * d) as f64).sqrt();
            let name = format!("conv.{}", j + 1);
            conv.push(Dense {
                w: store.insert_uniform(&format!("{name}.k"), &[k, d, d], bound, &mut rng)?,
                b: store.insert_zeros(&format!("{name}.b"), &[d])?,
            });
        }
        let mut decoders = Vec::with_capacity(config.supervision.len());
        for s in &config.supervision {
            let name = format!("dec.{}", s.timescale);
            decoders.push(Decoder {
                layer: s.layer,
                timescale: s.timescale,
                hidden: init_dense(&mut store, &mut rng, &format!("{name}.fc1"), d, d)?,
                out: init_dense(
                    &mut store,
                    &mut rng,
                    &format!("{name}.fc2"),
                    d,
                    s.timescale * POSE_DIM,
                )?,
            });
        }
        Ok(Self {
            direction,
            config,
            params: store,
            encoder,
            conv,
            decoders,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn dense<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        layer: Dense,
        relu: bool,
    ) -> Result<Var> {
        let w = tape.param(&self.params, layer.w);
        let b = tape.param(&self.params, layer.b);
        let y = tape.linear(x, w, b)?;
        Ok(if relu { tape.relu(y) } else { y })
    }

    /// Frame-local encoding `[T, 50] → [T, D]`.
    pub fn encode<'a>(&'a self, tape: &mut Tape<'a>, poses: Var) -> Result<Var> {
        let shape = tape.value(poses).shape();
        if shape.len() != 2 || shape[1] != POSE_DIM {
            return Err(Error::Shape {
                op: "encode",
                left: shape.to_vec(),
                right: vec![POSE_DIM],
            });
        }
        let h = self.dense(tape, poses, self.encoder[0], true)?;
        self.dense(tape, h, self.encoder[1], true)
    }

    /// Runs the encoder and conv layers `1..=max_layer` (all layers when
    /// `None`) and returns the activations of every supervised layer that
    /// fits in the input.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        poses: Var,
        max_layer: Option<usize>,
    ) -> Result<ForwardOutput> {
        self.forward_seqs(tape, poses, 1, max_layer)
    }

    /// Forward pass over `seqs` equally long sequences stacked along the
    /// time axis. Each layer output holds `seqs · nodes` rows, sequence by
    /// sequence; positions never mix across sequences.
    pub fn forward_seqs<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        poses: Var,
        seqs: usize,
        max_layer: Option<usize>,
    ) -> Result<ForwardOutput> {
        let rows = tape.value(poses).rows();
        if seqs == 0 || rows % seqs != 0 {
            return Err(Error::Data(format!("{rows} frames do not split into {seqs} equal sequences")));
        }
        let t = rows / seqs;
        let first = self.config.receptive_field(1)?;
        if t < first {
            return Err(Error::Data(format!(
                "sequence of length {t} is shorter than the first receptive field {first}"
            )));
        }
        let max_layer = max_layer
            .unwrap_or(self.config.num_layers())
            .min(self.config.num_layers());
        let mut out = ForwardOutput::default();
        let mut h = self.encode(tape, poses)?;
        for layer in 1..=max_layer {
            let rf = self.config.receptive_field(layer)?;
            if rf > t {
                out.absent.extend(
                    self.config
                        .supervision
                        .iter()
                        .filter(|s| s.layer >= layer && s.layer <= max_layer)
                        .map(|s| s.layer),
                );
                break;
            }
            let c = self.conv[layer - 1];
            let k = tape.param(&self.params, c.w);
            let b = tape.param(&self.params, c.b);
            let y = tape.conv1d_valid_seqs(h, k, b, seqs)?;
            h = tape.relu(y);
            if let Some(ts) = self.config.timescale_of(layer) {
                out.layers.push(LayerOutput {
                    layer,
                    timescale: ts,
                    activations: h,
                    nodes: t - rf + 1,
                });
            }
        }
        Ok(out)
    }

    fn decoder(&self, layer: usize) -> Result<Decoder> {
        self.decoders
            .iter()
            .find(|d| d.layer == layer)
            .copied()
            .ok_or_else(|| Error::Config(format!("layer {layer} is not supervised")))
    }

    /// Decodes `[nodes, D]` activations of a supervised layer into
    /// `[nodes, t_k · 50]` predictions.
    pub fn decode<'a>(&'a self, tape: &mut Tape<'a>, layer: usize, activations: Var) -> Result<Var> {
        let dec = self.decoder(layer)?;
        let h = self.dense(tape, activations, dec.hidden, true)?;
        self.dense(tape, h, dec.out, false)
    }

    /// Decodes one node activation of length `D` into `[t_k, 50]` poses.
    pub fn decode_activation(&self, layer: usize, activation: &[f64]) -> Result<Tensor> {
        let dec = self.decoder(layer)?;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, activation.len()], activation.to_vec())?);
        let y = self.decode(&mut tape, layer, x)?;
        tape.value(y).clone().reshape(&[dec.timescale, POSE_DIM])
    }

    /// Predicts the `t_k` poses following an input of exactly `RF_j` frames.
    pub fn predict_window(&self, input: &Tensor, layer: usize) -> Result<Tensor> {
        let dec = self.decoder(layer)?;
        let rf = self.config.receptive_field(layer)?;
        if input.rows() != rf {
            return Err(Error::Data(format!(
                "layer {layer} needs exactly {rf} input frames, got {}",
                input.rows()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = self.forward(&mut tape, x, Some(layer))?;
        let out = fwd.layer(layer).expect("layer fits by construction");
        let y = self.decode(&mut tape, layer, out.activations)?;
        tape.value(y).clone().reshape(&[dec.timescale, POSE_DIM])
    }

    /// Predictions of every node at each requested supervised layer, as
    /// `[nodes, t_k · 50]` tensors. Layers that do not fit are omitted.
    pub fn predict_nodes(&self, poses: &Tensor, layers: &[usize]) -> Result<Vec<(usize, Tensor)>> {
        let Some(&max_layer) = layers.iter().max() else {
            return Ok(Vec::new());
        };
        let mut tape = Tape::new();
        let x = tape.constant(poses.clone());
        let fwd = self.forward(&mut tape, x, Some(max_layer))?;
        let mut out = Vec::new();
        for lo in fwd.layers.iter().filter(|l| layers.contains(&l.layer)) {
            let y = self.decode(&mut tape, lo.layer, lo.activations)?;
            out.push((lo.layer, tape.value(y).clone()));
        }
        Ok(out)
    }

    /// Parameters that receive gradient when training through the first
    /// `depth` supervised layers: encoder, conv layers up to the deepest
    /// active supervised layer, and the active decoders.
    pub fn active_params(&self, depth: usize) -> Vec<ParamId> {
        let active = &self.decoders[..depth.min(self.decoders.len())];
        let deepest = active.last().map_or(0, |d| d.layer);
        let mut ids = Vec::new();
        for e in &self.encoder {
            ids.extend([e.w, e.b]);
        }
        for c in &self.conv[..deepest] {
            ids.extend([c.w, c.b]);
        }
        for d in active {
            ids.extend([d.hidden.w, d.hidden.b, d.out.w, d.out.b]);
        }
        ids
    }

    pub fn to_checkpoint(&self, optimizer_steps: u64) -> Checkpoint {
        let header = CheckpointHeader {
            direction: self.direction,
            config: self.config.clone(),
        };
        Checkpoint::from_store(
            &self.params,
            serde_json::to_value(header).expect("serializable header"),
            optimizer_steps,
        )
    }

    /// Rebuilds a model from a checkpoint; returns it with the stored
    /// optimizer step count.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, u64)> {
        let header: CheckpointHeader = serde_json::from_value(ckpt.model.clone())
            .map_err(|e| Error::ModelMismatch(format!("checkpoint header: {e}")))?;
        let mut model = Self::new(header.config, header.direction)?;
        ckpt.restore_into(&mut model.params)?;
        Ok((model, ckpt.optimizer_steps))
    }

    /// Writes the checkpoint to `path` and the model config to
    /// `<path>.config.json`.
    pub fn save(&self, path: &Path, optimizer_steps: u64) -> Result<()> {
        self.to_checkpoint(optimizer_steps).save(path)?;
        let sidecar = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Uniform bound is `sqrt(INIT_GAIN / fan_in)`: unit-variance activations per fan-in.
const INIT_GAIN: f64 = 3.0;

fn init_dense(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<Dense> {
    let bound = (INIT_GAIN / fan_in as f64).sqrt();
    Ok(Dense {
        w: store.insert_uniform(&format!("{name}.w"), &[fan_in, fan_out], bound, rng)?,
        b: store.insert_zeros(&format!("{name}.b"), &[fan_out])?,
    })
}

pub fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    checkpoint.with_file_name(name)
}
