//! Sub-epoch curriculum training.
//!
//! Every epoch runs one sub-epoch per supervised timescale, shallowest first.
//! Sub-epoch `s` cuts the trajectories into windows of `t_s` input and `t_s`
//! target frames and trains the model through the `s`-th supervised layer,
//! with the loss summed over supervised layers `1..=s`. Parameters below the
//! active depth are not touched. The past model is trained the same way on
//! time-reversed trajectories.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::layer_loss_on_tape_batch;
use crate::model::{Direction, ModelConfig, MtpModel};
use crate::seed::derive_seed;
use crate::nn::{Adam, AdamConfig, ParamGrads, Tape, Tensor};
use crate::trajectory::{pose_matrix, weight_matrix, windows, Dataset, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer update; the batch loss is the mean window loss.
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Window stride for each sub-epoch. `None` uses `2·t_k`
    /// (non-overlapping windows).
    pub strides: Option<Vec<usize>>,
    pub shuffle_seed: u64,
    /// Per-epoch multiplier of the learning rate: epoch `e` (1-based) uses
    /// `adam.lr · lr_decay^(e−1)`. 1 keeps it constant.
    pub lr_decay: f64,
    /// Sub-epochs per epoch, shallowest first. `None` runs one per
    /// supervised timescale.
    pub max_depth: Option<usize>,
    /// Divide coordinates by the frame size before training.
    pub normalize: bool,
    /// Worker threads for per-window gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            strides: None,
            shuffle_seed: 0,
            lr_decay: 1.0,
            max_depth: None,
            normalize: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.adam.validate()?;
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if let Some(d) = self.max_depth {
            if d == 0 || d > model.supervision.len() {
                return Err(Error::Config(format!(
                    "max_depth {d} outside 1..={}",
                    model.supervision.len()
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(strides) = &self.strides {
            if strides.len() != model.supervision.len() || strides.contains(&0) {
                return Err(Error::Config(format!(
                    "need one positive stride per timescale, got {strides:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn stride_for(&self, depth: usize, timescale: usize) -> usize {
        self.strides
            .as_ref()
            .map_or(2 * timescale, |s| s[depth - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubEpochRecord {
    pub epoch: usize,
    pub depth: usize,
    pub timescale: usize,
    pub mean_loss: f64,
    pub windows: usize,
    /// Kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub direction: Option<Direction>,
    pub subepochs: Vec<SubEpochRecord>,
    /// Loss of the last sub-epoch that ran in each epoch.
    pub epoch_losses: Vec<f64>,
    /// Timescales for which no window could be built.
    pub skipped_timescales: Vec<usize>,
    pub optimizer_steps: u64,
}

impl TrainReport {
    /// Mean losses of sub-epochs at `depth`, one per epoch.
    pub fn losses_at_depth(&self, depth: usize) -> Vec<f64> {
        self.subepochs
            .iter()
            .filter(|r| r.depth == depth)
            .map(|r| r.mean_loss)
            .collect()
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_reports_csv(&[self], out)
    }
}

/// Sub-epoch records of several reports under one header.
pub fn write_reports_csv(reports: &[&TrainReport], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "epoch", "depth", "timescale", "windows", "mean_loss"])?;
    for report in reports {
        let dir = report.direction.map_or("", Direction::as_str);
        for r in &report.subepochs {
            w.write_record([
                dir.to_string(),
                r.epoch.to_string(),
                r.depth.to_string(),
                r.timescale.to_string(),
                r.windows.to_string(),
                r.mean_loss.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Windows of `t_k` input and `t_k` target frames from every trajectory.
pub fn make_subepoch_windows(dataset: &Dataset, timescale: usize, stride: usize) -> Vec<Window> {
    dataset
        .trajectories
        .iter()
        .flat_map(|t| windows(t, timescale, timescale, stride))
        .collect()
}

/// Windows per tape when computing batch gradients. Fixed so that results
/// do not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

/// Loss `Σ_{j ≤ depth} 𝕃_j` of one window and its parameter gradients.
pub fn window_loss_and_grads(model: &MtpModel, window: &Window, depth: usize) -> Result<(f64, ParamGrads)> {
    chunk_loss_and_grads(model, &[window], depth)
}

/// Summed loss and gradients of equally long windows on a single tape.
///
/// The inputs are stacked in time and convolved as separate sequences.
pub fn chunk_loss_and_grads(model: &MtpModel, chunk: &[&Window], depth: usize) -> Result<(f64, ParamGrads)> {
    let cfg = model.config();
    let sup = &cfg.supervision[..depth];
    let deepest = sup.last().expect("depth >= 1");
    let t_in = chunk[0].input.len();
    let mut input = Vec::with_capacity(chunk.len() * t_in);
    let mut targets = Vec::with_capacity(chunk.len());
    for w in chunk {
        if w.input.len() != t_in || w.target.len() != chunk[0].target.len() {
            return Err(Error::Data("windows in one batch must have equal lengths".into()));
        }
        input.extend_from_slice(&w.input);
        let frames = w.frames();
        targets.push((pose_matrix(&frames), weight_matrix(&frames)));
    }
    let pairs: Vec<(&Tensor, &Tensor)> = targets.iter().map(|(t, w)| (t, w)).collect();

    let mut tape = Tape::new();
    let x = tape.constant(pose_matrix(&input));
    let fwd = model.forward_seqs(&mut tape, x, chunk.len(), Some(deepest.layer))?;
    let mut terms = Vec::with_capacity(sup.len());
    for out in &fwd.layers {
        let pred = model.decode(&mut tape, out.layer, out.activations)?;
        if let Some(l) = layer_loss_on_tape_batch(&mut tape, pred, out.layer, out.timescale, &pairs)? {
            terms.push(l);
        }
    }
    if terms.is_empty() {
        return Err(Error::Data(format!(
            "windows of {} frames produced no supervised predictions",
            t_in + chunk[0].target.len()
        )));
    }
    let loss = tape.add(&terms)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.into_param_grads();
    Ok((value, grads))
}

/// Bundles a model with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MtpModel,
    pub adam: Adam,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

impl Trainer {
    pub fn new(model: MtpModel, config: TrainConfig) -> Result<Self> {
        Self::resume(model, config, 0, 0)
    }

    /// Continues from a model whose optimizer has already taken
    /// `optimizer_steps` steps over `epochs_done` epochs.
    pub fn resume(model: MtpModel, config: TrainConfig, optimizer_steps: u64, epochs_done: usize) -> Result<Self> {
        config.validate(model.config())?;
        let mut adam = Adam::new(config.adam)?;
        adam.step_count = optimizer_steps;
        let pool = if config.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Some(std::sync::Arc::new(pool))
        } else {
            None
        };
        Ok(Self {
            model,
            adam,
            config,
            epochs_done,
            pool,
        })
    }

    fn batch_grads(&self, batch: &[&Window], depth: usize) -> Result<Vec<(f64, ParamGrads)>> {
        let model = &self.model;
        let chunks: Vec<&[&Window]> = batch.chunks(GRAD_CHUNK).collect();
        match &self.pool {
            None => chunks
                .iter()
                .map(|c| chunk_loss_and_grads(model, c, depth))
                .collect(),
            Some(pool) => pool.install(|| {
                chunks
                    .par_iter()
                    .map(|c| chunk_loss_and_grads(model, c, depth))
                    .collect()
            }),
        }
    }

    /// One pass over `windows` at `depth`; returns the mean window loss, or
    /// `None` if there were no windows.
    pub fn train_subepoch(&mut self, windows: &[Window], depth: usize, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let n_ts = self.model.config().supervision.len();
        if depth == 0 || depth > n_ts {
            return Err(Error::Config(format!("depth {depth} outside 1..={n_ts}")));
        }
        let ts = self.model.config().supervision[depth - 1].timescale;
        if let Some(w) = windows.iter().find(|w| w.input.len() != ts || w.target.len() != ts) {
            return Err(Error::Data(format!(
                "depth {depth} trains on {ts}+{ts} frame windows, got {}+{}",
                w.input.len(),
                w.target.len()
            )));
        }
        if windows.is_empty() {
            log::warn!("no windows for timescale {ts}; sub-epoch skipped");
            return Ok(None);
        }
        let mut order: Vec<&Window> = windows.iter().collect();
        order.shuffle(rng);
        let active = self.model.active_params(depth);
        let mut is_active = vec![false; self.model.params().len()];
        for id in &active {
            is_active[id.index()] = true;
        }

        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let results = self.batch_grads(batch, depth)?;
            let store = self.model.params_mut();
            for (loss, grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at depth {depth} after {} optimizer steps",
                        self.adam.step_count
                    )));
                }
                total += loss;
                store.accumulate(grads.iter());
            }
            let inv = 1.0 / batch.len() as f64;
            for id in &active {
                store.get_mut(*id).grad.scale(inv);
            }
            self.adam.step_where(store, |id| is_active[id.index()]);
        }
        Ok(Some(total / windows.len() as f64))
    }

    /// Runs `epochs` more epochs of the curriculum over `dataset` (already
    /// normalized and, for the past model, reversed). `after_epoch` is called
    /// with the trainer and the report so far after every epoch.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        epochs: usize,
        report: &mut TrainReport,
        mut after_epoch: impl FnMut(&Trainer, &TrainReport) -> Result<()>,
    ) -> Result<()> {
        let mut sup = self.model.config().supervision.clone();
        sup.truncate(self.config.max_depth.unwrap_or(sup.len()));
        let per_depth: Vec<Vec<Window>> = sup
            .iter()
            .enumerate()
            .map(|(i, s)| make_subepoch_windows(dataset, s.timescale, self.config.stride_for(i + 1, s.timescale)))
            .collect();
        if per_depth[0].is_empty() {
            return Err(Error::Data(format!(
                "no trajectory is long enough for timescale {} ({} frames needed)",
                sup[0].timescale,
                2 * sup[0].timescale
            )));
        }
        report.skipped_timescales = sup
            .iter()
            .zip(&per_depth)
            .filter(|(_, w)| w.is_empty())
            .map(|(s, _)| s.timescale)
            .collect();
        report.direction = Some(self.model.direction);

        for _ in 0..epochs {
            let epoch = self.epochs_done + 1;
            self.adam.config.lr = self.config.adam.lr * self.config.lr_decay.powi(epoch as i32 - 1);
            let mut last = None;
            for (i, wins) in per_depth.iter().enumerate() {
                let depth = i + 1;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    self.config.shuffle_seed,
                    self.model.direction,
                    epoch,
                    depth,
                ));
                let start = Instant::now();
                let Some(loss) = self.train_subepoch(wins, depth, &mut rng)? else {
                    continue;
                };
                let rec = SubEpochRecord {
                    epoch,
                    depth,
                    timescale: sup[i].timescale,
                    mean_loss: loss,
                    windows: wins.len(),
                    wall_secs: start.elapsed().as_secs_f64(),
                };
                log::info!(
                    "{} epoch {epoch} t={} loss={:.6e} windows={} ({:.2}s)",
                    self.model.direction,
                    rec.timescale,
                    rec.mean_loss,
                    rec.windows,
                    rec.wall_secs
                );
                report.subepochs.push(rec);
                last = Some(loss);
            }
            report.epoch_losses.push(last.unwrap_or(f64::NAN));
            self.epochs_done = epoch;
            report.optimizer_steps = self.adam.step_count;
            after_epoch(self, report)?;
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, direction: Direction, epoch: usize, depth: usize) -> u64 {
    derive_seed(&[seed, direction as u64, epoch as u64, depth as u64])
}

/// Prepares `dataset` for a model of the given direction: optional
/// normalization, then time reversal for the past model.
pub fn prepare_dataset(dataset: &Dataset, direction: Direction, normalize: bool) -> Result<Dataset> {
    let base = if normalize {
        dataset.normalized()?
    } else {
        dataset.clone()
    };
    Ok(match direction {
        Direction::Future => base,
        Direction::Past => Dataset {
            trajectories: base.trajectories.iter().map(|t| t.reversed()).collect(),
            labels: base.labels,
        },
    })
}

/// Trains a fresh model of `direction` for `train.epochs` epochs.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train: &TrainConfig,
    direction: Direction,
) -> Result<(MtpModel, TrainReport)> {
    let data = prepare_dataset(dataset, direction, train.normalize)?;
    let model = MtpModel::new(model_config.clone(), direction)?;
    let mut trainer = Trainer::new(model, train.clone())?;
    let mut report = TrainReport::default();
    trainer.fit(&data, train.epochs, &mut report, |_, _| Ok(()))?;
    Ok((trainer.model, report))
}

/// Mean per-joint Euclidean distance between predicted and true poses
/// (`[n, 50]` each).
pub fn mean_joint_distance(pred: &Tensor, truth: &Tensor) -> f64 {
    let d: f64 = pred
        .data()
        .chunks_exact(2)
        .zip(truth.data().chunks_exact(2))
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
        .sum();
    d / (pred.len() / 2) as f64
}
