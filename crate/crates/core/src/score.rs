//! Test-time anomaly scoring.
//!
//! For every person and every (direction, timescale) pair, each frame gets
//! the mean prediction error of all windows that predict it. A frame's score
//! is the mean over the pairs covering it; with several people in a video
//! the maximum over people is taken per pair before averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{layer_series, node_errors, LayerErrorSeries};
use crate::model::{Direction, MtpModel};
use crate::nn::tape::weighted_sq_error_rows;
use crate::trajectory::{pose_matrix, weight_matrix, windows, Dataset, PoseTrajectory, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Timescales to use; empty means every supervised timescale.
    pub timescales: Vec<usize>,
    pub directions: Vec<Direction>,
    /// Offset between consecutive test windows.
    pub stride: usize,
    /// Frames scoring above this are flagged. `None` flags nothing.
    pub threshold: Option<f64>,
    /// Score assumed for labeled frames in which nobody is scored.
    pub no_person_score: f64,
    pub normalize: bool,
    pub threads: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            timescales: Vec::new(),
            directions: Direction::BOTH.to_vec(),
            stride: 1,
            threshold: None,
            no_person_score: 0.0,
            normalize: true,
            threads: 1,
        }
    }
}

impl ScoreOptions {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("score stride must be positive".into()));
        }
        if self.directions.is_empty() {
            return Err(Error::Config("at least one direction is required".into()));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("threshold must be non-negative, got {t}")));
            }
        }
        if !self.no_person_score.is_finite() {
            return Err(Error::Config("no_person_score must be finite".into()));
        }
        Ok(())
    }
}

/// One (direction, timescale) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub direction: Direction,
    pub timescale: usize,
}

/// Per-frame errors of one person for every scored (direction, timescale).
#[derive(Debug, Clone, PartialEq)]
pub struct PersonErrors {
    pub video_id: String,
    pub track_id: String,
    pub first_frame: i64,
    pub frames: usize,
    pub series: BTreeMap<SeriesKey, LayerErrorSeries>,
}

impl PersonErrors {
    pub fn contains(&self, frame: i64) -> bool {
        frame >= self.first_frame && frame < self.first_frame + self.frames as i64
    }

    /// Error of `key` at video frame `frame`, if predicted.
    pub fn get(&self, key: SeriesKey, frame: i64) -> Option<f64> {
        if !self.contains(frame) {
            return None;
        }
        self.series.get(&key)?.get((frame - self.first_frame) as usize)
    }

    /// Keys with a defined value at `frame`.
    pub fn coverage_set(&self, frame: i64) -> Vec<SeriesKey> {
        self.series
            .keys()
            .copied()
            .filter(|&k| self.get(k, frame).is_some())
            .collect()
    }
}

/// A fused frame score and the pairs it was averaged over.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub score: f64,
    pub keys: Vec<SeriesKey>,
}

/// Per-frame error series of `model` at a set of supervised layers, from a
/// single pass over the whole trajectory.
///
/// `traj` must already be normalized. Past-direction models see the
/// reversed trajectory and their series are mapped back to forward time.
/// Layers whose windows (`2·t_k` frames) do not fit give empty series.
pub fn timescale_errors_many(
    model: &MtpModel,
    traj: &PoseTrajectory,
    layers: &[usize],
    stride: usize,
) -> Result<Vec<LayerErrorSeries>> {
    let cfg = model.config();
    let work = match model.direction {
        Direction::Future => traj.clone(),
        Direction::Past => traj.reversed(),
    };
    let n = work.len();
    let ts: Vec<usize> = layers
        .iter()
        .map(|&l| {
            cfg.timescale_of(l)
                .ok_or_else(|| Error::Config(format!("layer {l} is not supervised")))
        })
        .collect::<Result<_>>()?;
    let feasible: Vec<usize> = layers
        .iter()
        .zip(&ts)
        .filter(|(_, &t)| n >= 2 * t)
        .map(|(&l, _)| l)
        .collect();
    let mut preds = BTreeMap::new();
    if !feasible.is_empty() {
        let poses = work.poses();
        preds.extend(model.predict_nodes(&poses, &feasible)?);
    }
    let (truth, weights) = (work.poses(), work.weights());
    layers
        .iter()
        .zip(&ts)
        .map(|(&l, &t)| {
            let Some(p) = preds.get(&l) else {
                return Ok(LayerErrorSeries::empty(l, t, n));
            };
            let mut m = node_errors(l, t, p, &truth, &weights)?;
            if stride > 1 {
                m.retain_nodes(|i| i % stride == 0);
            }
            let s = layer_series(&m);
            Ok(match model.direction {
                Direction::Future => s,
                Direction::Past => s.reversed(),
            })
        })
        .collect()
}

/// Per-frame error series of one supervised layer.
pub fn timescale_errors(model: &MtpModel, traj: &PoseTrajectory, layer: usize, stride: usize) -> Result<LayerErrorSeries> {
    Ok(timescale_errors_many(model, traj, &[layer], stride)?.remove(0))
}

/// Same result as [`timescale_errors`], computed one window at a time with
/// [`MtpModel::predict_window`]. Much slower; kept as a reference.
pub fn sliding_timescale_errors(
    model: &MtpModel,
    traj: &PoseTrajectory,
    layer: usize,
    stride: usize,
) -> Result<LayerErrorSeries> {
    let t_k = model
        .config()
        .timescale_of(layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} is not supervised")))?;
    let work = match model.direction {
        Direction::Future => traj.clone(),
        Direction::Past => traj.reversed(),
    };
    let n = work.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for w in windows(&work, t_k, t_k, stride.max(1)) {
        let pred = model.predict_window(&pose_matrix(&w.input), layer)?;
        let errs = weighted_sq_error_rows(
            pred.data(),
            pose_matrix(&w.target).data(),
            weight_matrix(&w.target).data(),
            NUM_JOINTS,
        );
        for (s, e) in errs.into_iter().enumerate() {
            let t = w.offset + t_k + s;
            sum[t] += e;
            count[t] += 1;
        }
    }
    let series = LayerErrorSeries {
        layer,
        timescale: t_k,
        values: sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        coverage: count,
    };
    Ok(match model.direction {
        Direction::Future => series,
        Direction::Past => series.reversed(),
    })
}

fn selected_layers(model: &MtpModel, opts: &ScoreOptions) -> Result<Vec<usize>> {
    let cfg = model.config();
    if opts.timescales.is_empty() {
        return Ok(cfg.supervision.iter().map(|s| s.layer).collect());
    }
    opts.timescales
        .iter()
        .map(|&t| {
            cfg.layer_of(t)
                .ok_or_else(|| Error::Config(format!("timescale {t} is not supervised by the model")))
        })
        .collect()
}

/// Errors of one person under every selected model and timescale.
/// `traj` must already be normalized if the models were trained that way.
pub fn person_errors(models: &[&MtpModel], traj: &PoseTrajectory, opts: &ScoreOptions) -> Result<PersonErrors> {
    let mut series = BTreeMap::new();
    for model in models.iter().filter(|m| opts.directions.contains(&m.direction)) {
        let layers = selected_layers(model, opts)?;
        for s in timescale_errors_many(model, traj, &layers, opts.stride)? {
            let key = SeriesKey {
                direction: model.direction,
                timescale: s.timescale,
            };
            series.insert(key, s);
        }
    }
    Ok(PersonErrors {
        video_id: traj.video_id.clone(),
        track_id: traj.track_id.clone(),
        first_frame: traj.first_frame(),
        frames: traj.len(),
        series,
    })
}

/// Mean over the (direction, timescale) pairs covering `frame` of one
/// person's errors.
pub fn combine(person: &PersonErrors, frame: i64) -> Option<Fused> {
    fuse_persons(&[person], frame)
}

/// Scene score at `frame`: for each pair, the maximum over the people it
/// covers; then the mean over pairs covering anyone.
pub fn fuse_persons(persons: &[&PersonErrors], frame: i64) -> Option<Fused> {
    let mut best: BTreeMap<SeriesKey, f64> = BTreeMap::new();
    for p in persons.iter().filter(|p| p.contains(frame)) {
        for &key in p.series.keys() {
            if let Some(e) = p.get(key, frame) {
                let slot = best.entry(key).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(e);
            }
        }
    }
    if best.is_empty() {
        return None;
    }
    let score = best.values().sum::<f64>() / best.len() as f64;
    Some(Fused {
        score,
        keys: best.into_keys().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub video_id: String,
    pub frame: i64,
    pub score: f64,
    pub coverage: usize,
    pub flag: bool,
}

/// Scored frames in `(video_id, frame)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSeries {
    pub frames: Vec<FrameScore>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.score).collect()
    }

    pub fn lookup(&self) -> BTreeMap<(String, i64), f64> {
        self.frames
            .iter()
            .map(|f| ((f.video_id.clone(), f.frame), f.score))
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["video_id", "frame", "score", "coverage", "flag"])?;
        for f in &self.frames {
            w.write_record([
                f.video_id.clone(),
                f.frame.to_string(),
                f.score.to_string(),
                f.coverage.to_string(),
                u8::from(f.flag).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            video_id: String,
            frame: i64,
            score: f64,
            coverage: usize,
            flag: u8,
        }
        let mut r = csv::Reader::from_reader(input);
        let mut frames = Vec::new();
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            if !row.score.is_finite() || row.flag > 1 {
                return Err(Error::Schema {
                    line: i + 2,
                    message: "score must be finite and flag 0 or 1".into(),
                });
            }
            frames.push(FrameScore {
                video_id: row.video_id,
                frame: row.frame,
                score: row.score,
                coverage: row.coverage,
                flag: row.flag == 1,
            });
        }
        Ok(Self { frames })
    }
}

/// `score > threshold` for every frame.
pub fn apply_threshold(scores: &mut ScoreSeries, threshold: f64) -> Vec<bool> {
    for f in &mut scores.frames {
        f.flag = f.score > threshold;
    }
    scores.frames.iter().map(|f| f.flag).collect()
}

/// Nearest-rank `q`-quantile of `scores`, for calibrating a threshold on
/// normal data.
pub fn percentile_threshold(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!(
            "percentile needs scores and q in [0, 1], got {} scores and q = {q}",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutput {
    pub scores: ScoreSeries,
    pub persons: Vec<PersonErrors>,
    /// Frames with a person present but no prediction covering them.
    pub uncovered_frames: usize,
}

impl ScoreOutput {
    /// `video_id,frame,track_id,direction,timescale,error` for every defined
    /// per-person error.
    pub fn write_timescale_csv(&self, out: impl Write) -> Result<()> {
        write_timescale_csv(&self.persons, out)
    }
}

pub fn write_timescale_csv(persons: &[PersonErrors], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "frame", "track_id", "direction", "timescale", "error"])?;
    for p in persons {
        for (key, s) in &p.series {
            for (t, v) in s.values.iter().enumerate() {
                if let Some(e) = v {
                    w.write_record([
                        p.video_id.clone(),
                        (p.first_frame + t as i64).to_string(),
                        p.track_id.clone(),
                        key.direction.to_string(),
                        key.timescale.to_string(),
                        e.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Scores every frame in which at least one person is present.
pub fn score_dataset(models: &[&MtpModel], dataset: &Dataset, opts: &ScoreOptions) -> Result<ScoreOutput> {
    opts.validate()?;
    for d in &opts.directions {
        if !models.iter().any(|m| m.direction == *d) {
            return Err(Error::Config(format!("no {d} model supplied")));
        }
    }
    let data = if opts.normalize {
        dataset.normalized()?
    } else {
        dataset.clone()
    };
    let run = || -> Result<Vec<PersonErrors>> {
        data.trajectories
            .par_iter()
            .map(|t| person_errors(models, t, opts))
            .collect()
    };
    let persons = if opts.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        data.trajectories
            .iter()
            .map(|t| person_errors(models, t, opts))
            .collect::<Result<_>>()?
    };

    let mut by_video: BTreeMap<&str, Vec<&PersonErrors>> = BTreeMap::new();
    for p in &persons {
        by_video.entry(&p.video_id).or_default().push(p);
    }
    let mut frames = Vec::new();
    let mut uncovered = 0;
    for (video, people) in &by_video {
        let present: BTreeSet<i64> = people
            .iter()
            .flat_map(|p| p.first_frame..p.first_frame + p.frames as i64)
            .collect();
        for &frame in &present {
            match fuse_persons(people, frame) {
                Some(f) => frames.push(FrameScore {
                    video_id: video.to_string(),
                    frame,
                    score: f.score,
                    coverage: f.keys.len(),
                    flag: opts.threshold.is_some_and(|th| f.score > th),
                }),
                None => uncovered += 1,
            }
        }
    }
    Ok(ScoreOutput {
        scores: ScoreSeries { frames },
        persons,
        uncovered_frames: uncovered,
    })
}

/// Mean per-frame error inside and outside a frame mask, for one series.
pub fn masked_mean(series: &LayerErrorSeries, mask: impl Fn(usize) -> bool) -> Option<f64> {
    let vals: Vec<f64> = series
        .values
        .iter()
        .enumerate()
        .filter(|(t, _)| mask(*t))
        .filter_map(|(_, v)| *v)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
