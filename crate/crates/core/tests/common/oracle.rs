//! Brute-force reference implementations. Everything here is written from
//! the definitions, one window or one pair at a time, without the library's
//! batched paths.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mtp_anomaly::model::{Direction, MtpModel};
use mtp_anomaly::trajectory::{pose_matrix, PoseFrame, PoseTrajectory, NUM_JOINTS};

/// `e(t, i)` for every node `i` of `layer` and every frame `t` it predicts,
/// in the model's own time axis.
pub type Errors = BTreeMap<(usize, usize), f64>;

fn frame_error(pred: &[f64], truth: &PoseFrame) -> f64 {
    let total: f64 = truth.keypoints.iter().map(|k| k.c).sum();
    truth
        .keypoints
        .iter()
        .enumerate()
        .map(|(k, kp)| {
            let w = if total > 0.0 { kp.c / total } else { 1.0 / NUM_JOINTS as f64 };
            w * ((pred[2 * k] - kp.x).powi(2) + (pred[2 * k + 1] - kp.y).powi(2))
        })
        .sum()
}

/// Model's view of `traj`: reversed for the past model.
pub fn work(model: &MtpModel, traj: &PoseTrajectory) -> Vec<PoseFrame> {
    match model.direction {
        Direction::Future => traj.frames.clone(),
        Direction::Past => traj.frames.iter().rev().cloned().collect(),
    }
}

/// Enumerates every node whose input and prediction spans fit, running the
/// model on that node's input frames alone.
pub fn node_errors(model: &MtpModel, frames: &[PoseFrame], layer: usize) -> Errors {
    let tk = model.config().timescale_of(layer).unwrap();
    let mut out = Errors::new();
    if frames.len() < 2 * tk {
        return out;
    }
    for i in 0..=frames.len() - 2 * tk {
        let pred = model.predict_window(&pose_matrix(&frames[i..i + tk]), layer).unwrap();
        for s in 0..tk {
            let t = i + tk + s;
            out.insert((t, i), frame_error(pred.row(s), &frames[t]));
        }
    }
    out
}

/// Mean over covering nodes, per frame.
pub fn layer_loss_at(errors: &Errors, t: usize) -> Option<f64> {
    let v: Vec<f64> = errors.iter().filter(|((tt, _), _)| *tt == t).map(|(_, e)| *e).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sum of node losses plus sum of per-frame layer losses.
pub fn layer_total(errors: &Errors, frames: usize) -> f64 {
    let nodes: f64 = errors.values().sum();
    let per_frame: f64 = (0..frames).filter_map(|t| layer_loss_at(errors, t)).sum();
    nodes + per_frame
}

/// Per-frame layer loss in forward (video) time.
pub fn forward_series(model: &MtpModel, traj: &PoseTrajectory, layer: usize) -> Vec<Option<f64>> {
    let frames = work(model, traj);
    let errors = node_errors(model, &frames, layer);
    let n = frames.len();
    (0..n)
        .map(|t| {
            let own = match model.direction {
                Direction::Future => t,
                Direction::Past => n - 1 - t,
            };
            layer_loss_at(&errors, own)
        })
        .collect()
}

/// Scene score of `frame` by direct enumeration: for every (direction,
/// timescale) pair the maximum over the people it covers at `frame`, then
/// the mean over pairs covering anyone.
pub fn scene_score(models: &[&MtpModel], people: &[&PoseTrajectory], frame: i64) -> Option<(f64, usize)> {
    let mut pair_max: Vec<f64> = Vec::new();
    for m in models {
        for s in &m.config().supervision {
            let mut best: Option<f64> = None;
            for p in people {
                let first = p.frames[0].frame_index;
                if frame < first || frame >= first + p.len() as i64 {
                    continue;
                }
                let series = forward_series(m, p, s.layer);
                if let Some(e) = series[(frame - first) as usize] {
                    best = Some(best.map_or(e, |b: f64| b.max(e)));
                }
            }
            pair_max.extend(best);
        }
    }
    (!pair_max.is_empty()).then(|| (pair_max.iter().sum::<f64>() / pair_max.len() as f64, pair_max.len()))
}

/// Number of (direction, timescale) pairs with a node predicting frame `t`
/// of a `len`-frame trajectory.
pub fn coverage_count(timescales: &[usize], len: usize, t: usize) -> usize {
    let mut n = 0;
    for &tk in timescales {
        if len < 2 * tk {
            continue;
        }
        for direction in Direction::BOTH {
            let own = match direction {
                Direction::Future => t,
                Direction::Past => len - 1 - t,
            };
            if (0..=len - 2 * tk).any(|i| own >= i + tk && own < i + 2 * tk) {
                n += 1;
            }
        }
    }
    n
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
