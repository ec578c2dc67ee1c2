//! Frame-level ROC-AUC.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::ScoreSeries;
use crate::trajectory::Labels;

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted
/// as one half (midranks).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUC is undefined with {pos} positive and {neg} negative frames; both classes are needed"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points from the strictest threshold down, one per distinct score,
/// starting at `(0, 0)` with threshold `+∞`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    auc(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
            threshold: s,
        });
    }
    Ok(points)
}

/// Trapezoidal area under ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame_auc: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Labeled frames without a score; they enter the AUC with
    /// `no_person_score`.
    pub unscored_labeled: usize,
    pub no_person_score: f64,
    /// `None` for videos whose labels are all one class.
    pub per_video: BTreeMap<String, Option<f64>>,
}

/// Scores aligned to every labeled frame; unscored frames get
/// `no_person_score`. Returns `(scores, labels, unscored count)`.
pub fn align(scores: &ScoreSeries, labels: &Labels, no_person_score: f64) -> (Vec<f64>, Vec<bool>, usize) {
    let lookup = scores.lookup();
    let mut s = Vec::with_capacity(labels.len());
    let mut l = Vec::with_capacity(labels.len());
    let mut unscored = 0;
    for ((video, frame), &label) in &labels.0 {
        match lookup.get(&(video.clone(), *frame)) {
            Some(&v) => s.push(v),
            None => {
                unscored += 1;
                s.push(no_person_score);
            }
        }
        l.push(label);
    }
    (s, l, unscored)
}

/// Frame-level AUC over all labeled frames.
pub fn frame_auc(scores: &ScoreSeries, labels: &Labels, no_person_score: f64) -> Result<EvalReport> {
    let (s, l, unscored) = align(scores, labels, no_person_score);
    let frame_auc = auc(&s, &l)?;
    let mut videos: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for (((video, _), _), (&score, &label)) in labels.0.iter().zip(s.iter().zip(&l)) {
        let e = videos.entry(video).or_default();
        e.0.push(score);
        e.1.push(label);
    }
    let per_video = videos
        .into_iter()
        .map(|(v, (s, l))| (v.to_string(), auc(&s, &l).ok()))
        .collect();
    let positives = l.iter().filter(|&&x| x).count();
    Ok(EvalReport {
        frame_auc,
        positives,
        negatives: l.len() - positives,
        unscored_labeled: unscored,
        no_person_score,
        per_video,
    })
}

pub fn write_roc_csv(points: &[RocPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}
