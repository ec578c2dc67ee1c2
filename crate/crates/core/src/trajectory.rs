//! Pose-trajectory data model, JSON Lines ingestion, label files, coordinate
//! normalization, confidence weights and windowing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const NUM_JOINTS: usize = 25;
/// Length of a flattened pose `(x1, y1, …, x25, y25)`.
pub const POSE_DIM: usize = 2 * NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Detector confidence in `[0, 1]`.
    pub c: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, c: f64) -> Self {
        Self { x, y, c }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite keypoint coordinates ({}, {})",
                self.x, self.y
            )));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::Validation(format!(
                "keypoint confidence {} outside [0, 1]",
                self.c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub frame_index: i64,
    pub keypoints: [Keypoint; NUM_JOINTS],
}

impl PoseFrame {
    pub fn new(frame_index: i64, keypoints: [Keypoint; NUM_JOINTS]) -> Self {
        Self {
            frame_index,
            keypoints,
        }
    }

    /// `(x1, y1, …, x25, y25)`.
    pub fn flatten(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        for (k, kp) in self.keypoints.iter().enumerate() {
            out[2 * k] = kp.x;
            out[2 * k + 1] = kp.y;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.keypoints.iter().try_for_each(Keypoint::validate)
    }
}

/// Normalized per-joint weights `w_k = c_k / Σ c_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointWeights {
    pub weights: [f64; NUM_JOINTS],
    /// All confidences were zero; `weights` fell back to uniform.
    pub degenerate: bool,
}

pub fn confidence_weights(frame: &PoseFrame) -> JointWeights {
    let total: f64 = frame.keypoints.iter().map(|k| k.c).sum();
    if total <= 0.0 {
        return JointWeights {
            weights: [1.0 / NUM_JOINTS as f64; NUM_JOINTS],
            degenerate: true,
        };
    }
    let mut weights = [0.0; NUM_JOINTS];
    for (w, kp) in weights.iter_mut().zip(&frame.keypoints) {
        *w = kp.c / total;
    }
    JointWeights {
        weights,
        degenerate: false,
    }
}

/// `[frames.len(), 50]` pose matrix.
pub fn pose_matrix(frames: &[PoseFrame]) -> Tensor {
    let data = frames.iter().flat_map(|f| f.flatten()).collect();
    Tensor::new(vec![frames.len(), POSE_DIM], data).expect("consistent shape")
}

/// `[frames.len(), 25]` confidence-weight matrix.
pub fn weight_matrix(frames: &[PoseFrame]) -> Tensor {
    let data = frames
        .iter()
        .flat_map(|f| confidence_weights(f).weights)
        .collect();
    Tensor::new(vec![frames.len(), NUM_JOINTS], data).expect("consistent shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    pub track_id: String,
    pub video_id: String,
    pub frames: Vec<PoseFrame>,
    /// `(width, height)` in pixels.
    pub frame_dims: (u32, u32),
}

impl PoseTrajectory {
    /// Builds a trajectory, checking that it is non-empty and contiguous.
    pub fn new(
        video_id: impl Into<String>,
        track_id: impl Into<String>,
        frames: Vec<PoseFrame>,
        frame_dims: (u32, u32),
    ) -> Result<Self> {
        let traj = Self {
            track_id: track_id.into(),
            video_id: video_id.into(),
            frames,
            frame_dims,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "trajectory {}/{} is empty",
                self.video_id, self.track_id
            )));
        }
        for pair in self.frames.windows(2) {
            if pair[1].frame_index != pair[0].frame_index + 1 {
                return Err(Error::Validation(format!(
                    "trajectory {}/{} is not contiguous at frame {}",
                    self.video_id, self.track_id, pair[0].frame_index
                )));
            }
        }
        self.frames.iter().try_for_each(PoseFrame::validate)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_frame(&self) -> i64 {
        self.frames[0].frame_index
    }

    pub fn poses(&self) -> Tensor {
        pose_matrix(&self.frames)
    }

    pub fn weights(&self) -> Tensor {
        weight_matrix(&self.frames)
    }

    fn check_dims(&self) -> Result<(f64, f64)> {
        let (w, h) = self.frame_dims;
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!(
                "trajectory {}/{} has invalid frame dimensions {w}x{h}",
                self.video_id, self.track_id
            )));
        }
        Ok((f64::from(w), f64::from(h)))
    }

    fn map_coords(&self, fx: f64, fy: f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            for kp in &mut f.keypoints {
                kp.x *= fx;
                kp.y *= fy;
            }
        }
        out
    }

    /// Divides x by the frame width and y by the frame height.
    pub fn normalize(&self) -> Result<Self> {
        let (w, h) = self.check_dims()?;
        Ok(self.map_coords(1.0 / w, 1.0 / h))
    }

    pub fn denormalize(&self) -> Result<Self> {
        let (w, h) = self.check_dims()?;
        Ok(self.map_coords(w, h))
    }

    /// Time-reversed copy. Frame indices are mirrored within the same range,
    /// so the result is contiguous and reversing twice is the identity.
    pub fn reversed(&self) -> Self {
        let lo = self.first_frame();
        let hi = self.frames.last().map_or(lo, |f| f.frame_index);
        let frames = self
            .frames
            .iter()
            .rev()
            .map(|f| PoseFrame::new(lo + hi - f.frame_index, f.keypoints))
            .collect();
        Self {
            frames,
            ..self.clone()
        }
    }
}

/// Per-frame binary anomaly labels keyed by `(video_id, frame)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels(pub BTreeMap<(String, i64), bool>);

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    video_id: String,
    frame: i64,
    label: u8,
}

impl Labels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video_id: &str, frame: i64, abnormal: bool) {
        self.0.insert((video_id.to_string(), frame), abnormal);
    }

    pub fn get(&self, video_id: &str, frame: i64) -> Option<bool> {
        self.0.get(&(video_id.to_string(), frame)).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64, bool)> {
        self.0.iter().map(|((v, f), l)| (v.as_str(), *f, *l))
    }

    pub fn positives(&self) -> usize {
        self.0.values().filter(|&&l| l).count()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = Labels::new();
        for (i, row) in rdr.deserialize::<LabelRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            if row.label > 1 {
                return Err(Error::Validation(format!(
                    "line {}: label must be 0 or 1, got {}",
                    i + 2,
                    row.label
                )));
            }
            labels.insert(&row.video_id, row.frame, row.label == 1);
        }
        Ok(labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for (video_id, frame, label) in self.iter() {
            wtr.serialize(LabelRow {
                video_id: video_id.to_string(),
                frame,
                label: u8::from(label),
            })?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<PoseTrajectory>,
    pub labels: Option<Labels>,
}

impl Dataset {
    pub fn new(trajectories: Vec<PoseTrajectory>) -> Self {
        Self {
            trajectories,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(PoseTrajectory::len).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            trajectories: self
                .trajectories
                .iter()
                .map(PoseTrajectory::normalize)
                .collect::<Result<_>>()?,
            labels: self.labels.clone(),
        })
    }
}

/// One line of the trajectory file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    video_id: String,
    track_id: String,
    frame: i64,
    width: u32,
    height: u32,
    keypoints: Vec<Vec<f64>>,
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file))
}

/// Parses JSON Lines pose records, grouping them by `(video_id, track_id)`
/// and splitting each group into contiguous runs of frames.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Dataset> {
    type Group = ((u32, u32), Vec<PoseFrame>);
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.keypoints.len() != NUM_JOINTS {
            return Err(Error::Schema {
                line: line_no,
                message: format!("expected {NUM_JOINTS} keypoints, got {}", rec.keypoints.len()),
            });
        }
        let mut kps = [Keypoint::default(); NUM_JOINTS];
        for (k, (slot, raw)) in kps.iter_mut().zip(&rec.keypoints).enumerate() {
            let [x, y, c] = raw[..] else {
                return Err(Error::Schema {
                    line: line_no,
                    message: format!("keypoint {k} must be [x, y, c], got {} values", raw.len()),
                });
            };
            *slot = Keypoint::new(x, y, c);
            slot.validate()
                .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        }
        let dims = (rec.width, rec.height);
        let entry = groups
            .entry((rec.video_id, rec.track_id))
            .or_insert_with(|| (dims, Vec::new()));
        if entry.0 != dims {
            return Err(Error::Validation(format!(
                "line {line_no}: frame dimensions {}x{} differ from earlier {}x{}",
                dims.0, dims.1, entry.0 .0, entry.0 .1
            )));
        }
        entry.1.push(PoseFrame::new(rec.frame, kps));
    }

    let mut trajectories = Vec::new();
    for ((video_id, track_id), (dims, mut frames)) in groups {
        frames.sort_by_key(|f| f.frame_index);
        if let Some(dup) = frames.windows(2).find(|p| p[0].frame_index == p[1].frame_index) {
            return Err(Error::Validation(format!(
                "duplicate frame {} for track {video_id}/{track_id}",
                dup[0].frame_index
            )));
        }
        let mut run: Vec<PoseFrame> = Vec::new();
        for f in frames {
            if run.last().is_some_and(|p| f.frame_index != p.frame_index + 1) {
                let done = std::mem::take(&mut run);
                trajectories.push(PoseTrajectory::new(&video_id, &track_id, done, dims)?);
            }
            run.push(f);
        }
        if !run.is_empty() {
            trajectories.push(PoseTrajectory::new(&video_id, &track_id, run, dims)?);
        }
    }
    Ok(Dataset::new(trajectories))
}

/// Writes trajectories in the JSON Lines format read by [`load_jsonl`].
pub fn write_jsonl(trajectories: &[PoseTrajectory], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl_to(trajectories, &mut out).map_err(|e| match e {
        Error::Json(j) if j.is_io() => Error::io(path, j.into()),
        other => other,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl_to(trajectories: &[PoseTrajectory], out: &mut impl Write) -> Result<()> {
    for traj in trajectories {
        for f in &traj.frames {
            let rec = FrameRecord {
                video_id: traj.video_id.clone(),
                track_id: traj.track_id.clone(),
                frame: f.frame_index,
                width: traj.frame_dims.0,
                height: traj.frame_dims.1,
                keypoints: f.keypoints.iter().map(|k| vec![k.x, k.y, k.c]).collect(),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n").map_err(serde_json::Error::io)?;
        }
    }
    Ok(())
}

/// A training or scoring window: `input` followed immediately by `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub video_id: String,
    pub track_id: String,
    /// Start index of `input` within the source trajectory.
    pub offset: usize,
    pub input: Vec<PoseFrame>,
    pub target: Vec<PoseFrame>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.input.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input and target frames in time order.
    pub fn frames(&self) -> Vec<PoseFrame> {
        self.input.iter().chain(&self.target).cloned().collect()
    }

    /// Confidence weights of the target frames.
    pub fn target_weights(&self) -> Vec<JointWeights> {
        self.target.iter().map(confidence_weights).collect()
    }
}

/// Windows of `l_in` input and `l_out` target frames starting at offsets
/// `0, stride, 2·stride, …` that fit entirely in the trajectory.
pub fn windows(traj: &PoseTrajectory, l_in: usize, l_out: usize, stride: usize) -> Vec<Window> {
    assert!(l_in >= 1 && l_out >= 1 && stride >= 1, "window sizes must be positive");
    let span = l_in + l_out;
    if traj.len() < span {
        return Vec::new();
    }
    (0..=traj.len() - span)
        .step_by(stride)
        .map(|offset| Window {
            video_id: traj.video_id.clone(),
            track_id: traj.track_id.clone(),
            offset,
            input: traj.frames[offset..offset + l_in].to_vec(),
            target: traj.frames[offset + l_in..offset + span].to_vec(),
        })
        .collect()
}
