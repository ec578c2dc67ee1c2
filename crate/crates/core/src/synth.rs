//! Synthetic walking skeletons with injected anomalies.
//!
//! A 25-joint skeleton about 100 px tall is translated at constant velocity
//! with limbs swinging sinusoidally along the walking direction, plus
//! Gaussian jitter. Anomalies act on the body path before rendering:
//!
//! * `jump`: a half-sine vertical lift of all joints, 3 to 7 frames long;
//! * `run`: velocity ×3, at least 10 frames;
//! * `loiter`: the walking direction is re-drawn every 5 frames, steering
//!   back toward where the loitering started, at least 25 frames. Speed and
//!   gait stay those of normal walking, so short windows look normal.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::trajectory::{write_jsonl, Dataset, Keypoint, Labels, PoseFrame, PoseTrajectory, NUM_JOINTS};

/// Joint offsets from the mid-hip for a 100 px skeleton, image axes
/// (y down), in BODY_25 order.
const TEMPLATE: [[f64; 2]; NUM_JOINTS] = [
    [0.0, -52.0],  // nose
    [0.0, -40.0],  // neck
    [-10.0, -38.0], // right shoulder
    [-12.0, -24.0], // right elbow
    [-13.0, -10.0], // right wrist
    [10.0, -38.0],  // left shoulder
    [12.0, -24.0],  // left elbow
    [13.0, -10.0],  // left wrist
    [0.0, 0.0],     // mid-hip
    [-6.0, 0.0],    // right hip
    [-6.0, 22.0],   // right knee
    [-6.0, 44.0],   // right ankle
    [6.0, 0.0],     // left hip
    [6.0, 22.0],    // left knee
    [6.0, 44.0],    // left ankle
    [-2.0, -54.0],  // right eye
    [2.0, -54.0],   // left eye
    [-4.0, -53.0],  // right ear
    [4.0, -53.0],   // left ear
    [9.0, 48.0],    // left big toe
    [11.0, 48.0],   // left small toe
    [5.0, 47.0],    // left heel
    [-9.0, 48.0],   // right big toe
    [-11.0, 48.0],  // right small toe
    [-5.0, 47.0],   // right heel
];

/// Swing of each joint along the heading, in units of the amplitude. Legs
/// and arms on one side move in opposite phase.
const SWING: [f64; NUM_JOINTS] = [
    0.0, 0.0, 0.0, -0.4, -0.8, 0.0, 0.4, 0.8, 0.0, 0.2, 0.6, 1.0, -0.2, -0.6, -1.0, 0.0, 0.0, 0.0, 0.0,
    -1.0, -1.0, -1.0, 1.0, 1.0, 1.0,
];

const TEMPLATE_HEIGHT: f64 = 102.0;
const LOITER_TURN_EVERY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Jump,
    Loiter,
    Run,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jump => "jump",
            Self::Loiter => "loiter",
            Self::Run => "run",
        }
    }

    /// Allowed durations in frames.
    pub fn duration_range(self) -> (usize, usize) {
        match self {
            Self::Jump => (3, 7),
            Self::Loiter => (25, usize::MAX),
            Self::Run => (10, usize::MAX),
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jump" => Ok(Self::Jump),
            "loiter" => Ok(Self::Loiter),
            "run" => Ok(Self::Run),
            _ => Err(Error::Config(format!("unknown anomaly kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// First anomalous frame (0-based); `None` draws one at random.
    #[serde(default)]
    pub onset: Option<usize>,
    pub duration: usize,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, onset: Option<usize>, duration: usize) -> Self {
        Self { kind, onset, duration }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        let (lo, hi) = self.kind.duration_range();
        if self.duration < lo || self.duration > hi {
            return Err(Error::Config(format!(
                "anomaly {self}: {} duration must be {}",
                self.kind,
                if hi == usize::MAX {
                    format!("at least {lo} frames")
                } else {
                    format!("{lo} to {hi} frames")
                }
            )));
        }
        let end = self.onset.unwrap_or(0) + self.duration;
        if end > frames {
            return Err(Error::Config(format!(
                "anomaly {self} does not fit in {frames} frames"
            )));
        }
        Ok(())
    }

    /// The spec with a concrete onset, drawn if unset. Random onsets leave
    /// at least 25 frames of context before the anomaly when possible.
    pub fn placed(&self, frames: usize, rng: &mut impl Rng) -> Result<Self> {
        self.validate(frames)?;
        let onset = match self.onset {
            Some(o) => o,
            None => {
                let last = frames - self.duration;
                let first = 25.min(last);
                rng.random_range(first..=last)
            }
        };
        Ok(Self {
            onset: Some(onset),
            ..*self
        })
    }

    pub fn window(&self) -> std::ops::Range<usize> {
        let o = self.onset.unwrap_or(0);
        o..o + self.duration
    }
}

impl fmt::Display for AnomalySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.onset {
            Some(o) => write!(f, "{}@{}+{}", self.kind, o, self.duration),
            None => write!(f, "{}@random+{}", self.kind, self.duration),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Normal training videos.
    pub n_normal: usize,
    /// Test videos containing one anomaly each.
    pub n_anomalous: usize,
    /// Normal test videos.
    pub n_test_normal: usize,
    pub persons_per_video: usize,
    /// Frames per trajectory.
    pub frames: usize,
    pub frame_dims: (u32, u32),
    pub person_height: f64,
    /// Walking speed range in px/frame.
    pub speed: (f64, f64),
    /// Limb swing amplitude in px.
    pub amplitude: f64,
    /// Limb swing period range in frames.
    pub period: (f64, f64),
    pub noise_std: f64,
    /// Anomalies assigned to anomalous videos in turn.
    pub anomalies: Vec<AnomalySpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_normal: 20,
            n_anomalous: 12,
            n_test_normal: 4,
            persons_per_video: 1,
            frames: 100,
            frame_dims: (640, 480),
            person_height: 100.0,
            speed: (3.0, 5.0),
            amplitude: 6.0,
            period: (16.0, 24.0),
            noise_std: 0.5,
            anomalies: vec![
                AnomalySpec::new(AnomalyKind::Jump, None, 5),
                AnomalySpec::new(AnomalyKind::Loiter, None, 40),
                AnomalySpec::new(AnomalyKind::Run, None, 20),
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.persons_per_video == 0 {
            return bad("frames and persons_per_video must be positive".into());
        }
        if self.frame_dims.0 == 0 || self.frame_dims.1 == 0 {
            return bad(format!("invalid frame size {:?}", self.frame_dims));
        }
        let (s0, s1) = self.speed;
        let (p0, p1) = self.period;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("invalid speed range {:?}", self.speed));
        }
        if !(p0 > 0.0 && p0 <= p1 && p1.is_finite()) {
            return bad(format!("invalid period range {:?}", self.period));
        }
        if !(self.amplitude >= 0.0 && self.noise_std >= 0.0 && self.person_height > 0.0) {
            return bad("amplitude and noise_std must be non-negative, person_height positive".into());
        }
        if self.n_anomalous > 0 && self.anomalies.is_empty() {
            return bad("anomalous videos requested but no anomaly specs given".into());
        }
        self.anomalies.iter().try_for_each(|a| a.validate(self.frames))
    }
}

/// Latent parameters of one walking person.
#[derive(Debug, Clone, PartialEq)]
pub struct Walker {
    pub start: [f64; 2],
    /// Walking direction in radians, image axes.
    pub heading: f64,
    pub speed: f64,
    pub period: f64,
    pub phase: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Template scale factor.
    pub scale: f64,
    /// Seed of the jitter, confidence and loiter-turn streams.
    pub seed: u64,
}

impl Walker {
    /// Draws a walker whose path over `cfg.frames` frames is centred in the
    /// frame.
    pub fn sample(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let heading = rng.random_range(0.0..2.0 * PI);
        let speed = uniform(rng, cfg.speed);
        let period = uniform(rng, cfg.period);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (w, h) = (f64::from(cfg.frame_dims.0), f64::from(cfg.frame_dims.1));
        let half = speed * cfg.frames as f64 / 2.0;
        let jitter = [rng.random_range(-0.1..=0.1) * w, rng.random_range(-0.1..=0.1) * h];
        let start = [
            w / 2.0 - half * heading.cos() + jitter[0],
            h / 2.0 - half * heading.sin() + jitter[1],
        ];
        Self {
            start,
            heading,
            speed,
            period,
            phase,
            amplitude: cfg.amplitude,
            noise_std: cfg.noise_std,
            scale: cfg.person_height / TEMPLATE_HEIGHT,
            seed: rng.random(),
        }
    }

    /// Renders `frames` frames with the given anomalies (onsets resolved).
    /// Returns the trajectory and per-frame anomaly labels.
    pub fn render(
        &self,
        video_id: &str,
        track_id: &str,
        frames: usize,
        frame_dims: (u32, u32),
        anomalies: &[AnomalySpec],
    ) -> Result<(PoseTrajectory, Vec<bool>)> {
        let mut labels = vec![false; frames];
        for a in anomalies {
            if a.onset.is_none() {
                return Err(Error::Config(format!("anomaly {a} has no onset")));
            }
            a.validate(frames)?;
            for t in a.window() {
                if labels[t] {
                    return Err(Error::Config(format!("anomaly {a} overlaps another anomaly")));
                }
                labels[t] = true;
            }
        }
        let path = self.path(frames, anomalies);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, 1]));
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let out = (0..frames)
            .map(|t| {
                let (root, heading, lift) = path[t];
                let swing = self.amplitude * (2.0 * PI * t as f64 / self.period + self.phase).sin();
                let (c, s) = (heading.cos(), heading.sin());
                let mut kps = [Keypoint::default(); NUM_JOINTS];
                for (j, kp) in kps.iter_mut().enumerate() {
                    let mut x = root[0] + self.scale * TEMPLATE[j][0] + SWING[j] * swing * c;
                    let mut y = root[1] + self.scale * TEMPLATE[j][1] + SWING[j] * swing * s - lift;
                    if self.noise_std > 0.0 {
                        x += noise.sample(&mut noise_rng);
                        y += noise.sample(&mut noise_rng);
                    }
                    let conf = noise_rng.random_range(0.5..=1.0);
                    *kp = Keypoint::new(x, y, conf);
                }
                PoseFrame::new(t as i64, kps)
            })
            .collect();
        Ok((PoseTrajectory::new(video_id, track_id, out, frame_dims)?, labels))
    }

    /// Body position, heading and vertical lift per frame.
    fn path(&self, frames: usize, anomalies: &[AnomalySpec]) -> Vec<([f64; 2], f64, f64)> {
        let mut turn_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, 2]));
        let find = |t: usize| anomalies.iter().find(|a| a.window().contains(&t));
        let mut pos = self.start;
        let mut anchor = pos;
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut speed = self.speed;
            let mut lift = 0.0;
            let mut heading = self.heading;
            if let Some(a) = find(t) {
                let k = t - a.window().start;
                match a.kind {
                    AnomalyKind::Jump => {
                        let height = 8.0 * self.amplitude.max(1.0);
                        lift = height * (PI * (k + 1) as f64 / (a.duration + 1) as f64).sin();
                    }
                    AnomalyKind::Run => speed *= 3.0,
                    AnomalyKind::Loiter => {
                        if k == 0 {
                            anchor = pos;
                        }
                        if k % LOITER_TURN_EVERY == 0 {
                            let to = [anchor[0] - pos[0], anchor[1] - pos[1]];
                            let dist = to[0].hypot(to[1]);
                            heading = if dist < self.speed * LOITER_TURN_EVERY as f64 {
                                turn_rng.random_range(0.0..2.0 * PI)
                            } else {
                                to[1].atan2(to[0]) + turn_rng.random_range(-PI / 6.0..=PI / 6.0)
                            };
                        } else {
                            heading = out
                                .last()
                                .map_or(self.heading, |&(_, h, _): &([f64; 2], f64, f64)| h);
                        }
                    }
                }
            }
            out.push((pos, heading, lift));
            pos = [pos[0] + speed * heading.cos(), pos[1] + speed * heading.sin()];
        }
        out
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// One normal walking trajectory.
pub fn gen_normal(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<PoseTrajectory> {
    let w = Walker::sample(cfg, rng);
    Ok(w.render("synthetic", "p0", cfg.frames, cfg.frame_dims, &[])?.0)
}

/// Renders `walker` with `specs` injected, drawing unset onsets from `rng`.
/// Overlapping specs are rejected.
pub fn inject_anomaly(
    walker: &Walker,
    cfg: &SynthConfig,
    specs: &[AnomalySpec],
    rng: &mut impl Rng,
) -> Result<(PoseTrajectory, Vec<bool>)> {
    let placed = specs
        .iter()
        .map(|s| s.placed(cfg.frames, rng))
        .collect::<Result<Vec<_>>>()?;
    walker.render("synthetic", "p0", cfg.frames, cfg.frame_dims, &placed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub video_id: String,
    pub track_id: String,
    pub kind: AnomalyKind,
    pub onset: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Normal videos only.
    pub train: Dataset,
    /// Anomalous and normal videos, with labels for every frame.
    pub test: Dataset,
    pub anomalies: Vec<AnomalyRecord>,
}

impl SynthDataset {
    pub const TRAIN_FILE: &'static str = "train.jsonl";
    pub const TEST_FILE: &'static str = "test.jsonl";
    pub const LABELS_FILE: &'static str = "test_labels.csv";
    pub const ANOMALIES_FILE: &'static str = "anomalies.json";

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&self.train.trajectories, &dir.join(Self::TRAIN_FILE))?;
        write_jsonl(&self.test.trajectories, &dir.join(Self::TEST_FILE))?;
        if let Some(labels) = &self.test.labels {
            labels.write_csv(&dir.join(Self::LABELS_FILE))?;
        }
        let path = dir.join(Self::ANOMALIES_FILE);
        let text = serde_json::to_string_pretty(&self.anomalies)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn walker_for(cfg: &SynthConfig, split: u64, video: usize, person: usize) -> Walker {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, split, video as u64, person as u64]));
    Walker::sample(cfg, &mut rng)
}

/// Generates the train split (normal videos) and the labeled test split.
/// Each video holds `persons_per_video` people; in anomalous videos the
/// first person carries the anomaly.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut train = Vec::new();
    for v in 0..cfg.n_normal {
        let video = format!("train_{v:04}");
        for p in 0..cfg.persons_per_video {
            let w = walker_for(cfg, 0, v, p);
            train.push(w.render(&video, &format!("p{p}"), cfg.frames, cfg.frame_dims, &[])?.0);
        }
    }
    let mut test = Vec::new();
    let mut labels = Labels::new();
    let mut records = Vec::new();
    for v in 0..cfg.n_anomalous + cfg.n_test_normal {
        let video = format!("test_{v:04}");
        let mut frame_labels = vec![false; cfg.frames];
        for p in 0..cfg.persons_per_video {
            let w = walker_for(cfg, 1, v, p);
            let mut specs = Vec::new();
            if v < cfg.n_anomalous && p == 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 2, v as u64]));
                let spec = cfg.anomalies[v % cfg.anomalies.len()].placed(cfg.frames, &mut rng)?;
                records.push(AnomalyRecord {
                    video_id: video.clone(),
                    track_id: format!("p{p}"),
                    kind: spec.kind,
                    onset: spec.window().start,
                    duration: spec.duration,
                });
                specs.push(spec);
            }
            let (traj, l) = w.render(&video, &format!("p{p}"), cfg.frames, cfg.frame_dims, &specs)?;
            for (fl, x) in frame_labels.iter_mut().zip(l) {
                *fl |= x;
            }
            test.push(traj);
        }
        for (t, &l) in frame_labels.iter().enumerate() {
            labels.insert(&video, t as i64, l);
        }
    }
    Ok(SynthDataset {
        train: Dataset::new(train),
        test: Dataset::new(test).with_labels(labels),
        anomalies: records,
    })
}

/// Mean joint position per frame.
pub fn centroids(traj: &PoseTrajectory) -> Vec<[f64; 2]> {
    traj.frames
        .iter()
        .map(|f| {
            let n = f.keypoints.len() as f64;
            let (sx, sy) = f.keypoints.iter().fold((0.0, 0.0), |(a, b), k| (a + k.x, b + k.y));
            [sx / n, sy / n]
        })
        .collect()
}
