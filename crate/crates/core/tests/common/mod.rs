//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use mtp_anomaly::model::{Direction, ModelConfig, MtpModel};
use mtp_anomaly::trajectory::{Keypoint, PoseFrame, PoseTrajectory, NUM_JOINTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Trajectory of `len` frames with coordinates in `[0, 1]` and unit frame
/// size, so normalization is the identity. Some confidences are zero.
pub fn random_trajectory(rng: &mut impl Rng, video: &str, track: &str, first: i64, len: usize) -> PoseTrajectory {
    let frames = (0..len)
        .map(|t| {
            let kps: [Keypoint; NUM_JOINTS] = std::array::from_fn(|_| {
                let c = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.05..1.0) };
                Keypoint::new(rng.random::<f64>(), rng.random::<f64>(), c)
            });
            PoseFrame::new(first + t as i64, kps)
        })
        .collect();
    PoseTrajectory::new(video, track, frames, (1, 1)).expect("valid trajectory")
}

pub fn small_config(width: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        seed,
        ..ModelConfig::with_width(width)
    }
}

pub fn small_model(width: usize, seed: u64, direction: Direction) -> MtpModel {
    MtpModel::new(small_config(width, seed), direction).expect("valid config")
}
