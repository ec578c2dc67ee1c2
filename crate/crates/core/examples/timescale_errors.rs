//! Trains on normal walking, then compares per-timescale prediction errors
//! inside and outside each kind of injected anomaly. Brief jumps stand out
//! most at the shortest timescale; long timescales blur them across many
//! frames.
//!
//! `cargo run --release --example timescale_errors -- [n_train] [epochs]`

use mtp_anomaly::model::{Direction, ModelConfig};
use mtp_anomaly::nn::AdamConfig;
use mtp_anomaly::score::{masked_mean, timescale_errors};
use mtp_anomaly::synth::{generate, AnomalyKind, SynthConfig};
use mtp_anomaly::train::{train, TrainConfig};

fn main() -> mtp_anomaly::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("numeric argument"));
    let n_train = args.next().unwrap_or(60);
    let epochs = args.next().unwrap_or(20);
    let data = generate(&SynthConfig { n_normal: n_train, n_anomalous: 12, n_test_normal: 0, ..SynthConfig::default() })?;
    let tc = TrainConfig {
        epochs,
        adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        lr_decay: 0.9,
        strides: Some(vec![6, 10, 13, 10]),
        ..TrainConfig::default()
    };
    let (model, _) = train(&data.train, &ModelConfig::with_width(64), &tc, Direction::Future)?;
    let test = data.test.normalized()?;

    println!("mean future-model error, inside / outside the anomaly window");
    println!("{:<8}{:>22}{:>22}{:>22}{:>22}", "kind", "t=3", "t=5", "t=13", "t=25");
    for kind in [AnomalyKind::Jump, AnomalyKind::Run, AnomalyKind::Loiter] {
        let mut row = format!("{:<8}", kind.as_str());
        for sup in &model.config().supervision {
            let (mut inside, mut outside, mut n) = (0.0, 0.0, 0.0);
            for a in data.anomalies.iter().filter(|a| a.kind == kind) {
                let traj = test.trajectories.iter().find(|t| t.video_id == a.video_id).expect("anomalous video");
                let series = timescale_errors(&model, traj, sup.layer, 1)?;
                let window = a.onset..a.onset + a.duration;
                inside += masked_mean(&series, |t| window.contains(&t)).unwrap_or(f64::NAN);
                outside += masked_mean(&series, |t| !window.contains(&t)).unwrap_or(f64::NAN);
                n += 1.0;
            }
            row += &format!("{:>11.2e} /{:>9.2e}", inside / n, outside / n);
        }
        println!("{row}");
    }
    Ok(())
}
