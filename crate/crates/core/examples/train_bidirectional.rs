//! Trains the future and past models on the desk configuration (width 64,
//! 20 walking trajectories) and saves both checkpoints.
//!
//! `cargo run --release --example train_bidirectional -- [out_dir] [epochs]`

use std::path::PathBuf;
use std::time::Instant;

use mtp_anomaly::config::RunConfig;
use mtp_anomaly::model::{Direction, MtpModel};
use mtp_anomaly::synth::generate;
use mtp_anomaly::train::{prepare_dataset, TrainReport, Trainer};

fn main() -> mtp_anomaly::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "train_out".into()));
    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk.json").as_ref())?;
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse().map_err(|_| mtp_anomaly::Error::Config(format!("bad epoch count {e:?}")))?;
    }
    mtp_anomaly::config::require_writable_dir(&out)?;
    let data = generate(&cfg.synth)?;
    println!("{} trajectories, width {}, {} epochs", data.train.len(), cfg.model_config().width, cfg.train.epochs);

    for direction in Direction::BOTH {
        let t0 = Instant::now();
        let prepared = prepare_dataset(&data.train, direction, cfg.train.normalize)?;
        let mut trainer = Trainer::new(MtpModel::new(cfg.model_config(), direction)?, cfg.train.clone())?;
        let mut report = TrainReport::default();
        trainer.fit(&prepared, cfg.train.epochs, &mut report, |t, r| {
            let last: Vec<String> = r.subepochs.iter().rev().take(4).rev().map(|s| format!("{:.2e}", s.mean_loss)).collect();
            println!("{direction} epoch {:>3}: sub-epoch losses {}", t.epochs_done, last.join(" "));
            Ok(())
        })?;
        let path = out.join(format!("{direction}.ckpt"));
        trainer.model.save(&path, trainer.adam.step_count)?;
        println!(
            "{direction}: {} optimizer steps in {:.1}s, saved {}",
            trainer.adam.step_count,
            t0.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(())
}
