//! Full pipeline through the command-line layer: synthesize, train both
//! models, score the test videos and compute the frame-level AUC of every
//! direction and timescale combination. The default configuration trains
//! on 200 walking trajectories and takes several minutes on one core.
//!
//! `cargo run --release --example score_and_evaluate -- [config.json]`

use mtp_anomaly::cli::{cmd_synth, cmd_train, load_models};
use mtp_anomaly::config::RunConfig;
use mtp_anomaly::eval::frame_auc;
use mtp_anomaly::model::{Direction, MtpModel};
use mtp_anomaly::score::{score_dataset, ScoreOptions};
use mtp_anomaly::trajectory::{load_jsonl, Labels};

fn main() -> mtp_anomaly::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/detect.json").into());
    let cfg = RunConfig::load(path.as_ref())?;
    cmd_synth(&cfg)?;
    cmd_train(&cfg, false)?;

    let models = load_models(&cfg, &Direction::BOTH)?;
    let refs: Vec<&MtpModel> = models.iter().collect();
    let test = load_jsonl(&cfg.paths.test_data())?;
    let labels = Labels::read_csv(&cfg.paths.labels())?;

    let auc = |timescales: Vec<usize>, directions: Vec<Direction>| -> mtp_anomaly::Result<f64> {
        let opts = ScoreOptions { timescales, directions, ..cfg.score.clone() };
        let out = score_dataset(&refs, &test, &opts)?;
        Ok(frame_auc(&out.scores, &labels, opts.no_person_score)?.frame_auc)
    };
    let columns = [vec![Direction::Future], vec![Direction::Past], Direction::BOTH.to_vec()];
    println!("\nframe AUC{:>12}{:>10}{:>10}", "future", "past", "both");
    let mut rows: Vec<(String, Vec<usize>)> = models[0]
        .config()
        .timescales()
        .into_iter()
        .map(|t| (format!("t={t}"), vec![t]))
        .collect();
    rows.push(("all".into(), Vec::new()));
    for (name, ts) in rows {
        let mut line = format!("{name:<9}");
        for dirs in &columns {
            line += &format!("{:>10.4}", auc(ts.clone(), dirs.clone())?);
        }
        println!("{line}");
    }
    Ok(())
}
