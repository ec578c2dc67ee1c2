//! Generates a small synthetic walking dataset with injected anomalies and
//! writes it to a directory.
//!
//! `cargo run --release --example synth_dataset -- [out_dir]`

use mtp_anomaly::synth::{centroids, generate, SynthConfig, SynthDataset};

fn main() -> mtp_anomaly::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let cfg = SynthConfig { n_normal: 10, n_anomalous: 6, n_test_normal: 2, ..SynthConfig::default() };
    let data = generate(&cfg)?;
    data.write(out.as_ref())?;

    println!("{} training and {} test trajectories of {} frames", data.train.len(), data.test.len(), cfg.frames);
    for a in &data.anomalies {
        let traj = data.test.trajectories.iter().find(|t| t.video_id == a.video_id).expect("anomalous video");
        let c = centroids(traj);
        let step = |t: usize| (c[t + 1][0] - c[t][0]).hypot(c[t + 1][1] - c[t][1]);
        let inside = (a.onset..a.onset + a.duration - 1).map(step).sum::<f64>() / (a.duration - 1) as f64;
        println!(
            "{:<8} {:<7} frames {:>3}..{:<3} mean speed inside {inside:>5.2} px/frame",
            a.video_id,
            a.kind.as_str(),
            a.onset,
            a.onset + a.duration
        );
    }
    let labels = data.test.labels.as_ref().expect("synthetic test data is labeled");
    println!("{} labeled frames, {} anomalous", labels.len(), labels.positives());
    for f in [SynthDataset::TRAIN_FILE, SynthDataset::TEST_FILE, SynthDataset::LABELS_FILE, SynthDataset::ANOMALIES_FILE] {
        println!("wrote {out}/{f}");
    }
    Ok(())
}
