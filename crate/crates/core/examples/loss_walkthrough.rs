//! Every quantity of the training loss for one short trajectory: the node
//! error matrix at the first timescale, per-node and per-frame losses, and
//! the summed model loss.
//!
//! `cargo run --release --example loss_walkthrough`

use mtp_anomaly::loss::{layer_loss_at, layer_total, model_loss, node_errors, node_loss};
use mtp_anomaly::model::{Direction, ModelConfig, MtpModel};
use mtp_anomaly::synth::{generate, SynthConfig};
use mtp_anomaly::trajectory::{pose_matrix, weight_matrix};

fn main() -> mtp_anomaly::Result<()> {
    let cfg = SynthConfig { n_normal: 1, n_anomalous: 0, n_test_normal: 0, frames: 12, anomalies: Vec::new(), ..SynthConfig::default() };
    let traj = generate(&cfg)?.train.trajectories.remove(0).normalize()?;
    let model = MtpModel::new(ModelConfig::with_width(16), Direction::Future)?;
    let (truth, weights) = (pose_matrix(&traj.frames), weight_matrix(&traj.frames));

    let layers: Vec<usize> = model.config().supervision.iter().map(|s| s.layer).collect();
    let mut matrices = Vec::new();
    for (layer, pred) in model.predict_nodes(&truth, &layers)? {
        let ts = model.config().timescale_of(layer).expect("supervised layer");
        matrices.push(node_errors(layer, ts, &pred, &truth, &weights)?);
    }
    println!("{} frames; supervised layers reached: {:?}", traj.len(), matrices.iter().map(|m| m.layer).collect::<Vec<_>>());

    let m = &matrices[0];
    println!("\ntimescale {} errors e(t, i), frames down, nodes across", m.timescale);
    for t in 0..m.frames {
        let row: String = (0..m.nodes)
            .filter(|&i| m.node_present(i))
            .map(|i| m.get(t, i).map_or(format!("{:>9}", "."), |e| format!("{e:>9.2e}")))
            .collect();
        let l2 = layer_loss_at(m, t).map_or("uncovered".into(), |l| format!("{l:.3e}"));
        println!("t={t:>2} {row}   frame loss {l2}");
    }
    let nodes: Vec<String> = (0..m.nodes).filter(|&i| m.node_present(i)).map(|i| format!("{:.3e}", node_loss(m, i))).collect();
    println!("node losses: {}", nodes.join(" "));

    for m in &matrices {
        println!("timescale {:>2}: layer loss {:.4e}", m.timescale, layer_total(m));
    }
    println!("model loss {:.4e}", model_loss(&matrices)?);
    Ok(())
}
