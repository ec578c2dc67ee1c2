//! Receptive fields of the default convolution stack, the supervised layer of
//! each timescale, and which nodes cover which frames of a short sequence.
//!
//! `cargo run --release --example receptive_fields -- [frames]`

use mtp_anomaly::model::{ModelConfig, NodeSpan};

fn main() {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let cfg = ModelConfig::default();
    println!("layer  kernel  receptive field  supervised");
    for (l, (k, rf)) in cfg.kernel_sizes.iter().zip(cfg.receptive_fields()).enumerate() {
        let sup = cfg.timescale_of(l + 1).map_or(String::new(), |t| format!("timescale {t}"));
        println!("{:>5}  {k:>6}  {rf:>15}  {sup}", l + 1);
    }

    println!("\nnodes on a {frames}-frame sequence");
    for s in &cfg.supervision {
        let t = s.timescale;
        if frames < 2 * t {
            println!("timescale {t:>2}: sequence too short (needs {} frames)", 2 * t);
            continue;
        }
        let nodes = frames - 2 * t + 1;
        let first = NodeSpan::new(s.layer, 0, t);
        let last = NodeSpan::new(s.layer, nodes - 1, t);
        println!(
            "timescale {t:>2}: {nodes:>3} nodes; node 0 reads {}..={} and predicts {}..={}; last node predicts {}..={}",
            first.input_start, first.input_end, first.pred_start, first.pred_end, last.pred_start, last.pred_end
        );
        let coverage: String = (0..frames)
            .map(|f| {
                let n = (0..nodes).filter(|&i| NodeSpan::new(s.layer, i, t).predicts(f)).count();
                char::from_digit(n.min(35) as u32, 36).unwrap_or('+')
            })
            .collect();
        println!("              predictions per frame: {coverage}");
    }
}
