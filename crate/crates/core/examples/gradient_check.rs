//! Compares backpropagated gradients of the training loss with central
//! differences for a small model.
//!
//! `cargo run --release --example gradient_check`

use mtp_anomaly::model::{Direction, ModelConfig, MtpModel};
use mtp_anomaly::synth::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use mtp_anomaly::train::{chunk_loss_and_grads, make_subepoch_windows, prepare_dataset};

const H: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`.
fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&mut a.iter().zip(n).map(|(x, y)| x - y)) / scale
    }
}

fn main() -> mtp_anomaly::Result<()> {
    let data = generate(&SynthConfig { n_normal: 1, n_anomalous: 0, n_test_normal: 0, ..SynthConfig::default() })?;
    let data = prepare_dataset(&data.train, Direction::Future, true)?;
    let mut model = MtpModel::new(ModelConfig::with_width(6), Direction::Future)?;
    // Zero biases put dead ReLU inputs exactly on the kink.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (_, p) in model.params_mut().iter_mut() {
        if p.name.ends_with(".b") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    for depth in 1..=4 {
        let ts = model.config().supervision[depth - 1].timescale;
        let windows = make_subepoch_windows(&data, ts, 4 * ts);
        let chunk: Vec<_> = windows.iter().take(2).collect();
        let (loss, grads) = chunk_loss_and_grads(&model, &chunk, depth)?;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (id, g) in grads.iter() {
            let (mut a, mut n) = (Vec::new(), Vec::new());
            for j in (0..g.len()).step_by(g.len().div_ceil(4)) {
                let orig = model.params().get(id).value.data()[j];
                let mut at = |v: f64| -> mtp_anomaly::Result<f64> {
                    model.params_mut().get_mut(id).value.data_mut()[j] = v;
                    Ok(chunk_loss_and_grads(&model, &chunk, depth)?.0)
                };
                let numeric = (at(orig + H)? - at(orig - H)?) / (2.0 * H);
                at(orig)?;
                a.push(g.data()[j]);
                n.push(numeric);
                checked += 1;
            }
            worst = worst.max(rel_error(&a, &n));
        }
        println!("depth {depth} (timescale {ts:>2}): loss {loss:.4e}, {checked} gradient entries, worst per-parameter relative error {worst:.2e}");
    }
    Ok(())
}
