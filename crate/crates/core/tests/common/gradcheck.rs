//! Central finite-difference checks of every differentiable operation and
//! of the end-to-end training loss.
#![allow(dead_code)]

use super::{random_trajectory, rng, small_model};
use mtp_anomaly::loss::{model_loss, node_errors};
use mtp_anomaly::model::{Direction, MtpModel};
use mtp_anomaly::nn::{Tape, Tensor, Var};
use mtp_anomaly::train::chunk_loss_and_grads;
use mtp_anomaly::trajectory::{pose_matrix, weight_matrix, windows, Window};
use rand::Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks stay out of reach of `H`.
fn off_zero_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        let sign = if *v < 0.0 { -1.0 } else { 1.0 };
        *v = sign * (0.05 + v.abs());
    }
    t
}

/// Reduces `op`'s output to a scalar with fixed random coefficients and
/// compares the tape gradient of every input with central differences.
/// Returns the worst relative error over the inputs.
fn check_op(seed: u64, inputs: &[Tensor], op: impl Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let mut coeff_rng = rng(seed ^ 0xc0ef);
    let mut coeffs: Option<Vec<f64>> = None;
    let mut eval = |values: &[Tensor], as_variables: bool| -> (f64, Vec<Option<Tensor>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if as_variables { tape.variable(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = op(&mut tape, &vars);
        let len = tape.value(out).len();
        let c = coeffs
            .get_or_insert_with(|| (0..len).map(|_| coeff_rng.random_range(-1.0..1.0)).collect())
            .clone();
        let flat = tape.reshape(out, &[len]).unwrap();
        let loss = tape.weighted_sum(flat, c).unwrap();
        let value = tape.value(loss).item();
        if !as_variables {
            return (value, Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| grads.wrt(v).cloned()).collect())
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let a = analytic[i].clone().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            *n = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * H);
        }
        worst = worst.max(rel_error(a.data(), &numeric));
    }
    worst
}

fn worst(errors: impl Iterator<Item = f64>) -> f64 {
    errors.fold(0.0, f64::max)
}

pub fn linear() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(s);
            let (n, i, o) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..6));
            let inputs = [random_tensor(&mut r, &[n, i]), random_tensor(&mut r, &[i, o]), random_tensor(&mut r, &[o])];
            check_op(s, &inputs, |t, v| t.linear(v[0], v[1], v[2]).unwrap())
        }),
    )
}

pub fn conv1d_valid() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(100 + s);
            let k = r.random_range(1..6);
            let (len, ci, co) = (k + r.random_range(0..5), r.random_range(1..4), r.random_range(1..4));
            let inputs = [
                random_tensor(&mut r, &[len, ci]),
                random_tensor(&mut r, &[k, ci, co]),
                random_tensor(&mut r, &[co]),
            ];
            check_op(s, &inputs, |t, v| t.conv1d_valid(v[0], v[1], v[2]).unwrap())
        }),
    )
}

pub fn conv1d_valid_over_several_sequences() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(200 + s);
            let k = r.random_range(1..5);
            let seqs = r.random_range(1..4);
            let (len, ci, co) = (k + r.random_range(0..4), r.random_range(1..4), r.random_range(1..4));
            let inputs = [
                random_tensor(&mut r, &[seqs * len, ci]),
                random_tensor(&mut r, &[k, ci, co]),
                random_tensor(&mut r, &[co]),
            ];
            check_op(s, &inputs, |t, v| t.conv1d_valid_seqs(v[0], v[1], v[2], seqs).unwrap())
        }),
    )
}

pub fn relu() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(300 + s);
            let shape = [r.random_range(1..6), r.random_range(1..6)];
            check_op(s, &[off_zero_tensor(&mut r, &shape)], |t, v| t.relu(v[0]))
        }),
    )
}

pub fn reshape() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(400 + s);
            let (a, b) = (r.random_range(1..5), r.random_range(1..5));
            check_op(s, &[random_tensor(&mut r, &[a, b])], |t, v| t.reshape(v[0], &[b, a]).unwrap())
        }),
    )
}

pub fn weighted_sq_error() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(500 + s);
            let (rows, joints) = (r.random_range(1..5), r.random_range(1..6));
            let truth = random_tensor(&mut r, &[rows, 2 * joints]);
            let weights = Tensor::new(
                vec![rows, joints],
                (0..rows * joints).map(|_| r.random::<f64>()).collect(),
            )
            .unwrap();
            let pred = random_tensor(&mut r, &[rows, 2 * joints]);
            check_op(s, &[pred], |t, v| t.weighted_sq_error(v[0], truth.clone(), weights.clone()).unwrap())
        }),
    )
}

pub fn reductions() -> f64 {
    worst(
        (0..SEEDS).map(|s| {
            let mut r = rng(600 + s);
            let shape = [r.random_range(1..5), r.random_range(1..5)];
            let factor = r.random_range(-3.0..3.0);
            let inputs = [random_tensor(&mut r, &shape), random_tensor(&mut r, &shape)];
            check_op(s, &inputs, |t, v| {
                let a = t.add(&[v[0], v[1], v[0]]).unwrap();
                let scaled = t.scale(a, factor);
                let total = t.sum(v[1]);
                let flat = t.reshape(scaled, &[shape[0] * shape[1]]).unwrap();
                let ws = t.weighted_sum(flat, vec![0.5; shape[0] * shape[1]]).unwrap();
                t.add(&[ws, total]).unwrap()
            })
        }),
    )
}

/// Loss of `chunk` at `depth` computed without the tape: decoded node
/// predictions on each window's input, enumerated node errors, and the sum
/// of layer totals.
fn oracle_loss(model: &MtpModel, chunk: &[Window], depth: usize) -> f64 {
    let cfg = model.config();
    let t_in = chunk[0].input.len();
    let layers: Vec<usize> = cfg.supervision[..depth]
        .iter()
        .filter(|s| cfg.receptive_field(s.layer).unwrap() <= t_in)
        .map(|s| s.layer)
        .collect();
    chunk
        .iter()
        .map(|w| {
            let frames = w.frames();
            let (truth, weights) = (pose_matrix(&frames), weight_matrix(&frames));
            let matrices: Vec<_> = model
                .predict_nodes(&pose_matrix(&w.input), &layers)
                .unwrap()
                .into_iter()
                .map(|(l, p)| node_errors(l, cfg.timescale_of(l).unwrap(), &p, &truth, &weights).unwrap())
                .collect();
            model_loss(&matrices).unwrap()
        })
        .sum()
}

/// Worst relative error of sampled parameter gradients of the batched
/// training loss; panics if the loss value disagrees with the oracle or an
/// inactive parameter receives gradient.
pub fn end_to_end_training_loss() -> f64 {
    let mut worst_err: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(700 + seed);
        let direction = if seed % 2 == 0 { Direction::Future } else { Direction::Past };
        let mut model = small_model(8, seed, direction);
        // Zero-initialized biases put ReLU inputs exactly on the kink
        // wherever a whole layer input is dead; move to a generic point.
        for (_, p) in model.params_mut().iter_mut() {
            if p.name.ends_with(".b") {
                for v in p.value.data_mut() {
                    *v = r.random_range(-0.1..0.1);
                }
            }
        }
        let depth = 1 + (seed as usize % 4);
        let ts = model.config().supervision[depth - 1].timescale;
        let traj = random_trajectory(&mut r, "v", "p", 0, 2 * ts + 3);
        let chunk: Vec<Window> = windows(&traj, ts, ts, 1).into_iter().step_by(2).take(2).collect();
        let refs: Vec<&Window> = chunk.iter().collect();

        let (value, grads) = chunk_loss_and_grads(&model, &refs, depth).unwrap();
        let oracle = oracle_loss(&model, &chunk, depth);
        assert!((value - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "seed {seed}: {value} vs {oracle}");

        let active = model.active_params(depth);
        for (id, g) in grads.iter() {
            assert!(active.contains(&id), "seed {seed}: gradient for inactive parameter");
            let len = g.len();
            let picks: Vec<usize> = (0..6.min(len)).map(|_| r.random_range(0..len)).collect();
            let mut a = Vec::new();
            let mut n = Vec::new();
            for &j in &picks {
                let orig = model.params().get(id).value.data()[j];
                model.params_mut().get_mut(id).value.data_mut()[j] = orig + H;
                let plus = oracle_loss(&model, &chunk, depth);
                model.params_mut().get_mut(id).value.data_mut()[j] = orig - H;
                let minus = oracle_loss(&model, &chunk, depth);
                model.params_mut().get_mut(id).value.data_mut()[j] = orig;
                a.push(g.data()[j]);
                n.push((plus - minus) / (2.0 * H));
            }
            worst_err = worst_err.max(rel_error(&a, &n));
        }
    }
    worst_err
}


/// Every differentiable operation with its worst relative error.
pub const OPS: [(&str, fn() -> f64); 7] = [
    ("linear", linear),
    ("conv1d_valid", conv1d_valid),
    ("conv1d_valid_seqs", conv1d_valid_over_several_sequences),
    ("relu", relu),
    ("reshape", reshape),
    ("weighted_sq_error", weighted_sq_error),
    ("sum/add/scale/weighted_sum", reductions),
];
