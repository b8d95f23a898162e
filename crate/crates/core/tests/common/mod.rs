#![allow(dead_code)]

use ckgan::autodiff::{Tape, Var};
use ckgan::Tensor;

/// Gradient magnitudes below this are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

/// Central differences of a recorded scalar, by replaying the tape with one
/// input perturbed at a time.
pub fn numeric_gradient(tape: &Tape, out: Var, inputs: &[(&str, Tensor)], which: usize, h: f64) -> Tensor {
    let base = &inputs[which].1;
    let mut grad = Tensor::zeros(base.shape());
    for i in 0..base.len() {
        let eval_at = |delta: f64| {
            let mut bound: Vec<(&str, Tensor)> = inputs.to_vec();
            bound[which].1.data_mut()[i] += delta;
            tape.evaluate(&bound).unwrap()[out].item().unwrap()
        };
        grad.data_mut()[i] = (eval_at(h) - eval_at(-h)) / (2.0 * h);
    }
    grad
}

pub fn rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR))
        .fold(0.0, f64::max)
}

/// Largest relative error between reverse-mode and finite-difference
/// gradients of `out` over all `vars`, which must be every named variable on
/// the tape.
pub fn gradient_error(tape: &mut Tape, out: Var, vars: &[(&str, Var)], h: f64) -> f64 {
    let inputs: Vec<(&str, Tensor)> = vars.iter().map(|(n, v)| (*n, tape.value(*v).clone())).collect();
    let wrt: Vec<Var> = vars.iter().map(|(_, v)| *v).collect();
    let grads = tape.gradient(out, &wrt).unwrap();
    let mut worst: f64 = 0.0;
    for (i, (_, v)) in vars.iter().enumerate() {
        let numeric = numeric_gradient(tape, out, &inputs, i, h);
        worst = worst.max(rel_err(&grads[*v], &numeric));
    }
    worst
}

pub fn matrix(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}
