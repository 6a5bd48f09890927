//! Central-difference gradient oracle.

use super::{Rng, Tape, Tensor, Var};

pub(crate) const STEP: f64 = 1e-5;
pub(crate) const TOLERANCE: f64 = 1e-4;

pub(crate) fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).value().item();
    out
}

/// Compares tape gradients of every input element against central
/// differences of the scalar function `f`.
pub(crate) fn assert_grads_close<F>(inputs: &[Tensor<f64>], f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    tape.backward(loss).unwrap();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = vars[i].grad().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.numel() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] += STEP;
            let up = eval(&probe, &f);
            probe[i].data_mut()[j] -= 2.0 * STEP;
            let down = eval(&probe, &f);
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                err < TOLERANCE || (a - numeric).abs() < 1e-9,
                "input {i} element {j}: analytic {a} numeric {numeric}"
            );
        }
    }
}
