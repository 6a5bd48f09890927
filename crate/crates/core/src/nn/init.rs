use super::LayerKind;
use crate::tensor::{Real, Rng, Tensor};

fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.uniform_range(-bound, bound)))
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// `n x n` orthogonal matrix by Gram-Schmidt on a Gaussian draw.
fn orthogonal(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= dot * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

/// Recurrent matrix `[h, 4h]`: one orthogonal block per gate.
fn recurrent<T: Real>(hidden: usize, rng: &mut Rng) -> Tensor<T> {
    let blocks: Vec<Vec<f64>> = (0..4).map(|_| orthogonal(hidden, rng)).collect();
    Tensor::from_fn(&[hidden, 4 * hidden], |i| {
        let (r, c) = (i / (4 * hidden), i % (4 * hidden));
        T::from_f64_lossy(blocks[c / hidden][r * hidden + c % hidden])
    })
}

/// Gate biases zero except the forget gate at one.
fn lstm_bias<T: Real>(hidden: usize) -> Tensor<T> {
    Tensor::from_fn(&[4 * hidden], |i| {
        if (hidden..2 * hidden).contains(&i) {
            T::one()
        } else {
            T::zero()
        }
    })
}

pub(super) fn layer_tensors<T: Real>(kind: &LayerKind, rng: &mut Rng) -> Vec<Tensor<T>> {
    let lstm = |input: usize, hidden: usize, rng: &mut Rng| {
        vec![
            glorot(&[input, 4 * hidden], input, 4 * hidden, rng),
            recurrent(hidden, rng),
            lstm_bias(hidden),
        ]
    };
    match kind {
        &LayerKind::Lstm { input, hidden } => lstm(input, hidden, rng),
        &LayerKind::BiLstm { input, hidden } => {
            let mut v = lstm(input, hidden, rng);
            v.extend(lstm(input, hidden, rng));
            v
        }
        LayerKind::Tcn { .. } => kind
            .tensor_shapes()
            .iter()
            .map(|(_, shape)| match shape.as_slice() {
                &[k, cin, cout] => glorot(shape, k * cin, cout, rng),
                _ => Tensor::zeros(shape),
            })
            .collect(),
        &LayerKind::Dense { input, output } => {
            vec![glorot(&[input, output], input, output, rng), Tensor::zeros(&[output])]
        }
    }
}
