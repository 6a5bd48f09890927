use crate::tensor::{Real, Tensor};

use super::TrainError;

/// Adam moments for a flat list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments for tensors of the given sizes.
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update. Parameters whose gradient is `None` are
/// frozen: neither they nor their moments are touched.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() || state.m[i].len() != p.numel() {
                return Err(TrainError::Shape(format!(
                    "parameter {i}: {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let f = T::from_f64_lossy;
    let (b1, b2) = (f(state.beta1), f(state.beta2));
    let c1 = f(1.0 - state.beta1.powi(t));
    let c2 = f(1.0 - state.beta2.powi(t));
    let (lr, eps) = (f(state.lr), f(state.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    /// Independent textbook Adam on plain vectors.
    fn reference_adam(p: &mut [f64], grads: &[Vec<f64>], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let mut m = vec![0.0; p.len()];
        let mut v = vec![0.0; p.len()];
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as f64;
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / (1.0 - b1.powf(t));
                let vh = v[j] / (1.0 - b2.powf(t));
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn matches_reference_trajectory() {
        let mut rng = Rng::new(4, 0);
        let start: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let mut expected = start.clone();
        reference_adam(&mut expected, &grads, 1e-2);

        let mut p = Tensor::new(vec![2, 3], start).unwrap();
        let mut state = AdamState::new(&[6], 1e-2);
        for g in &grads {
            let g = Tensor::new(vec![2, 3], g.clone()).unwrap();
            adam_step(&mut [&mut p], &[Some(&g)], &mut state).unwrap();
        }
        for (a, b) in p.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::new(vec![3], vec![0.3, -7.0, 2.0]).unwrap();
        let mut state = AdamState::new(&[3], 1e-3);
        adam_step(&mut [&mut p], &[Some(&g)], &mut state).unwrap();
        let moved: Vec<f64> = p.data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, gv) in moved.iter().zip(g.data()) {
            assert!((d + 1e-3 * gv.signum()).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn zero_gradient_and_frozen() {
        let mut a = Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap();
        let mut b = Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap();
        let zero = Tensor::zeros(&[2]);
        let mut state = AdamState::new(&[2, 2], 0.1);
        adam_step(&mut [&mut a, &mut b], &[Some(&zero), None], &mut state).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(b.data(), &[3.0, 4.0]);
        let wrong = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut a, &mut b], &[Some(&wrong), None], &mut state).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 5.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        let mut g = vec![Tensor::new(vec![2], vec![30.0f64, 40.0]).unwrap()];
        clip_global_norm(&mut g, 5.0);
        assert!((g[0].data()[0] - 3.0).abs() < 1e-12);
    }
}
