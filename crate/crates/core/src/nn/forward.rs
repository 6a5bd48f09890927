use super::{LayerKind, ModelConfig, ModelParams, NnError, Variant};
use crate::tensor::{Real, Rng, Tape, Tensor, Var};

/// Parameters placed on a tape, aligned with [`ModelParams::layers`].
pub struct Bound<'t, T: Real> {
    pub layers: Vec<Vec<Var<'t, T>>>,
}

/// Records every parameter on `tape`. Layers whose `trainable` flag is false
/// become constants and receive no gradient.
pub fn bind<'t, T: Real>(tape: &'t Tape<T>, params: &ModelParams<T>, trainable: &[bool]) -> Bound<'t, T> {
    let layers = params
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let train = trainable.get(i).copied().unwrap_or(false);
            l.tensors
                .iter()
                .map(|t| if train { tape.param(t.clone()) } else { tape.constant(t.clone()) })
                .collect()
        })
        .collect();
    Bound { layers }
}

#[derive(Clone, Copy)]
pub struct LstmState<'t, T: Real> {
    pub h: Var<'t, T>,
    pub c: Var<'t, T>,
}

/// Runs one LSTM layer over `[B, T, Cin]`. Gate order in the packed weights
/// is input, forget, cell, output.
pub fn lstm_forward<'t, T: Real>(
    x: Var<'t, T>,
    w: &[Var<'t, T>],
    state0: Option<LstmState<'t, T>>,
) -> Result<(Var<'t, T>, LstmState<'t, T>), NnError> {
    let (w_ih, w_hh, bias) = (w[0], w[1], w[2]);
    let shape = x.shape();
    let [batch, steps, _] = shape[..] else {
        return Err(NnError::Tensor(crate::tensor::TensorError::ShapeMismatch(format!(
            "lstm input {shape:?}"
        ))));
    };
    let hidden = w_hh.shape()[0];
    let tape = x.tape();
    let mut state = state0.unwrap_or_else(|| LstmState {
        h: tape.constant(Tensor::zeros(&[batch, hidden])),
        c: tape.constant(Tensor::zeros(&[batch, hidden])),
    });
    let proj = x.linear(&w_ih)?.add_bias(&bias)?;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let gates = proj.select_time(t)?.add(&state.h.matmul(&w_hh)?)?;
        let i = gates.slice_channels(0, hidden)?.sigmoid();
        let f = gates.slice_channels(hidden, hidden)?.sigmoid();
        let g = gates.slice_channels(2 * hidden, hidden)?.tanh();
        let o = gates.slice_channels(3 * hidden, hidden)?.sigmoid();
        let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        state = LstmState { h, c };
        outs.push(h);
    }
    Ok((Var::stack_time(&outs)?, state))
}

fn bilstm_forward<'t, T: Real>(x: Var<'t, T>, w: &[Var<'t, T>]) -> Result<Var<'t, T>, NnError> {
    let (fwd, _) = lstm_forward(x, &w[..3], None)?;
    let (bwd, _) = lstm_forward(x.reverse_time()?, &w[3..], None)?;
    Ok(fwd.concat_channels(&bwd.reverse_time()?)?)
}

/// One residual block: per dilation a causal convolution, rectifier and
/// dropout, then the block input (through a 1x1 convolution when widths
/// differ) is added.
pub fn tcn_forward<'t, T: Real>(
    x: Var<'t, T>,
    w: &[Var<'t, T>],
    dilations: &[usize],
    dropout: f64,
    train: bool,
    rng: &mut Rng,
) -> Result<Var<'t, T>, NnError> {
    let mut h = x;
    for (i, &d) in dilations.iter().enumerate() {
        h = h.causal_conv1d(&w[2 * i], &w[2 * i + 1], d)?.relu().dropout(dropout, train, rng);
    }
    let residual = match w.get(2 * dilations.len()..) {
        Some([mw, mb]) => x.causal_conv1d(mw, mb, 1)?,
        _ => x,
    };
    Ok(h.add(&residual)?)
}

fn dense<'t, T: Real>(x: Var<'t, T>, w: &[Var<'t, T>]) -> Result<Var<'t, T>, NnError> {
    Ok(x.linear(&w[0])?.add_bias(&w[1])?)
}

/// Logits for a one-hot batch. Autoregressive variants map `[B, T, V]` to
/// `[B, T, V]`; the windowed BiLSTM maps `[B, W, V]` to `[B, V]`.
pub fn forward<'t, T: Real>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    bound: &Bound<'t, T>,
    x: Var<'t, T>,
    train: bool,
    rng: &mut Rng,
) -> Result<Var<'t, T>, NnError> {
    let shape = x.shape();
    if shape.len() != 3 || shape[2] != config.vocab_size {
        return Err(NnError::Tensor(crate::tensor::TensorError::ShapeMismatch(format!(
            "model input {shape:?} for vocabulary {}",
            config.vocab_size
        ))));
    }
    let p = config.dropout;
    let mut lstm_out: Option<Var<'t, T>> = None;
    let mut tcn_out: Option<Var<'t, T>> = None;
    let mut bi_out: Option<Var<'t, T>> = None;
    let mut logits = None;
    for (layer, w) in params.layers.iter().zip(&bound.layers) {
        match &layer.kind {
            LayerKind::Lstm { .. } => {
                let (y, _) = lstm_forward(lstm_out.unwrap_or(x), w, None)?;
                lstm_out = Some(y.dropout(p, train, rng));
            }
            LayerKind::BiLstm { .. } => {
                let y = bilstm_forward(bi_out.unwrap_or(x), w)?;
                bi_out = Some(y.dropout(p, train, rng));
            }
            LayerKind::Tcn { dilations, .. } => {
                tcn_out = Some(tcn_forward(x, w, dilations, p, train, rng)?);
            }
            LayerKind::Dense { .. } => {
                let features = match config.variant {
                    Variant::Baseline1 | Variant::Baseline2 => lstm_out.expect("lstm layers precede head"),
                    Variant::TcnOnly => tcn_out.expect("tcn precedes head"),
                    Variant::Hybrid => lstm_out
                        .expect("lstm branch")
                        .concat_channels(&tcn_out.expect("tcn branch"))?,
                    Variant::BiLstmWin => {
                        let y = bi_out.expect("bilstm layers precede head");
                        let hidden = config.bilstm_units;
                        let last = y.select_time(shape[1] - 1)?.slice_channels(0, hidden)?;
                        let first = y.select_time(0)?.slice_channels(hidden, hidden)?;
                        last.concat_channels(&first)?
                    }
                };
                logits = Some(dense(features, w)?);
            }
        }
    }
    logits.ok_or_else(|| NnError::Config("model has no head".into()))
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, ModelConfig, Variant};
    use super::*;
    use crate::tensor::testing::{assert_grads_close, random_tensor};
    use crate::tensor::one_hot;

    fn tiny(variant: Variant, v: usize) -> ModelConfig {
        ModelConfig {
            lstm_units: 4,
            tcn_filters: 3,
            dilations: vec![1, 2],
            bilstm_units: 3,
            window: 5,
            dropout: 0.0,
            ..ModelConfig::new(variant, v)
        }
    }

    fn logits_of(cfg: &ModelConfig, params: &ModelParams<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        let bound = bind(&tape, params, &[]);
        let xv = tape.constant(x.clone());
        let y = forward(cfg, params, &bound, xv, false, &mut Rng::new(0, 0)).unwrap();
        let out = y.value().clone();
        out
    }

    /// Flat parameter list with noise, so zero-initialised biases do not
    /// leave rectifier inputs sitting exactly on the kink.
    fn jittered(params: &ModelParams<f64>, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = Rng::new(seed, 99);
        params
            .layers
            .iter()
            .flat_map(|l| l.tensors.clone())
            .map(|t| {
                let noise = random_tensor(t.shape(), &mut rng);
                Tensor::from_fn(t.shape(), |i| t.data()[i] + 0.1 * noise.data()[i])
            })
            .collect()
    }

    #[test]
    fn zero_lstm_gives_zero_output() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random_tensor(&[1, 4, 3], &mut Rng::new(1, 0)));
        let w = [
            tape.constant(Tensor::zeros(&[3, 8])),
            tape.constant(Tensor::zeros(&[2, 8])),
            tape.constant(Tensor::zeros(&[8])),
        ];
        let (y, st) = lstm_forward(x, &w, None).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
        assert!(st.c.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_shapes() {
        for variant in [Variant::Baseline1, Variant::Baseline2, Variant::TcnOnly, Variant::Hybrid] {
            let cfg = tiny(variant, 6);
            let params = build_model::<f64>(&cfg, &mut Rng::new(0, 0)).unwrap();
            let x = one_hot(&[vec![1, 3, 4], vec![1, 5]], 3, 6);
            assert_eq!(logits_of(&cfg, &params, &x).shape(), &[2, 3, 6]);
        }
        let cfg = tiny(Variant::BiLstmWin, 6);
        let params = build_model::<f64>(&cfg, &mut Rng::new(0, 0)).unwrap();
        let x = one_hot(&[vec![3, 4, 5, 3, 4]], 5, 6);
        assert_eq!(logits_of(&cfg, &params, &x).shape(), &[1, 6]);
        let bad = one_hot::<f64>(&[vec![3]], 1, 7);
        let tape = Tape::new();
        let bound = bind(&tape, &params, &[]);
        assert!(forward(&cfg, &params, &bound, tape.constant(bad), false, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn tcn_direct_definition() {
        // one channel, kernel 2, unit taps: each layer is y[t] = x[t] + x[t-d]
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 5, 1], vec![1., 2., 3., 4., 5.]).unwrap());
        let ones = || tape.constant(Tensor::full(&[2, 1, 1], 1.0));
        let zero = || tape.constant(Tensor::zeros(&[1]));
        let w = [ones(), zero(), ones(), zero()];
        let y = tcn_forward(x, &w, &[1, 2], 0.0, false, &mut Rng::new(0, 0)).unwrap();
        // layer 1: [1,3,5,7,9]; layer 2: [1,3,6,10,14]; plus residual
        assert_eq!(y.value().data(), &[2., 5., 9., 14., 19.]);
    }

    #[test]
    fn tcn_width_from_vocab() {
        let cfg = ModelConfig::new(Variant::TcnOnly, 9);
        let params = build_model::<f32>(&cfg, &mut Rng::new(0, 0)).unwrap();
        let tape = Tape::new();
        let bound = bind(&tape, &params, &[]);
        let x = tape.constant(one_hot(&[vec![1, 2, 3]], 3, 9));
        let y = tcn_forward(x, &bound.layers[0], &cfg.dilations, 0.5, false, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(y.shape(), vec![1, 3, 256]);
    }

    #[test]
    fn zeroed_tcn_leaves_lstm_path() {
        let cfg = tiny(Variant::Hybrid, 5);
        let mut params = build_model::<f64>(&cfg, &mut Rng::new(3, 0)).unwrap();
        let tcn = params.layer_index("tcn").unwrap();
        for t in &mut params.layers[tcn].tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = one_hot(&[vec![1, 3, 4, 2]], 4, 5);
        let logits = logits_of(&cfg, &params, &x);

        let tape = Tape::new();
        let bound = bind(&tape, &params, &[]);
        let xv = tape.constant(x);
        let (h1, _) = lstm_forward(xv, &bound.layers[0], None).unwrap();
        let (h2, _) = lstm_forward(h1, &bound.layers[1], None).unwrap();
        let head = &params.layer("head").unwrap().tensors;
        let w_lstm = Tensor::new(vec![4, 5], head[0].data()[..20].to_vec()).unwrap();
        let y = h2
            .linear(&tape.constant(w_lstm))
            .unwrap()
            .add_bias(&tape.constant(head[1].clone()))
            .unwrap();
        for (a, b) in y.value().data().iter().zip(logits.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_gradients() {
        for seed in 0..3 {
            let mut rng = Rng::new(seed, 0);
            let x = random_tensor(&[2, 3, 3], &mut rng);
            let w_ih = random_tensor(&[3, 8], &mut rng);
            let w_hh = random_tensor(&[2, 8], &mut rng);
            let b = random_tensor(&[8], &mut rng);
            assert_grads_close(&[x.clone(), w_ih, w_hh, b], |_, v| {
                let (y, st) = lstm_forward(v[0], &v[1..4], None).unwrap();
                y.sum().add(&st.c.sum()).unwrap()
            });
            let mut tcn = vec![x.clone()];
            for shape in [&[2, 3, 4][..], &[4], &[2, 4, 4], &[4], &[1, 3, 4], &[4]] {
                tcn.push(random_tensor(shape, &mut rng));
            }
            assert_grads_close(&tcn, |_, v| {
                tcn_forward(v[0], &v[1..], &[1, 2], 0.0, false, &mut Rng::new(0, 0))
                    .unwrap()
                    .tanh()
                    .sum()
            });
        }
    }

    #[test]
    fn whole_model_gradients() {
        let toks = vec![vec![1, 3, 4], vec![1, 4, 3]];
        let targets = [3, 4, 2, 4, 3, 2];
        for variant in [Variant::Baseline1, Variant::TcnOnly, Variant::Hybrid] {
            for seed in 0..3 {
                let cfg = tiny(variant, 5);
                let params = build_model::<f64>(&cfg, &mut Rng::new(seed, 0)).unwrap();
                let x = one_hot(&toks, 3, 5);
                let inputs = jittered(&params, seed);
                let shapes: Vec<usize> = params.layers.iter().map(|l| l.tensors.len()).collect();
                let cfg2 = cfg.clone();
                let params2 = params.clone();
                assert_grads_close(&inputs, move |tape, vars| {
                    let mut layers = Vec::new();
                    let mut at = 0;
                    for n in &shapes {
                        layers.push(vars[at..at + n].to_vec());
                        at += n;
                    }
                    let bound = Bound { layers };
                    let xv = tape.constant(x.clone());
                    let y = forward(&cfg2, &params2, &bound, xv, false, &mut Rng::new(0, 0)).unwrap();
                    y.cross_entropy(&targets, &[true; 6]).unwrap()
                });
            }
        }
    }

    #[test]
    fn bilstm_gradients() {
        let cfg = tiny(Variant::BiLstmWin, 4);
        let params = build_model::<f64>(&cfg, &mut Rng::new(9, 0)).unwrap();
        let x = one_hot(&[vec![3, 1, 2, 3, 3], vec![2, 2, 3, 1, 3]], 5, 4);
        let inputs = jittered(&params, 9);
        let shapes: Vec<usize> = params.layers.iter().map(|l| l.tensors.len()).collect();
        assert_grads_close(&inputs, move |tape, vars| {
            let mut layers = Vec::new();
            let mut at = 0;
            for n in &shapes {
                layers.push(vars[at..at + n].to_vec());
                at += n;
            }
            let bound = Bound { layers };
            let y = forward(&cfg, &params, &bound, tape.constant(x.clone()), false, &mut Rng::new(0, 0)).unwrap();
            y.cross_entropy(&[2, 3], &[true, true]).unwrap()
        });
    }

    #[test]
    fn autoregressive_models_are_causal() {
        for variant in [Variant::Baseline2, Variant::TcnOnly, Variant::Hybrid] {
            let cfg = tiny(variant, 5);
            let params = build_model::<f64>(&cfg, &mut Rng::new(4, 0)).unwrap();
            let tape = Tape::new();
            let bound = bind(&tape, &params, &[]);
            let steps = 6;
            let x = tape.param(random_tensor(&[1, steps, 5], &mut Rng::new(8, 0)));
            let y = forward(&cfg, &params, &bound, x, false, &mut Rng::new(0, 0)).unwrap();
            for t in 0..steps {
                tape.zero_grad();
                let out = y.select_time(t).unwrap().sum();
                tape.backward(out).unwrap();
                let g = x.grad().unwrap();
                for later in t + 1..steps {
                    assert!(g.data()[later * 5..(later + 1) * 5].iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
