//! Tape-free, one-token-at-a-time inference for the autoregressive variants.
//! Each step repeats the arithmetic of the full forward pass (dropout off) in
//! the same order, so logits agree with it.

use super::{LayerKind, ModelConfig, ModelParams, NnError, Variant};
use crate::tensor::{gemm_acc, sigmoid, Real};

enum LayerState<T> {
    Lstm { h: Vec<T>, c: Vec<T> },
    /// Inputs seen so far by each convolution, one `[B, Cin]` slab per step.
    Tcn { history: Vec<Vec<Vec<T>>> },
    Head,
}

/// Running state of a batch of independent sequences.
pub struct Stepper<'m, T: Real> {
    config: &'m ModelConfig,
    params: &'m ModelParams<T>,
    batch: usize,
    states: Vec<LayerState<T>>,
}

fn matvec_rows<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, rows: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cout];
    gemm_acc(x, w, &mut out, rows, cin, cout);
    if let Some(b) = bias {
        for row in out.chunks_mut(cout) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    out
}

impl<'m, T: Real> Stepper<'m, T> {
    pub fn new(config: &'m ModelConfig, params: &'m ModelParams<T>, batch: usize) -> Result<Self, NnError> {
        if config.variant == Variant::BiLstmWin {
            return Err(NnError::Config("windowed model has no incremental form".into()));
        }
        let states = params
            .layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Lstm { hidden, .. } => LayerState::Lstm {
                    h: vec![T::zero(); batch * hidden],
                    c: vec![T::zero(); batch * hidden],
                },
                LayerKind::Tcn { dilations, .. } => LayerState::Tcn {
                    history: vec![Vec::new(); dilations.len()],
                },
                _ => LayerState::Head,
            })
            .collect();
        Ok(Stepper {
            config,
            params,
            batch,
            states,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Feeds one token per sequence; returns `[B, V]` logits, row-major.
    pub fn step(&mut self, tokens: &[u32]) -> Result<Vec<T>, NnError> {
        let v = self.config.vocab_size;
        if tokens.len() != self.batch || tokens.iter().any(|&t| t as usize >= v) {
            return Err(NnError::Config(format!(
                "step needs {} tokens below {v}, got {tokens:?}",
                self.batch
            )));
        }
        let b = self.batch;
        let mut x = vec![T::zero(); b * v];
        for (r, &t) in tokens.iter().enumerate() {
            x[r * v + t as usize] = T::one();
        }
        let mut lstm_out: Option<Vec<T>> = None;
        let mut tcn_out: Option<Vec<T>> = None;
        let mut logits = None;
        for (layer, state) in self.params.layers.iter().zip(&mut self.states) {
            let w = &layer.tensors;
            match (&layer.kind, state) {
                (&LayerKind::Lstm { input, hidden }, LayerState::Lstm { h, c }) => {
                    let inp = lstm_out.as_deref().unwrap_or(&x);
                    let proj = matvec_rows(inp, w[0].data(), Some(w[2].data()), b, input, 4 * hidden);
                    let rec = matvec_rows(h, w[1].data(), None, b, hidden, 4 * hidden);
                    for r in 0..b {
                        let g = |k: usize, j: usize| proj[r * 4 * hidden + k * hidden + j] + rec[r * 4 * hidden + k * hidden + j];
                        for j in 0..hidden {
                            let ig = sigmoid(g(0, j));
                            let fg = sigmoid(g(1, j));
                            let cg = g(2, j).tanh();
                            let og = sigmoid(g(3, j));
                            let cell = fg * c[r * hidden + j] + ig * cg;
                            c[r * hidden + j] = cell;
                            h[r * hidden + j] = og * cell.tanh();
                        }
                    }
                    lstm_out = Some(h.clone());
                }
                (
                    LayerKind::Tcn {
                        input,
                        filters,
                        kernel,
                        dilations,
                    },
                    LayerState::Tcn { history },
                ) => {
                    let f = *filters;
                    let mut cur = x.clone();
                    let mut cin = *input;
                    for (i, &d) in dilations.iter().enumerate() {
                        history[i].push(cur);
                        let t = history[i].len() - 1;
                        let (wt, bias) = (w[2 * i].data(), w[2 * i + 1].data());
                        let mut out = vec![T::zero(); b * f];
                        for r in 0..b {
                            let o = &mut out[r * f..(r + 1) * f];
                            for (ov, &bv) in o.iter_mut().zip(bias) {
                                *ov += bv;
                            }
                            for k in 0..*kernel {
                                let Some(src) = t.checked_sub(k * d) else { break };
                                let xr = &history[i][src][r * cin..(r + 1) * cin];
                                gemm_acc(xr, &wt[k * cin * f..(k + 1) * cin * f], o, 1, cin, f);
                            }
                        }
                        for val in &mut out {
                            *val = val.max(T::zero());
                        }
                        cur = out;
                        cin = f;
                    }
                    let residual = if w.len() > 2 * dilations.len() {
                        let (mw, mb) = (w[2 * dilations.len()].data(), w[2 * dilations.len() + 1].data());
                        let mut out = vec![T::zero(); b * f];
                        for r in 0..b {
                            let o = &mut out[r * f..(r + 1) * f];
                            for (ov, &bv) in o.iter_mut().zip(mb) {
                                *ov += bv;
                            }
                            gemm_acc(&x[r * input..(r + 1) * input], mw, o, 1, *input, f);
                        }
                        out
                    } else {
                        x.clone()
                    };
                    for (a, r) in cur.iter_mut().zip(&residual) {
                        *a += *r;
                    }
                    tcn_out = Some(cur);
                }
                (&LayerKind::Dense { input, output }, _) => {
                    let features = match (lstm_out.take(), tcn_out.take()) {
                        (Some(l), Some(t)) => {
                            let (hl, ht) = (l.len() / b, t.len() / b);
                            let mut f = Vec::with_capacity(b * (hl + ht));
                            for r in 0..b {
                                f.extend_from_slice(&l[r * hl..(r + 1) * hl]);
                                f.extend_from_slice(&t[r * ht..(r + 1) * ht]);
                            }
                            f
                        }
                        (Some(l), None) => l,
                        (None, Some(t)) => t,
                        (None, None) => return Err(NnError::Config("head without features".into())),
                    };
                    logits = Some(matvec_rows(&features, w[0].data(), Some(w[1].data()), b, input, output));
                }
                _ => return Err(NnError::Config(format!("unsupported layer {}", layer.name))),
            }
        }
        logits.ok_or_else(|| NnError::Config("model has no head".into()))
    }
}
