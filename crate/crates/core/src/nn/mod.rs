//! Model configurations, parameter sets and the layer assemblies built from
//! them.

mod forward;
mod init;
mod step;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Real, Rng, Tensor, TensorError};

pub use forward::{bind, forward, lstm_forward, tcn_forward, Bound, LstmState};
pub use step::Stepper;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Two stacked LSTM layers.
    Baseline1,
    /// Three stacked LSTM layers.
    Baseline2,
    TcnOnly,
    /// LSTM stack and TCN block side by side, concatenated into the head.
    Hybrid,
    /// Two bidirectional LSTM layers over fixed windows, predicting the next
    /// token after each window.
    BiLstmWin,
}

impl Variant {
    pub fn is_autoregressive(self) -> bool {
        self != Variant::BiLstmWin
    }
}

impl std::str::FromStr for Variant {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "baseline1" => Variant::Baseline1,
            "baseline2" => Variant::Baseline2,
            "tcnonly" | "tcn" => Variant::TcnOnly,
            "hybrid" => Variant::Hybrid,
            "bilstmwin" | "bilstm" => Variant::BiLstmWin,
            _ => return Err(NnError::Config(format!("unknown variant '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub max_len: usize,
    pub lstm_units: usize,
    /// LSTM depth of the hybrid's recurrent branch.
    pub hybrid_lstm_layers: usize,
    pub tcn_filters: usize,
    pub tcn_kernel: usize,
    pub dilations: Vec<usize>,
    pub dropout: f64,
    pub bilstm_units: usize,
    pub bilstm_layers: usize,
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Hybrid,
            vocab_size: 0,
            max_len: 156,
            lstm_units: 512,
            hybrid_lstm_layers: 2,
            tcn_filters: 256,
            tcn_kernel: 2,
            dilations: vec![1, 2, 4, 8, 16, 32],
            dropout: 0.5,
            bilstm_units: 128,
            bilstm_layers: 2,
            window: 80,
            stride: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            variant,
            vocab_size,
            ..Default::default()
        }
    }

    /// Small widths for desk-scale runs: 64 LSTM units, 32 filters,
    /// dilations 1, 2, 4.
    pub fn reduced(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            lstm_units: 64,
            tcn_filters: 32,
            dilations: vec![1, 2, 4],
            bilstm_units: 32,
            ..Self::new(variant, vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        match self.variant {
            Variant::Baseline1 | Variant::Baseline2 if self.lstm_units == 0 => bad("lstm_units must be positive"),
            Variant::Hybrid if self.lstm_units == 0 || self.hybrid_lstm_layers == 0 => {
                bad("hybrid needs at least one LSTM layer of positive width")
            }
            Variant::BiLstmWin if self.bilstm_units == 0 || self.bilstm_layers == 0 => {
                bad("bilstm needs at least one layer of positive width")
            }
            Variant::BiLstmWin if self.window == 0 || self.stride == 0 => bad("window and stride must be positive"),
            _ => Ok(()),
        }?;
        if matches!(self.variant, Variant::TcnOnly | Variant::Hybrid) {
            if self.tcn_filters == 0 || self.tcn_kernel == 0 {
                return bad("tcn_filters and tcn_kernel must be positive");
            }
            if self.dilations.is_empty() || self.dilations.contains(&0) {
                return bad("dilations must be a non-empty list of positive integers");
            }
        }
        Ok(())
    }

    /// Layer specs in build order.
    pub fn layer_specs(&self) -> Vec<(String, LayerKind)> {
        let v = self.vocab_size;
        let lstm_stack = |n: usize| -> Vec<(String, LayerKind)> {
            (0..n)
                .map(|i| {
                    let input = if i == 0 { v } else { self.lstm_units };
                    (
                        format!("lstm{}", i + 1),
                        LayerKind::Lstm {
                            input,
                            hidden: self.lstm_units,
                        },
                    )
                })
                .collect()
        };
        let tcn = || {
            (
                "tcn".to_string(),
                LayerKind::Tcn {
                    input: v,
                    filters: self.tcn_filters,
                    kernel: self.tcn_kernel,
                    dilations: self.dilations.clone(),
                },
            )
        };
        let head = |input: usize| ("head".to_string(), LayerKind::Dense { input, output: v });
        let mut specs = match self.variant {
            Variant::Baseline1 => lstm_stack(2),
            Variant::Baseline2 => lstm_stack(3),
            Variant::TcnOnly => vec![tcn()],
            Variant::Hybrid => {
                let mut s = lstm_stack(self.hybrid_lstm_layers);
                s.push(tcn());
                s
            }
            Variant::BiLstmWin => (0..self.bilstm_layers)
                .map(|i| {
                    let input = if i == 0 { v } else { 2 * self.bilstm_units };
                    (
                        format!("bilstm{}", i + 1),
                        LayerKind::BiLstm {
                            input,
                            hidden: self.bilstm_units,
                        },
                    )
                })
                .collect(),
        };
        let head_in = match self.variant {
            Variant::Baseline1 | Variant::Baseline2 => self.lstm_units,
            Variant::TcnOnly => self.tcn_filters,
            Variant::Hybrid => self.lstm_units + self.tcn_filters,
            Variant::BiLstmWin => 2 * self.bilstm_units,
        };
        specs.push(head(head_in));
        specs
    }

    /// Numbered layer slots used by staged unfreezing. Slots follow build
    /// order; the hybrid has a parameterless merge slot between the TCN
    /// block and the head.
    pub fn slots(&self) -> Vec<Slot> {
        let specs = self.layer_specs();
        let mut slots = Vec::new();
        for (i, (name, _)) in specs.iter().enumerate() {
            if self.variant == Variant::Hybrid && name == "head" {
                slots.push(Slot {
                    name: "merge".into(),
                    layer: None,
                });
            }
            slots.push(Slot {
                name: name.clone(),
                layer: Some(i),
            });
        }
        slots
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.dilations, self.tcn_kernel)
    }
}

/// One entry of [`ModelConfig::slots`]; `layer` indexes
/// [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Lstm {
        input: usize,
        hidden: usize,
    },
    BiLstm {
        input: usize,
        hidden: usize,
    },
    Tcn {
        input: usize,
        filters: usize,
        kernel: usize,
        dilations: Vec<usize>,
    },
    Dense {
        input: usize,
        output: usize,
    },
}

impl LayerKind {
    /// Names and shapes of the layer's tensors, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let lstm = |prefix: &str, input: usize, hidden: usize| {
            vec![
                (format!("{prefix}w_ih"), vec![input, 4 * hidden]),
                (format!("{prefix}w_hh"), vec![hidden, 4 * hidden]),
                (format!("{prefix}bias"), vec![4 * hidden]),
            ]
        };
        match self {
            &LayerKind::Lstm { input, hidden } => lstm("", input, hidden),
            &LayerKind::BiLstm { input, hidden } => {
                let mut v = lstm("fwd.", input, hidden);
                v.extend(lstm("bwd.", input, hidden));
                v
            }
            LayerKind::Tcn {
                input,
                filters,
                kernel,
                dilations,
            } => {
                let mut v = Vec::new();
                let mut cin = *input;
                for i in 0..dilations.len() {
                    v.push((format!("conv{}.w", i + 1), vec![*kernel, cin, *filters]));
                    v.push((format!("conv{}.b", i + 1), vec![*filters]));
                    cin = *filters;
                }
                if input != filters {
                    v.push(("match.w".into(), vec![1, *input, *filters]));
                    v.push(("match.b".into(), vec![*filters]));
                }
                v
            }
            &LayerKind::Dense { input, output } => {
                vec![("w".into(), vec![input, output]), ("b".into(), vec![output])]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub tensors: Vec<Tensor<T>>,
}

/// Named layers in build order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// `(layer.tensor, tensor)` pairs in storage order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            for ((name, _), t) in l.kind.tensor_shapes().iter().zip(&l.tensors) {
                out.push((format!("{}.{name}", l.name), t));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.tensors)
            .map(Tensor::numel)
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind.clone(),
                    tensors: l.tensors.iter().map(Tensor::cast).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds the layer table of `config` around flat named tensors.
    pub fn from_named(config: &ModelConfig, mut named: Vec<(String, Tensor<T>)>) -> Result<Self, NnError> {
        config.validate()?;
        named.reverse();
        let mut layers = Vec::new();
        for (lname, kind) in config.layer_specs() {
            let mut tensors = Vec::new();
            for (tname, shape) in kind.tensor_shapes() {
                let want = format!("{lname}.{tname}");
                let (name, t) = named
                    .pop()
                    .ok_or_else(|| NnError::Config(format!("missing tensor {want}")))?;
                if name != want || t.shape() != shape.as_slice() {
                    return Err(NnError::Config(format!(
                        "expected {want} {shape:?}, found {name} {:?}",
                        t.shape()
                    )));
                }
                tensors.push(t);
            }
            layers.push(Layer {
                name: lname,
                kind,
                tensors,
            });
        }
        if let Some((name, _)) = named.pop() {
            return Err(NnError::Config(format!("unexpected tensor {name}")));
        }
        Ok(ModelParams { layers })
    }
}

/// Fresh parameters for `config`; equal seeds give bit-identical results.
pub fn build_model<T: Real>(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams<T>, NnError> {
    config.validate()?;
    let layers = config
        .layer_specs()
        .into_iter()
        .map(|(name, kind)| {
            let tensors = init::layer_tensors(&kind, rng);
            Layer { name, kind, tensors }
        })
        .collect();
    Ok(ModelParams { layers })
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    /// Builds with a generator seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        let mut rng = Rng::new(config.seed, 0);
        let params = build_model(&config, &mut rng)?;
        Ok(Model { config, params })
    }
}

/// Number of input positions one output of a causal stack can see.
pub fn receptive_field(dilations: &[usize], kernel: usize) -> usize {
    1 + kernel.saturating_sub(1) * dilations.iter().sum::<usize>()
}

/// Ratio of the receptive field of `n` dilated layers (kernel 2,
/// dilations 1, 2, 4, …) to that of `n` undilated ones: `2^n / (n + 1)`.
pub fn rf_advantage(n: u32) -> Ratio<u64> {
    Ratio::new(1u64 << n, u64::from(n) + 1)
}

/// Number of `(window, next token)` pairs in a stream of `len` tokens.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len <= window || stride == 0 {
        0
    } else {
        (len - window - 1) / stride + 1
    }
}

/// Start offsets of every window that has a following target token.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    (0..window_count(len, window, stride)).map(|i| i * stride).collect()
}
