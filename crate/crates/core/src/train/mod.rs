//! Teacher-forced training, dataset splitting, fine-tuning protocols and
//! checkpoint files.

mod adam;
mod checkpoint;
mod finetune;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{bind, forward, Model, NnError, Variant};
use crate::tensor::{one_hot, Real, Rng, Tape, Tensor, TensorError};
use crate::vocab::{VocabError, EOS, PAD, SOS};

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use finetune::{fine_tune, FineTuneLog, FineTuneProtocol, PhaseLog, ProtocolKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("malformed protocol: {0}")]
    Protocol(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of the corpus used for training; the rest is the test split.
    pub split: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 64,
            split: 0.8,
            seed: 0,
            shuffle: true,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(TrainError::Config("split must lie strictly between 0 and 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0x5eed;

/// Deterministic shuffled partition into `round(N * fraction)` training
/// items and the remainder.
pub fn split_dataset<S: Clone>(corpus: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>), TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TrainError::Config(format!("split fraction {fraction}")));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    Rng::new(seed, SPLIT_STREAM).shuffle(&mut order);
    let n = (corpus.len() as f64 * fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n]), pick(&order[n..])))
}

/// One supervised example: model input tokens and the expected outputs.
/// Sequence models predict one target per input position; the windowed
/// model predicts a single target per window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
}

/// Frames token sequences for `model`. Sequence models get `<sos>`
/// prepended to the input and `<eos>` appended to the target. The windowed
/// model reads one stream of all sequences, each closed by `<eos>` and the
/// whole led by a window of padding.
pub fn make_examples<T: Real>(model: &Model<T>, seqs: &[Vec<u32>]) -> Vec<Example> {
    if model.config.variant.is_autoregressive() {
        return seqs
            .iter()
            .map(|s| {
                let mut input = vec![SOS];
                input.extend(s);
                let mut target = s.clone();
                target.push(EOS);
                Example { input, target }
            })
            .collect();
    }
    let w = model.config.window;
    let mut stream = vec![PAD; w];
    for s in seqs {
        stream.extend(s);
        stream.push(EOS);
    }
    crate::nn::window_starts(stream.len(), w, model.config.stride)
        .into_iter()
        .map(|st| Example {
            input: stream[st..st + w].to_vec(),
            target: vec![stream[st + w]],
        })
        .collect()
}

struct BatchTargets {
    targets: Vec<usize>,
    mask: Vec<bool>,
}

fn batch_inputs<T: Real>(batch: &[&Example], vocab: usize, windowed: bool) -> (Tensor<T>, BatchTargets) {
    let steps = batch.iter().map(|e| e.input.len()).max().unwrap_or(0);
    let inputs: Vec<Vec<u32>> = batch.iter().map(|e| e.input.clone()).collect();
    let x = one_hot(&inputs, steps, vocab);
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    if windowed {
        for e in batch {
            targets.push(e.target[0] as usize);
            mask.push(true);
        }
    } else {
        for e in batch {
            for t in 0..steps {
                match e.target.get(t) {
                    Some(&tok) => {
                        targets.push(tok as usize);
                        mask.push(tok != PAD);
                    }
                    None => {
                        targets.push(PAD as usize);
                        mask.push(false);
                    }
                }
            }
        }
    }
    (x, BatchTargets { targets, mask })
}

/// Loss, number of scored positions and number of correct argmax
/// predictions for one batch, with dropout off and no gradients.
fn evaluate_batch<T: Real>(model: &Model<T>, batch: &[&Example]) -> Result<(f64, usize, usize), TrainError> {
    let tape = Tape::new();
    let bound = bind(&tape, &model.params, &[]);
    let (x, bt) = batch_inputs::<T>(batch, model.config.vocab_size, !model.config.variant.is_autoregressive());
    let logits = forward(&model.config, &model.params, &bound, tape.constant(x), false, &mut Rng::new(0, 0))?;
    let count = bt.mask.iter().filter(|&&m| m).count();
    let loss = logits.cross_entropy(&bt.targets, &bt.mask)?.value().item().to_f64_lossy();
    let v = model.config.vocab_size;
    let values = logits.value();
    let mut correct = 0;
    for (r, row) in values.data().chunks(v).enumerate() {
        if !bt.mask[r] {
            continue;
        }
        let best = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        if best.0 == bt.targets[r] {
            correct += 1;
        }
    }
    Ok((loss, count, correct))
}

/// Token-weighted mean loss and next-token accuracy over `examples`.
pub fn evaluate<T: Real>(model: &Model<T>, examples: &[Example], batch_size: usize) -> Result<(f64, f64), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut count = 0;
    let mut correct = 0;
    let refs: Vec<&Example> = examples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (l, n, c) = evaluate_batch(model, chunk)?;
        total += l * n as f64;
        count += n;
        correct += c;
    }
    Ok((total / count as f64, correct as f64 / count as f64))
}

/// Next-token accuracy with dropout off; padding is never scored.
pub fn accuracy<T: Real>(model: &Model<T>, seqs: &[Vec<u32>]) -> Result<f64, TrainError> {
    Ok(evaluate(model, &make_examples(model, seqs), 64)?.1)
}

/// Per-epoch losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Number of optimizer updates performed.
    pub updates: usize,
}

/// Settings of one optimisation phase.
pub(crate) struct Phase<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub shuffle: bool,
    pub trainable: &'a [bool],
}

/// Runs `phase.epochs` passes over `train`, updating only trainable layers.
pub(crate) fn run_phase<T: Real>(
    model: &mut Model<T>,
    train: &[Example],
    test: &[Example],
    phase: &Phase<'_>,
    rng: &mut Rng,
) -> Result<History, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let sizes: Vec<usize> = model.params.layers.iter().flat_map(|l| &l.tensors).map(Tensor::numel).collect();
    let owner: Vec<usize> = model
        .params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| std::iter::repeat_n(i, l.tensors.len()))
        .collect();
    let any_trainable = phase.trainable.iter().any(|&t| t);
    let mut state = AdamState::<T>::new(&sizes, phase.lr);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..phase.epochs {
        if phase.shuffle {
            rng.shuffle(&mut order);
        }
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(phase.batch_size.max(1)) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let tape = Tape::new();
            let bound = bind(&tape, &model.params, phase.trainable);
            let (x, bt) = batch_inputs::<T>(&batch, model.config.vocab_size, !model.config.variant.is_autoregressive());
            let logits = forward(&model.config, &model.params, &bound, tape.constant(x), true, rng)?;
            let loss = logits.cross_entropy(&bt.targets, &bt.mask)?;
            let lv = loss.value().item().to_f64_lossy();
            if !lv.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            let n = bt.mask.iter().filter(|&&m| m).count();
            sum += lv * n as f64;
            count += n;
            history.updates += 1;
            if !any_trainable {
                continue;
            }
            tape.backward(loss)?;
            let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(sizes.len());
            for (li, vars) in bound.layers.iter().enumerate() {
                for v in vars {
                    grads.push(if phase.trainable.get(li).copied().unwrap_or(false) {
                        Some(v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
                    } else {
                        None
                    });
                }
            }
            let mut live: Vec<Tensor<T>> = grads.iter_mut().filter_map(Option::take).collect();
            clip_global_norm(&mut live, phase.clip_norm);
            let mut live = live.into_iter();
            let grads: Vec<Option<Tensor<T>>> = owner
                .iter()
                .map(|&li| {
                    if phase.trainable.get(li).copied().unwrap_or(false) {
                        live.next()
                    } else {
                        None
                    }
                })
                .collect();
            let grad_refs: Vec<Option<&Tensor<T>>> = grads.iter().map(Option::as_ref).collect();
            let mut params: Vec<&mut Tensor<T>> =
                model.params.layers.iter_mut().flat_map(|l| l.tensors.iter_mut()).collect();
            adam_step(&mut params, &grad_refs, &mut state)?;
        }
        let train_loss = sum / count.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        history.train_loss.push(train_loss);
        if !test.is_empty() {
            let (tl, _) = evaluate(model, test, phase.batch_size.max(16))?;
            if !tl.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            history.test_loss.push(tl);
        }
        debug!(
            "epoch {} train {:.4} test {:?}",
            epoch + 1,
            train_loss,
            history.test_loss.last()
        );
    }
    Ok(history)
}

/// Trains every layer on `train` for `config.epochs` epochs and reports
/// the test-split loss (dropout off) after each epoch.
pub fn train_epochs<T: Real>(
    model: &mut Model<T>,
    train: &[Vec<u32>],
    test: &[Vec<u32>],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<History, TrainError> {
    config.validate()?;
    let train_ex = make_examples(model, train);
    let test_ex = make_examples(model, test);
    if train_ex.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let trainable = vec![true; model.params.layers.len()];
    run_phase(
        model,
        &train_ex,
        &test_ex,
        &Phase {
            epochs: config.epochs,
            batch_size: config.batch_size,
            lr: config.lr,
            clip_norm: config.clip_norm,
            shuffle: config.shuffle,
            trainable: &trainable,
        },
        rng,
    )
}

/// Variant-aware description used in logs.
pub fn describe<T: Real>(model: &Model<T>) -> String {
    let kind = match model.config.variant {
        Variant::Baseline1 => "2-layer LSTM",
        Variant::Baseline2 => "3-layer LSTM",
        Variant::TcnOnly => "TCN",
        Variant::Hybrid => "TCN+LSTM",
        Variant::BiLstmWin => "windowed BiLSTM",
    };
    format!("{kind}, {} parameters", model.params.param_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn split_sizes_and_partition() {
        let corpus: Vec<u32> = (0..10).collect();
        let (a, b) = split_dataset(&corpus, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (c, d) = split_dataset(&corpus, 0.8, 3).unwrap();
        assert_eq!((a.clone(), b.clone()), (c, d));
        let mut all: Vec<u32> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, corpus);
        assert!(matches!(split_dataset::<u32>(&[], 0.8, 0), Err(TrainError::EmptyCorpus)));
    }

    fn toy_model(variant: Variant) -> Model<f64> {
        let cfg = ModelConfig {
            lstm_units: 8,
            tcn_filters: 6,
            dilations: vec![1, 2],
            bilstm_units: 4,
            window: 4,
            stride: 1,
            dropout: 0.1,
            ..ModelConfig::new(variant, 6)
        };
        Model::new(cfg).unwrap()
    }

    #[test]
    fn framing() {
        let m = toy_model(Variant::Hybrid);
        let ex = make_examples(&m, &[vec![3, 4]]);
        assert_eq!(ex[0].input, vec![SOS, 3, 4]);
        assert_eq!(ex[0].target, vec![3, 4, EOS]);
        let w = toy_model(Variant::BiLstmWin);
        let ex = make_examples(&w, &[vec![3, 4]]);
        // stream: 4 pads, 3, 4, eos
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].input, vec![PAD; 4]);
        assert_eq!(ex[0].target, vec![3]);
        assert_eq!(ex[2].input, vec![PAD, PAD, 3, 4]);
        assert_eq!(ex[2].target, vec![EOS]);
    }

    #[test]
    fn initial_loss_near_uniform() {
        let m = toy_model(Variant::Hybrid);
        let seqs = vec![vec![3, 4, 5, 3], vec![5, 5, 4]];
        let (loss, _) = evaluate(&m, &make_examples(&m, &seqs), 8).unwrap();
        let ln_v = (6f64).ln();
        assert!((loss - ln_v).abs() < 0.1 * ln_v, "{loss} vs {ln_v}");
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let seqs = vec![vec![3, 4, 5, 3], vec![5, 5, 4], vec![4, 3]];
        let config = TrainConfig {
            epochs: 15,
            batch_size: 2,
            lr: 1e-2,
            ..Default::default()
        };
        let run = || {
            let mut m = toy_model(Variant::Hybrid);
            let h = train_epochs(&mut m, &seqs, &seqs[..1], &config, &mut Rng::new(1, 0)).unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
        assert!(h1.train_loss.last().unwrap() < &h1.train_loss[0]);
        assert_eq!(h1.test_loss.len(), 15);
        assert_eq!(h1.updates, 15 * 2);
    }

    #[test]
    fn windowed_model_trains() {
        let seqs = vec![vec![3, 4, 5, 3, 4, 5]];
        let mut m = toy_model(Variant::BiLstmWin);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 4,
            lr: 1e-2,
            ..Default::default()
        };
        let h = train_epochs(&mut m, &seqs, &[], &config, &mut Rng::new(0, 0)).unwrap();
        assert!(h.train_loss.iter().all(|l| l.is_finite()));
        assert!(h.test_loss.is_empty());
    }

    #[test]
    fn bad_configs() {
        let mut m = toy_model(Variant::Hybrid);
        let bad = TrainConfig {
            split: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            train_epochs(&mut m, &[vec![3]], &[], &bad, &mut Rng::new(0, 0)),
            Err(TrainError::Config(_))
        ));
        let ok = TrainConfig::default();
        assert!(matches!(
            train_epochs(&mut m, &[], &[], &ok, &mut Rng::new(0, 0)),
            Err(TrainError::EmptyCorpus)
        ));
    }
}
