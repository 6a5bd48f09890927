//! Temperature sampling and autoregressive generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{bind, forward, Model, NnError, Stepper};
use crate::tensor::{one_hot, Real, Rng, Tape};
use crate::vocab::{Vocab, EOS, PAD, SOS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    /// Cap on emitted characters, framing tokens excluded.
    pub max_len: usize,
    pub count: usize,
    pub seed: u64,
    pub sos: u32,
    pub eos: u32,
    pub pad: u32,
    /// Sequences advanced together.
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 0.7,
            max_len: 156,
            count: 30_000,
            seed: 0,
            sos: SOS,
            eos: EOS,
            pad: PAD,
            batch_size: 256,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(SampleError::Config("temperature must be positive".into()));
        }
        if self.count == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(SampleError::Config("count, batch_size and max_len must be positive".into()));
        }
        Ok(())
    }
}

/// `softmax(logits / temperature)` computed in double precision.
pub fn tempered_probs<T: Real>(logits: &[T], temperature: f64) -> Result<Vec<f64>, SampleError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SampleError::NonFiniteLogits);
    }
    if !(temperature > 0.0) {
        return Err(SampleError::Config("temperature must be positive".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Draws one index from the tempered categorical over `logits`.
pub fn sample_next<T: Real>(logits: &[T], temperature: f64, rng: &mut Rng) -> Result<u32, SampleError> {
    let probs = tempered_probs(logits, temperature)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i as u32);
        }
    }
    // rounding left `acc` just under one; fall back to the last live entry
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32)
}

struct Row {
    rng: Rng,
    ids: Vec<u32>,
    chars: usize,
    done: bool,
}

impl Row {
    /// Applies one sampled token, marking the row done at a framing token
    /// or the length cap.
    fn push(&mut self, tok: u32, vocab: &Vocab, config: &SamplerConfig) {
        if tok == config.eos || tok == config.pad || tok == config.sos {
            self.done = true;
            return;
        }
        let width = vocab.token(tok).map_or(0, |t| t.chars().count());
        if self.chars + width > config.max_len {
            self.done = true;
            return;
        }
        self.ids.push(tok);
        self.chars += width;
        if self.chars == config.max_len {
            self.done = true;
        }
    }
}

/// Generates `config.count` strings. Sample `i` draws from its own stream
/// `(seed, i)`, so results do not depend on `batch_size`.
pub fn generate<T: Real>(model: &Model<T>, vocab: &Vocab, config: &SamplerConfig) -> Result<Vec<String>, SampleError> {
    config.validate()?;
    if vocab.len() != model.config.vocab_size {
        return Err(SampleError::Config(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let v = model.config.vocab_size;
    let mut out = Vec::with_capacity(config.count);
    let mut start = 0;
    while start < config.count {
        let n = config.batch_size.min(config.count - start);
        let mut rows: Vec<Row> = (0..n)
            .map(|i| Row {
                rng: Rng::new(config.seed, (start + i) as u64),
                ids: Vec::new(),
                chars: 0,
                done: false,
            })
            .collect();
        if model.config.variant.is_autoregressive() {
            let mut stepper = Stepper::new(&model.config, &model.params, n)?;
            let mut feed = vec![config.sos; n];
            while rows.iter().any(|r| !r.done) {
                let logits = stepper.step(&feed)?;
                for (r, row) in rows.iter_mut().enumerate() {
                    if row.done {
                        feed[r] = config.pad;
                        continue;
                    }
                    let tok = sample_next(&logits[r * v..(r + 1) * v], config.temperature, &mut row.rng)?;
                    row.push(tok, vocab, config);
                    feed[r] = tok;
                }
            }
        } else {
            let w = model.config.window;
            let mut contexts = vec![vec![config.pad; w]; n];
            while rows.iter().any(|r| !r.done) {
                let tape = Tape::new();
                let bound = bind(&tape, &model.params, &[]);
                let x = tape.constant(one_hot::<T>(&contexts, w, v));
                let logits = forward(&model.config, &model.params, &bound, x, false, &mut Rng::new(0, 0))?;
                let logits = logits.value();
                for (r, row) in rows.iter_mut().enumerate() {
                    if row.done {
                        continue;
                    }
                    let tok = sample_next(&logits.data()[r * v..(r + 1) * v], config.temperature, &mut row.rng)?;
                    row.push(tok, vocab, config);
                    contexts[r].remove(0);
                    contexts[r].push(tok);
                }
            }
        }
        out.extend(rows.into_iter().map(|r| vocab.decode(&r.ids)));
        start += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, Variant};

    #[test]
    fn closed_form_two_way() {
        let p = tempered_probs(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        let mut rng = Rng::new(0, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_next(&[2f64.ln(), 0.0], 1.0, &mut rng).unwrap() == 0).count();
        let sigma = (n as f64 * (2.0 / 3.0) * (1.0 / 3.0)).sqrt();
        assert!((hits as f64 - n as f64 * 2.0 / 3.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn equal_logits_are_uniform() {
        let mut rng = Rng::new(2, 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_next(&[0.5f64; 4], 0.7, &mut rng).unwrap() as usize] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn probabilities_normalised_and_monotone() {
        let mut rng = Rng::new(3, 0);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..9).map(|_| rng.uniform_range(-20.0, 20.0)).collect();
            let best = (0..9).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
            let mut last = 0.0;
            for t in [10.0, 5.0, 2.0, 1.0, 0.7, 0.3, 0.1, 0.01] {
                let p = tempered_probs(&logits, t).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p[best] >= last);
                last = p[best];
            }
        }
    }

    #[test]
    fn low_temperature_picks_argmax() {
        let mut rng = Rng::new(1, 0);
        let logits = [0.3f32, 1.2, 1.1, -4.0];
        let hits = (0..1000).filter(|_| sample_next(&logits, 1e-3, &mut rng).unwrap() == 1).count();
        assert_eq!(hits, 1000);
    }

    #[test]
    fn non_finite_rejected() {
        let mut rng = Rng::new(1, 0);
        assert_eq!(sample_next(&[0.0, f64::NAN], 1.0, &mut rng), Err(SampleError::NonFiniteLogits));
        assert_eq!(
            sample_next(&[0.0, f64::INFINITY], 1.0, &mut rng),
            Err(SampleError::NonFiniteLogits)
        );
    }

    fn toy(variant: Variant) -> (Model<f32>, Vocab) {
        let vocab = Vocab::build(&["CC[.>-]O", "c1ccccc1N"]).unwrap();
        let cfg = ModelConfig {
            lstm_units: 8,
            tcn_filters: 4,
            dilations: vec![1, 2],
            bilstm_units: 4,
            window: 6,
            ..ModelConfig::new(variant, vocab.len())
        };
        (Model::new(cfg).unwrap(), vocab)
    }

    #[test]
    fn generation_is_deterministic_and_capped() {
        let (model, vocab) = toy(Variant::Hybrid);
        let config = SamplerConfig {
            temperature: 1.5,
            max_len: 12,
            count: 20,
            seed: 5,
            batch_size: 7,
            ..Default::default()
        };
        let a = generate(&model, &vocab, &config).unwrap();
        let b = generate(&model, &vocab, &SamplerConfig { batch_size: 20, ..config.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|s| s.chars().count() <= 12));
        assert!(a.iter().all(|s| !s.contains('<')));
        let c = generate(&model, &vocab, &SamplerConfig { seed: 6, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn windowed_generation_runs() {
        let (model, vocab) = toy(Variant::BiLstmWin);
        let config = SamplerConfig {
            max_len: 10,
            count: 3,
            ..Default::default()
        };
        let out = generate(&model, &vocab, &config).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|s| s.chars().count() <= 10));
    }

    #[test]
    fn config_checks() {
        let (model, vocab) = toy(Variant::Hybrid);
        let bad = SamplerConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate(&model, &vocab, &bad), Err(SampleError::Config(_))));
        let other = Vocab::build(&["N"]).unwrap();
        assert!(generate(&model, &other, &SamplerConfig { count: 1, ..Default::default() }).is_err());
    }
}
