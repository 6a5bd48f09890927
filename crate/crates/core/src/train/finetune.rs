use serde::{Deserialize, Serialize};

use crate::nn::Model;
use crate::tensor::{Real, Rng};

use super::{make_examples, run_phase, Phase, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProtocolKind {
    /// Every layer trainable.
    Au,
    /// Only the output head trainable.
    Ll,
    /// Staged unfreezing. Entry `i` of each list belongs together; phases
    /// run from the last entry to the first.
    P1 {
        groups: Vec<Vec<usize>>,
        epochs: Vec<usize>,
        lrs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneProtocol {
    pub kind: ProtocolKind,
    /// Epochs for AU and LL.
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for AU and LL.
    pub lr: f64,
    pub clip_norm: f64,
    pub shuffle: bool,
}

impl FineTuneProtocol {
    fn with_kind(kind: ProtocolKind) -> Self {
        FineTuneProtocol {
            kind,
            epochs: 10,
            batch_size: 1,
            lr: 1e-3,
            clip_norm: 5.0,
            shuffle: true,
        }
    }

    pub fn all_unfrozen() -> Self {
        Self::with_kind(ProtocolKind::Au)
    }

    pub fn last_layer() -> Self {
        Self::with_kind(ProtocolKind::Ll)
    }

    /// Slots `[[1, 2], [4], [5]]` for `[2, 5, 10]` epochs at
    /// `[1e-6, 1e-5, 5e-4]`.
    pub fn staged() -> Self {
        Self::with_kind(ProtocolKind::P1 {
            groups: vec![vec![1, 2], vec![4], vec![5]],
            epochs: vec![2, 5, 10],
            lrs: vec![1e-6, 1e-5, 5e-4],
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProtocolKind::Au => "AU",
            ProtocolKind::Ll => "LL",
            ProtocolKind::P1 { .. } => "P1",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, TrainError> {
        match name.to_ascii_uppercase().as_str() {
            "AU" => Ok(Self::all_unfrozen()),
            "LL" => Ok(Self::last_layer()),
            "P1" => Ok(Self::staged()),
            _ => Err(TrainError::Protocol(format!("unknown protocol '{name}'"))),
        }
    }

    /// `(slots, epochs, lr)` per phase in execution order. Slot lists are
    /// left empty for AU/LL, which are resolved against the model instead.
    fn phases(&self) -> Result<Vec<(Vec<usize>, usize, f64)>, TrainError> {
        match &self.kind {
            ProtocolKind::Au | ProtocolKind::Ll => Ok(vec![(Vec::new(), self.epochs, self.lr)]),
            ProtocolKind::P1 { groups, epochs, lrs } => {
                if groups.len() != epochs.len() || groups.len() != lrs.len() {
                    return Err(TrainError::Protocol(format!(
                        "{} groups, {} epoch counts, {} learning rates",
                        groups.len(),
                        epochs.len(),
                        lrs.len()
                    )));
                }
                if groups.is_empty() || groups.iter().any(Vec::is_empty) {
                    return Err(TrainError::Protocol("empty group".into()));
                }
                if lrs.iter().any(|&lr| !(lr > 0.0)) {
                    return Err(TrainError::Protocol("learning rates must be positive".into()));
                }
                Ok((0..groups.len())
                    .rev()
                    .map(|i| (groups[i].clone(), epochs[i], lrs[i]))
                    .collect())
            }
        }
    }
}

/// What one phase did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseLog {
    /// 1-based slot numbers unfrozen in this phase (empty for AU/LL).
    pub slots: Vec<usize>,
    /// Parameter-carrying layers updated.
    pub layers: Vec<String>,
    pub epochs: usize,
    pub lr: f64,
    pub updates: usize,
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTuneLog {
    pub protocol: String,
    pub phases: Vec<PhaseLog>,
}

impl FineTuneLog {
    pub fn total_updates(&self) -> usize {
        self.phases.iter().map(|p| p.updates).sum()
    }
}

/// Continues training `model` on a small corpus under `protocol`.
pub fn fine_tune<T: Real>(
    model: &mut Model<T>,
    data: &[Vec<u32>],
    protocol: &FineTuneProtocol,
    rng: &mut Rng,
) -> Result<FineTuneLog, TrainError> {
    if protocol.batch_size == 0 {
        return Err(TrainError::Protocol("batch_size must be at least 1".into()));
    }
    let examples = make_examples(model, data);
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let n_layers = model.params.layers.len();
    let slots = model.config.slots();
    let mut log = FineTuneLog {
        protocol: protocol.name().to_string(),
        phases: Vec::new(),
    };
    let mut plan = Vec::new();
    for (group, epochs, lr) in protocol.phases()? {
        let mut trainable = vec![false; n_layers];
        match protocol.kind {
            ProtocolKind::Au => trainable.iter_mut().for_each(|t| *t = true),
            ProtocolKind::Ll => trainable[n_layers - 1] = true,
            ProtocolKind::P1 { .. } => {
                for &s in &group {
                    let slot = s
                        .checked_sub(1)
                        .and_then(|i| slots.get(i))
                        .ok_or_else(|| TrainError::Protocol(format!("model has no slot {s}")))?;
                    if let Some(l) = slot.layer {
                        trainable[l] = true;
                    }
                }
            }
        }
        plan.push((group, epochs, lr, trainable));
    }
    for (group, epochs, lr, trainable) in plan {
        let history = run_phase(
            model,
            &examples,
            &[],
            &Phase {
                epochs,
                batch_size: protocol.batch_size,
                lr,
                clip_norm: protocol.clip_norm,
                shuffle: protocol.shuffle,
                trainable: &trainable,
            },
            rng,
        )?;
        log.phases.push(PhaseLog {
            slots: group,
            layers: model
                .params
                .layers
                .iter()
                .zip(&trainable)
                .filter(|(_, &t)| t)
                .map(|(l, _)| l.name.clone())
                .collect(),
            epochs,
            lr,
            updates: history.updates,
            train_loss: history.train_loss,
        });
    }
    Ok(log)
}
