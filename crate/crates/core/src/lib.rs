//! Generative language modelling of condensed-graph-of-reaction strings.
//!
//! * [`chemgraph`]: grammar, validity, reaction centers, fingerprints.
//! * [`tensor`]: dense tensors with a reverse-mode tape.
//! * [`nn`]: LSTM stacks, the dilated causal convolution block, the hybrid
//!   model and the windowed BiLSTM classifier.
//! * [`train`]: Adam, dataset splits, fine-tuning protocols, checkpoints.
//! * [`sample`]: temperature sampling and autoregressive generation.
//! * [`eval`]: validity, uniqueness, reaction-center and diversity metrics.

pub mod chemgraph;
pub mod tensor;
pub mod vocab;
pub mod nn;
pub mod train;
pub mod sample;
pub mod eval;
