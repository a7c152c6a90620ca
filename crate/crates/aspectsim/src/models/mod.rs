//! Sequence-pair classifiers over paper title+abstract pairs.
//!
//! The module bundles everything needed to go from a dataset of labelled
//! pairs to per-pair label probabilities: a wordpiece tokenizer, pair
//! encoding, shared neural-network primitives, a transformer encoder and a
//! BiLSTM baseline, subword embeddings, the multi-label head, and the
//! training / prediction drivers.

pub mod embeddings;
pub mod encode;
pub mod head;
pub mod io;
pub mod lstm;
pub mod nn;
pub mod tokenizer;
pub mod trainer;
pub mod transformer;
