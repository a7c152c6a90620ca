//! Aspect-based document similarity over research-paper corpora.
//!
//! The pipeline: parse a citation-annotated corpus ([`corpus`]), normalize
//! the section titles citations occur under into a label vocabulary
//! ([`labels`]), pair cited documents with those labels and add sampled
//! negatives, then train and evaluate sequence-pair classifiers that
//! predict, for a (seed, target) title+abstract pair, *which aspects* make
//! the two papers similar rather than a single similarity score.

extern crate blas_src;

pub mod commands;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod models;
pub mod negatives;
pub mod synthetic;

pub use error::{Error, Result};
