//! Multi-label classification head: a single dense layer producing one
//! logit per class, trained with binary cross-entropy summed over
//! classes and averaged over the batch. Each class is an independent
//! Bernoulli, so a pair may receive any number of labels, including
//! none.

use ndarray::Array2;
use rand::Rng;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::labels::LabelVocabulary;

use super::nn::{real, Linear, ParamSlice, Real};

/// Dense projection from the encoder's pooled representation to one
/// logit per class.
#[derive(Debug, Clone)]
pub struct ClassificationHead<A> {
    pub linear: Linear<A>,
    pub n_classes: usize,
}

impl<A: Real> ClassificationHead<A> {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, n_classes: usize) -> Self {
        ClassificationHead {
            linear: Linear::new(rng, hidden, n_classes),
            n_classes,
        }
    }

    /// (batch, hidden) -> (batch, n_classes) logits.
    pub fn forward(&self, features: &Array2<A>) -> Array2<A> {
        self.linear.forward(features)
    }

    /// Accumulates weight gradients; returns d(features).
    pub fn backward(&mut self, features: &Array2<A>, dlogits: &Array2<A>) -> Array2<A> {
        self.linear.backward(features, dlogits)
    }

    pub fn params(&mut self) -> Vec<ParamSlice<'_, A>> {
        self.linear.params()
    }
}

pub fn sigmoid<A: Real>(logits: &Array2<A>) -> Array2<A> {
    logits.mapv(|z| A::one() / (A::one() + (-z).exp()))
}

/// Binary cross-entropy computed from logits (numerically stable for
/// any magnitude), summed over classes and averaged over the batch.
/// Returns the loss and d(logits) = (sigmoid(z) − y) / batch.
pub fn bce_with_logits<A: Real>(logits: &Array2<A>, targets: &Array2<A>) -> (f64, Array2<A>) {
    assert_eq!(logits.dim(), targets.dim(), "logit/target shape mismatch");
    let batch = logits.nrows().max(1);
    let inv_batch = real::<A>(1.0 / batch as f64);
    let mut loss = 0.0f64;
    let mut dlogits = logits.clone();
    for (d, &y) in dlogits.iter_mut().zip(targets.iter()) {
        let z = *d;
        // max(z, 0) − z·y + ln(1 + exp(−|z|))
        let zf = z.to_f64().unwrap_or(f64::NAN);
        let yf = y.to_f64().unwrap_or(f64::NAN);
        loss += zf.max(0.0) - zf * yf + (-zf.abs()).exp().ln_1p();
        let p = A::one() / (A::one() + (-z).exp());
        *d = (p - y) * inv_batch;
    }
    (loss / batch as f64, dlogits)
}

/// Multi-hot target matrix in vocabulary class order.
pub fn multi_hot<A: Real>(
    label_sets: &[&BTreeSet<String>],
    vocab: &LabelVocabulary,
) -> Result<Array2<A>> {
    let classes = vocab.classes();
    let mut targets = Array2::zeros((label_sets.len(), classes.len()));
    for (row, labels) in label_sets.iter().enumerate() {
        for label in labels.iter() {
            let col = vocab.index_of(label).ok_or_else(|| {
                Error::Model(format!("label {label:?} is not in the class vocabulary"))
            })?;
            targets[[row, col]] = A::one();
        }
    }
    Ok(targets)
}

/// Classes whose probability clears the decision threshold, in
/// vocabulary order. An empty prediction is a valid outcome.
pub fn apply_threshold<A: Real>(probs: &[A], classes: &[&str], threshold: f64) -> Vec<String> {
    assert_eq!(probs.len(), classes.len(), "probability/class length mismatch");
    let t = real::<A>(threshold);
    probs
        .iter()
        .zip(classes.iter())
        .filter(|(p, _)| **p >= t)
        .map(|(_, c)| c.to_string())
        .collect()
}
