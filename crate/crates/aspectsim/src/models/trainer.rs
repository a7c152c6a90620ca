//! Training, prediction, and the cross-validation driver shared by
//! both model families. All randomness (initialization, shuffling,
//! dropout) flows from one seeded generator, so a configuration and a
//! dataset fully determine the loss trajectory.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dataset::{FoldAssignment, Sample, SampleSet};
use crate::error::{Error, Result};
use crate::labels::LabelVocabulary;

use super::embeddings::SubwordEmbeddings;
use super::encode::{encode_pair, encode_pair_words, EncodedPair, MAX_SEQUENCE_LEN};
use super::head::{apply_threshold, bce_with_logits, multi_hot, sigmoid, ClassificationHead};
use super::io::{
    collect_weights, load_checkpoint, restore_weights, Checkpoint, ModelKind,
};
use super::lstm::{BiLstmEncoder, LstmConfig, LstmForwardCache};
use super::nn::{clip_gradients, dropout_mask, Adam, LrSchedule, ParamSlice};
use super::tokenizer::Tokenizer;
use super::transformer::{EncodedBatch, ForwardCache, Transformer, TransformerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub checkpoint_name: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_epsilon: f64,
    pub schedule: LrSchedule,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub max_grad_norm: f64,
    pub dropout: f64,
    /// Recurrent baseline only: per-direction hidden width.
    pub hidden_size: usize,
    /// Recurrent baseline only: stacked layer count.
    pub num_layers: usize,
    pub classification_threshold: f64,
    pub max_len: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Defaults for a registry name: transformers fine-tune for 4
    /// epochs at 2e-5, the recurrent baseline trains for 10 at 1e-5.
    pub fn for_model(name: &str) -> Result<Self> {
        let kind = super::io::registry_kind(name).ok_or_else(|| {
            Error::Config(format!("unknown model name {name:?}"))
        })?;
        let mut config = ModelConfig {
            model_kind: kind,
            checkpoint_name: name.to_string(),
            epochs: 4,
            learning_rate: 2e-5,
            batch_size: 8,
            adam_epsilon: 1e-8,
            schedule: LrSchedule::LinearDecay,
            max_grad_norm: 1.0,
            dropout: 0.1,
            hidden_size: 100,
            num_layers: 2,
            classification_threshold: 0.5,
            max_len: MAX_SEQUENCE_LEN,
            rng_seed: 42,
        };
        if kind == ModelKind::Lstm {
            config.epochs = 10;
            config.learning_rate = 1e-5;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.classification_threshold > 0.0 && self.classification_threshold < 1.0) {
            return Err(Error::Config(format!(
                "classification threshold {} must lie strictly between 0 and 1",
                self.classification_threshold
            )));
        }
        if self.max_len < 8 || self.max_len > MAX_SEQUENCE_LEN {
            return Err(Error::Config(format!(
                "max_len {} must be within 8..={MAX_SEQUENCE_LEN}",
                self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} is outside [0, 1)",
                self.dropout
            )));
        }
        if self.model_kind == ModelKind::Lstm && (self.hidden_size == 0 || self.num_layers == 0) {
            return Err(Error::Config("recurrent sizes must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form, stored with every artifact.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub enum EncoderState {
    Transformer {
        tokenizer: Tokenizer,
        model: Transformer<f32>,
    },
    Lstm {
        embeddings: SubwordEmbeddings,
        encoder: BiLstmEncoder<f32>,
    },
}

impl EncoderState {
    fn feature_dim(&self) -> usize {
        match self {
            EncoderState::Transformer { model, .. } => model.config.hidden,
            EncoderState::Lstm { encoder, .. } => encoder.config.output_dim(),
        }
    }

    fn params(&mut self) -> Vec<ParamSlice<'_, f32>> {
        match self {
            EncoderState::Transformer { model, .. } => model.params(),
            EncoderState::Lstm { encoder, .. } => encoder.params(),
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            EncoderState::Transformer { .. } => ModelKind::Transformer,
            EncoderState::Lstm { .. } => ModelKind::Lstm,
        }
    }
}

pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocab: LabelVocabulary,
    pub encoder: EncoderState,
    pub head: ClassificationHead<f32>,
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedModel")
            .field("kind", &self.encoder.kind())
            .field("checkpoint", &self.config.checkpoint_name)
            .field("feature_dim", &self.encoder.feature_dim())
            .field("classes", &self.vocab.len())
            .finish()
    }
}

/// Pre-encoded training inputs; built once, indexed per batch.
enum EncodedInputs {
    Transformer(Vec<EncodedPair>),
    Lstm(Vec<Array2<f32>>),
}

enum EncoderCache {
    Transformer(ForwardCache<f32>),
    Lstm(LstmForwardCache<f32>),
}

fn build_encoder(
    checkpoint: Checkpoint,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EncoderState> {
    match checkpoint {
        Checkpoint::Transformer {
            config: mut t_config,
            tokenizer,
            weights,
        } => {
            t_config.dropout = config.dropout;
            let mut model: Transformer<f32> = Transformer::new(rng, t_config)?;
            restore_weights(&mut model.params(), &weights)?;
            Ok(EncoderState::Transformer { tokenizer, model })
        }
        Checkpoint::LstmEmbeddings(embeddings) => {
            let l_config = LstmConfig {
                input_dim: embeddings.dim(),
                hidden: config.hidden_size,
                layers: config.num_layers,
                dropout: config.dropout,
                attn_dim: config.hidden_size,
            };
            let encoder = BiLstmEncoder::new(rng, l_config)?;
            Ok(EncoderState::Lstm {
                embeddings,
                encoder,
            })
        }
    }
}

fn encode_all(
    samples: &[Sample],
    encoder: &EncoderState,
    max_len: usize,
) -> Result<EncodedInputs> {
    match encoder {
        EncoderState::Transformer { tokenizer, .. } => {
            let mut pairs = Vec::with_capacity(samples.len());
            for s in samples {
                pairs.push(encode_pair(
                    &s.seed_title,
                    &s.seed_abstract,
                    &s.target_title,
                    &s.target_abstract,
                    tokenizer,
                    max_len,
                )?);
            }
            Ok(EncodedInputs::Transformer(pairs))
        }
        EncoderState::Lstm { embeddings, .. } => {
            let dim = embeddings.dim();
            let mut inputs = Vec::with_capacity(samples.len());
            for s in samples {
                let tokens = encode_pair_words(
                    &s.seed_title,
                    &s.seed_abstract,
                    &s.target_title,
                    &s.target_abstract,
                    max_len,
                );
                let mut x = Array2::zeros((tokens.len(), dim));
                for (t, token) in tokens.iter().enumerate() {
                    let v = embeddings.vector(token);
                    let norm = v.iter().map(|a| a * a).sum::<f32>().sqrt();
                    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
                    for (dst, &src) in x.row_mut(t).iter_mut().zip(&v) {
                        *dst = src * scale;
                    }
                }
                inputs.push(x);
            }
            Ok(EncodedInputs::Lstm(inputs))
        }
    }
}

fn forward_batch(
    encoder: &EncoderState,
    inputs: &EncodedInputs,
    indices: &[usize],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array2<f32>, EncoderCache)> {
    match (encoder, inputs) {
        (EncoderState::Transformer { model, .. }, EncodedInputs::Transformer(pairs)) => {
            let selected: Vec<EncodedPair> =
                indices.iter().map(|&i| pairs[i].clone()).collect();
            let batch = EncodedBatch::from_pairs(&selected)?;
            let (pooled, cache) = model.forward(&batch, dropout_rng)?;
            Ok((pooled, EncoderCache::Transformer(cache)))
        }
        (EncoderState::Lstm { encoder, .. }, EncodedInputs::Lstm(seqs)) => {
            let selected: Vec<Array2<f32>> =
                indices.iter().map(|&i| seqs[i].clone()).collect();
            let (pooled, cache) = encoder.forward(&selected, dropout_rng)?;
            Ok((pooled, EncoderCache::Lstm(cache)))
        }
        _ => Err(Error::Model("encoder and encoded inputs disagree".into())),
    }
}

fn backward_batch(encoder: &mut EncoderState, dpooled: &Array2<f32>, cache: &EncoderCache) {
    match (encoder, cache) {
        (EncoderState::Transformer { model, .. }, EncoderCache::Transformer(c)) => {
            model.backward(dpooled, c);
        }
        (EncoderState::Lstm { encoder, .. }, EncoderCache::Lstm(c)) => {
            encoder.backward(dpooled, c);
        }
        _ => unreachable!("cache kind always matches the encoder"),
    }
}

/// Fine-tune or train a model over labelled pairs. Returns the model
/// and the per-step loss history.
pub fn train(
    samples: &[Sample],
    vocab: &LabelVocabulary,
    config: &ModelConfig,
    checkpoint: Checkpoint,
) -> Result<(TrainedModel, Vec<TrainLogEntry>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Training("cannot train on zero pairs".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        for label in &s.labels {
            if !vocab.contains(label) {
                return Err(Error::Training(format!(
                    "sample {i} carries label {label:?} outside the vocabulary"
                )));
            }
        }
    }
    if checkpoint.kind() != config.model_kind {
        return Err(Error::Config(
            "checkpoint kind does not match the configured model kind".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut encoder = build_encoder(checkpoint, config, &mut rng)?;
    let mut head: ClassificationHead<f32> =
        ClassificationHead::new(&mut rng, encoder.feature_dim(), vocab.len());
    let inputs = encode_all(samples, &encoder, config.max_len)?;
    let label_sets: Vec<BTreeSet<String>> = samples.iter().map(|s| s.label_set()).collect();

    let n = samples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (config.epochs * steps_per_epoch) as u64;
    let mut adam: Adam<f32> = Adam::new(
        config.learning_rate,
        config.adam_epsilon,
        config.schedule,
        total_steps,
    );

    let mut log = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let lr_now = adam.current_lr();
            let (feats, cache) = forward_batch(&encoder, &inputs, chunk, Some(&mut rng))?;
            let (feats_train, feat_mask) = if config.dropout > 0.0 {
                let mask = dropout_mask::<f32, _>(feats.dim(), config.dropout, &mut rng);
                (&feats * &mask, Some(mask))
            } else {
                (feats.clone(), None)
            };

            let sets: Vec<&BTreeSet<String>> = chunk.iter().map(|&i| &label_sets[i]).collect();
            let targets = multi_hot::<f32>(&sets, vocab)?;
            let logits = head.forward(&feats_train);
            let (loss, dlogits) = bce_with_logits(&logits, &targets);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at step {step} (epoch {epoch}, lr {lr_now:.3e}); \
                     inspect the data and learning rate"
                )));
            }

            let dfeats_train = head.backward(&feats_train, &dlogits);
            let dfeats = match &feat_mask {
                Some(mask) => &dfeats_train * mask,
                None => dfeats_train,
            };
            backward_batch(&mut encoder, &dfeats, &cache);

            let mut params = encoder.params();
            params.extend(head.params());
            clip_gradients(&mut params, config.max_grad_norm);
            adam.step(&mut params)?;

            step += 1;
            log.push(TrainLogEntry {
                step,
                epoch,
                loss,
                lr: lr_now,
            });
        }
    }

    Ok((
        TrainedModel {
            config: config.clone(),
            vocab: vocab.clone(),
            encoder,
            head,
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub seed_id: String,
    pub target_id: String,
    pub gold: Vec<String>,
    /// One probability per vocabulary class, in vocabulary order.
    pub probabilities: Vec<f64>,
    /// Classes at or above the threshold; may be empty.
    pub predicted: Vec<String>,
}

impl PredictionRecord {
    pub fn gold_set(&self) -> BTreeSet<String> {
        self.gold.iter().cloned().collect()
    }

    pub fn predicted_set(&self) -> BTreeSet<String> {
        self.predicted.iter().cloned().collect()
    }
}

/// Run inference over pairs; dropout is disabled.
pub fn predict(model: &TrainedModel, samples: &[Sample]) -> Result<Vec<PredictionRecord>> {
    for s in samples {
        for label in &s.labels {
            if !model.vocab.contains(label) {
                return Err(Error::Model(format!(
                    "label {label:?} is not in the model's vocabulary"
                )));
            }
        }
    }
    let inputs = encode_all(samples, &model.encoder, model.config.max_len)?;
    let classes = model.vocab.classes();
    let threshold = model.config.classification_threshold;

    let mut records = Vec::with_capacity(samples.len());
    let all: Vec<usize> = (0..samples.len()).collect();
    for chunk in all.chunks(model.config.batch_size.max(1)) {
        let (feats, _) = forward_batch(&model.encoder, &inputs, chunk, None)?;
        let probs = sigmoid(&model.head.forward(&feats));
        for (row, &i) in probs.rows().into_iter().zip(chunk) {
            let row: Vec<f32> = row.iter().copied().collect();
            if row.iter().any(|p| !p.is_finite()) {
                return Err(Error::Model(format!(
                    "non-finite probability for pair ({}, {})",
                    samples[i].seed_id, samples[i].target_id
                )));
            }
            let predicted = apply_threshold(&row, &classes, threshold);
            records.push(PredictionRecord {
                seed_id: samples[i].seed_id.clone(),
                target_id: samples[i].target_id.clone(),
                gold: samples[i].labels.clone(),
                probabilities: row.iter().map(|&p| f64::from(p)).collect(),
                predicted,
            });
        }
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct SavedModelConfig {
    model_config: ModelConfig,
    config_hash: String,
    transformer: Option<TransformerConfig>,
    lstm: Option<LstmConfig>,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    tensor_sizes: Vec<usize>,
}

impl TrainedModel {
    /// Artifact directory: config.json, vocab.json, weights.bin, the
    /// text representation (tokenizer or embeddings), and the training
    /// log.
    pub fn save(&mut self, dir: &Path, log: &[TrainLogEntry]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let saved = SavedModelConfig {
            model_config: self.config.clone(),
            config_hash: self.config.config_hash(),
            transformer: match &self.encoder {
                EncoderState::Transformer { model, .. } => Some(model.config.clone()),
                _ => None,
            },
            lstm: match &self.encoder {
                EncoderState::Lstm { encoder, .. } => Some(encoder.config.clone()),
                _ => None,
            },
        };
        let config_path = dir.join("config.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&saved)?)
            .map_err(|e| Error::io(&config_path, e))?;
        let vocab_path = dir.join("vocab.json");
        std::fs::write(&vocab_path, serde_json::to_string_pretty(&self.vocab)?)
            .map_err(|e| Error::io(&vocab_path, e))?;

        match &self.encoder {
            EncoderState::Transformer { tokenizer, .. } => {
                tokenizer.save(&dir.join("tokenizer.json"))?;
            }
            EncoderState::Lstm { embeddings, .. } => {
                embeddings.save(&dir.join("embeddings.bin"))?;
            }
        }

        let mut params = self.encoder.params();
        params.extend(self.head.params());
        let tensor_sizes: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
        let weights = collect_weights(&mut params);
        drop(params);
        let weights_path = dir.join("weights.bin");
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&weights_path).map_err(|e| Error::io(&weights_path, e))?,
        );
        serde_json::to_writer(&mut file, &WeightsHeader { tensor_sizes })?;
        file.write_all(b"\n").map_err(|e| Error::io(&weights_path, e))?;
        let mut buf = Vec::with_capacity(weights.len() * 4);
        for v in weights {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(&weights_path, e))?;
        drop(file);

        write_training_log(&dir.join("training_log.jsonl"), log)
    }

    pub fn load(dir: &Path) -> Result<TrainedModel> {
        let config_path = dir.join("config.json");
        let saved: SavedModelConfig = serde_json::from_str(
            &std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?,
        )?;
        let vocab_path = dir.join("vocab.json");
        let vocab: LabelVocabulary = serde_json::from_str(
            &std::fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?,
        )?;
        let config = saved.model_config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

        let mut encoder = match config.model_kind {
            ModelKind::Transformer => {
                let t_config = saved.transformer.ok_or_else(|| {
                    Error::Model("saved transformer model lacks its encoder configuration".into())
                })?;
                let tokenizer = Tokenizer::load(&dir.join("tokenizer.json"))?;
                let model: Transformer<f32> = Transformer::new(&mut rng, t_config)?;
                EncoderState::Transformer { tokenizer, model }
            }
            ModelKind::Lstm => {
                let l_config = saved.lstm.ok_or_else(|| {
                    Error::Model("saved recurrent model lacks its encoder configuration".into())
                })?;
                let embeddings = SubwordEmbeddings::load(&dir.join("embeddings.bin"))?;
                let encoder = BiLstmEncoder::new(&mut rng, l_config)?;
                EncoderState::Lstm {
                    embeddings,
                    encoder,
                }
            }
        };
        let mut head: ClassificationHead<f32> =
            ClassificationHead::new(&mut rng, encoder.feature_dim(), vocab.len());

        let weights_path = dir.join("weights.bin");
        let file = std::fs::File::open(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader
            .read_line(&mut header_line)
            .map_err(|e| Error::io(&weights_path, e))?;
        let header: WeightsHeader = serde_json::from_str(header_line.trim_end())?;
        let expected: usize = header.tensor_sizes.iter().sum();
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut reader, &mut bytes)
            .map_err(|e| Error::io(&weights_path, e))?;
        if bytes.len() != expected * 4 {
            return Err(Error::Model(format!(
                "{} holds {} bytes of weights, expected {}",
                weights_path.display(),
                bytes.len(),
                expected * 4
            )));
        }
        let weights: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut params = encoder.params();
        params.extend(head.params());
        restore_weights(&mut params, &weights)?;
        drop(params);

        Ok(TrainedModel {
            config,
            vocab,
            encoder,
            head,
        })
    }
}

pub fn write_training_log(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for entry in log {
        serde_json::to_writer(&mut file, entry)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Model(format!(
                "{} line {}: invalid prediction record: {e}",
                path.display(),
                i + 1
            ))
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldStatus {
    Trained,
    Resumed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_samples: usize,
    pub status: FoldStatus,
}

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    /// Keep folds whose prediction files already exist.
    pub resume: bool,
    /// Persist each fold's trained weights next to its predictions.
    pub save_models: bool,
    /// Testing hook: force this fold to fail.
    pub inject_failure: Option<usize>,
}

pub struct CrossValidationRun {
    pub outcomes: Vec<FoldOutcome>,
    pub predictions: Vec<(usize, Vec<PredictionRecord>)>,
}

impl CrossValidationRun {
    pub fn failed_folds(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.status, FoldStatus::Failed { .. }))
            .map(|o| o.fold)
            .collect()
    }
}

/// Train one model per fold on its training split and predict its test
/// split, persisting per-fold predictions and logs under `out_dir`.
/// A failing fold is recorded and the remaining folds still run.
pub fn run_cross_validation(
    set: &SampleSet,
    folds: &FoldAssignment,
    config: &ModelConfig,
    checkpoint_path: &Path,
    out_dir: &Path,
    options: &CvOptions,
) -> Result<CrossValidationRun> {
    if folds.assignment.len() != set.samples.len() {
        return Err(Error::Config(format!(
            "fold assignment covers {} samples, dataset has {}",
            folds.assignment.len(),
            set.samples.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut outcomes = Vec::with_capacity(folds.k);
    let mut predictions = Vec::new();
    for fold in 0..folds.k {
        let fold_dir = out_dir.join(format!("fold_{fold}"));
        let pred_path = fold_dir.join("predictions.jsonl");
        if options.resume && pred_path.is_file() {
            let records = read_predictions(&pred_path)?;
            outcomes.push(FoldOutcome {
                fold,
                test_samples: records.len(),
                status: FoldStatus::Resumed,
            });
            predictions.push((fold, records));
            continue;
        }

        let run_fold = || -> Result<Vec<PredictionRecord>> {
            if options.inject_failure == Some(fold) {
                return Err(Error::Training("injected fold failure".into()));
            }
            let (train_ix, test_ix) = folds.split(fold);
            let train_samples: Vec<Sample> =
                train_ix.iter().map(|&i| set.samples[i].clone()).collect();
            let test_samples: Vec<Sample> =
                test_ix.iter().map(|&i| set.samples[i].clone()).collect();
            let checkpoint = load_checkpoint(checkpoint_path)?;
            let (mut model, log) = train(&train_samples, &set.vocab, config, checkpoint)?;
            std::fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
            write_training_log(&fold_dir.join("training_log.jsonl"), &log)?;
            let records = predict(&model, &test_samples)?;
            write_predictions(&pred_path, &records)?;
            if options.save_models {
                model.save(&fold_dir.join("model"), &log)?;
            }
            Ok(records)
        };

        match run_fold() {
            Ok(records) => {
                outcomes.push(FoldOutcome {
                    fold,
                    test_samples: records.len(),
                    status: FoldStatus::Trained,
                });
                predictions.push((fold, records));
            }
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                outcomes.push(FoldOutcome {
                    fold,
                    test_samples: 0,
                    status: FoldStatus::Failed {
                        error: e.to_string(),
                    },
                });
            }
        }
    }

    let outcome_path = out_dir.join("fold_outcomes.json");
    std::fs::write(&outcome_path, serde_json::to_string_pretty(&outcomes)?)
        .map_err(|e| Error::io(&outcome_path, e))?;
    Ok(CrossValidationRun {
        outcomes,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{stratified_folds, Provenance};
    use crate::metrics::prf_micro;
    use crate::models::io::{checkpoint_file, init_lstm_checkpoint, init_transformer_checkpoint};
    use crate::models::io::TransformerInit;
    use crate::models::embeddings::SubwordConfig;
    use crate::models::transformer::TransformerConfig;
    use std::path::PathBuf;
    use tempfile::tempdir;

    const INTRO_WORDS: &str = "background motivation overview survey context history";
    const METHOD_WORDS: &str = "algorithm procedure architecture gradient optimization training";

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::from_positive_classes(vec![
            "introduction".to_string(),
            "methods".to_string(),
        ])
    }

    fn sample(i: usize, label: &str) -> Sample {
        let (topic, cue) = match label {
            "introduction" => ("survey", INTRO_WORDS),
            "methods" => ("training", METHOD_WORDS),
            _ => ("unrelated", "weather geology cooking music painting gardening"),
        };
        Sample {
            seed_id: format!("seed-{i}"),
            target_id: format!("target-{i}"),
            seed_title: format!("paper about {topic} number {i}"),
            seed_abstract: format!("this work studies {topic} subjects in depth {cue}"),
            target_title: format!("cited {topic} study {i}"),
            target_abstract: format!("{cue} and further notes on {topic}"),
            labels: vec![label.to_string()],
        }
    }

    fn toy_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = match i % 3 {
                    0 => "introduction",
                    1 => "methods",
                    _ => "None",
                };
                sample(i, label)
            })
            .collect()
    }

    fn corpus_texts(samples: &[Sample]) -> Vec<String> {
        samples
            .iter()
            .flat_map(|s| {
                vec![
                    format!("{} {}", s.seed_title, s.seed_abstract),
                    format!("{} {}", s.target_title, s.target_abstract),
                ]
            })
            .collect()
    }

    fn tiny_lstm_checkpoint(dir: &Path, samples: &[Sample]) -> PathBuf {
        let texts = corpus_texts(samples);
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let path = checkpoint_file(dir, "lstm-baseline");
        init_lstm_checkpoint(
            &path,
            &refs,
            SubwordConfig {
                dim: 16,
                min_count: 1,
                buckets: 500,
                epochs: 3,
                subsample: 0.0,
                ..SubwordConfig::default()
            },
        )
        .unwrap();
        path
    }

    fn tiny_transformer_checkpoint(dir: &Path, samples: &[Sample]) -> PathBuf {
        let texts = corpus_texts(samples);
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let path = checkpoint_file(dir, "bert-base");
        init_transformer_checkpoint(
            &path,
            &refs,
            &TransformerInit {
                config: TransformerConfig {
                    max_position: 64,
                    ..TransformerConfig::tiny(0)
                },
                vocab_budget: 256,
                embedding: SubwordConfig {
                    dim: 8,
                    min_count: 1,
                    buckets: 500,
                    epochs: 2,
                    subsample: 0.0,
                    ..SubwordConfig::default()
                },
                seed: 7,
            },
        )
        .unwrap();
        path
    }

    fn lstm_config(epochs: usize, lr: f64) -> ModelConfig {
        let mut config = ModelConfig::for_model("lstm-baseline").unwrap();
        config.epochs = epochs;
        config.learning_rate = lr;
        config.batch_size = 4;
        config.hidden_size = 16;
        config.dropout = 0.0;
        config.max_len = 64;
        config.schedule = LrSchedule::Constant;
        config
    }

    #[test]
    fn config_defaults_follow_the_protocol() {
        let t = ModelConfig::for_model("scibert").unwrap();
        assert_eq!(t.model_kind, ModelKind::Transformer);
        assert_eq!(t.epochs, 4);
        assert_eq!(t.learning_rate, 2e-5);
        assert_eq!(t.batch_size, 8);
        assert_eq!(t.adam_epsilon, 1e-8);
        assert_eq!(t.classification_threshold, 0.5);
        assert_eq!(t.max_len, 512);

        let l = ModelConfig::for_model("lstm-baseline").unwrap();
        assert_eq!(l.model_kind, ModelKind::Lstm);
        assert_eq!(l.epochs, 10);
        assert_eq!(l.learning_rate, 1e-5);
        assert_eq!(l.hidden_size, 100);
        assert_eq!(l.num_layers, 2);
        assert_eq!(l.dropout, 0.1);

        assert!(ModelConfig::for_model("made-up").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_thresholds() {
        let mut config = ModelConfig::for_model("bert-base").unwrap();
        config.classification_threshold = 0.0;
        assert!(config.validate().is_err());
        config.classification_threshold = 1.0;
        assert!(config.validate().is_err());
        config.classification_threshold = 0.5;
        config.epochs = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ModelConfig::for_model("bert-base").unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.learning_rate = 3e-5;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn training_rejects_zero_pairs_and_foreign_labels() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(8);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let config = lstm_config(1, 1e-3);

        let checkpoint = load_checkpoint(&ckpt).unwrap();
        let err = train(&[], &vocab(), &config, checkpoint).unwrap_err();
        assert!(err.to_string().contains("zero"));

        let mut bad = samples.clone();
        bad[0].labels = vec!["acknowledgements".to_string()];
        let checkpoint = load_checkpoint(&ckpt).unwrap();
        assert!(train(&bad, &vocab(), &config, checkpoint).is_err());
    }

    #[test]
    fn checkpoint_kind_must_match_config() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(8);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let mut config = lstm_config(1, 1e-3);
        config.model_kind = ModelKind::Transformer;
        let checkpoint = load_checkpoint(&ckpt).unwrap();
        assert!(train(&samples, &vocab(), &config, checkpoint).is_err());
    }

    #[test]
    fn same_seed_gives_identical_loss_trajectories() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(12);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let config = lstm_config(2, 1e-3);

        let (_, log_a) = train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();
        let (_, log_b) = train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();
        assert_eq!(log_a.len(), log_b.len());
        for (a, b) in log_a.iter().zip(&log_b) {
            assert!(
                (a.loss - b.loss).abs() < 1e-6,
                "step {}: {} vs {}",
                a.step,
                a.loss,
                b.loss
            );
        }

        let mut other = config.clone();
        other.rng_seed = 43;
        let (_, log_c) = train(&samples, &vocab(), &other, load_checkpoint(&ckpt).unwrap()).unwrap();
        assert!(log_a.iter().zip(&log_c).any(|(a, c)| a.loss != c.loss));
    }

    #[test]
    fn transformer_fine_tune_smoke() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(8);
        let ckpt = tiny_transformer_checkpoint(tmp.path(), &samples);
        let mut config = ModelConfig::for_model("bert-base").unwrap();
        config.epochs = 2;
        config.batch_size = 4;
        config.learning_rate = 1e-3;
        config.max_len = 64;

        let (model, log) = train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();
        assert_eq!(log.len(), 2 * 2);
        assert!(log.iter().all(|e| e.loss.is_finite()));
        // linear decay: step lrs decrease
        assert!(log.first().unwrap().lr > log.last().unwrap().lr);

        let records = predict(&model, &samples).unwrap();
        assert_eq!(records.len(), samples.len());
        for r in &records {
            assert_eq!(r.probabilities.len(), 4);
            assert!(r.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn lstm_overfits_a_small_fixture() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(12);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let config = lstm_config(80, 3e-3);

        let (model, log) = train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();
        let first = log.first().unwrap().loss;
        let last = log.last().unwrap().loss;
        assert!(last < first * 0.2, "loss {first} -> {last}");

        let records = predict(&model, &samples).unwrap();
        let gold: Vec<BTreeSet<String>> = records.iter().map(|r| r.gold_set()).collect();
        let pred: Vec<BTreeSet<String>> = records.iter().map(|r| r.predicted_set()).collect();
        let micro = prf_micro(&gold, &pred).unwrap();
        assert!(micro.f1 >= 0.9, "training micro-F1 {}", micro.f1);
    }

    #[test]
    fn nan_weights_abort_training_with_diagnostics() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(8);
        let texts = corpus_texts(&samples);
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let path = checkpoint_file(tmp.path(), "bert-base");
        init_transformer_checkpoint(
            &path,
            &refs,
            &TransformerInit {
                config: TransformerConfig {
                    max_position: 64,
                    ..TransformerConfig::tiny(0)
                },
                vocab_budget: 256,
                embedding: SubwordConfig {
                    dim: 8,
                    min_count: 1,
                    buckets: 500,
                    epochs: 1,
                    subsample: 0.0,
                    ..SubwordConfig::default()
                },
                seed: 7,
            },
        )
        .unwrap();
        let mut checkpoint = load_checkpoint(&path).unwrap();
        if let Checkpoint::Transformer { weights, .. } = &mut checkpoint {
            let last = weights.len() - 1;
            weights[last] = f32::NAN;
        }
        let mut config = ModelConfig::for_model("bert-base").unwrap();
        config.epochs = 1;
        config.batch_size = 4;
        config.max_len = 64;
        let err = train(&samples, &vocab(), &config, checkpoint).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn predictions_respect_threshold_and_vocab() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(12);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let config = lstm_config(5, 1e-2);
        let (model, _) = train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();

        let records = predict(&model, &samples).unwrap();
        let classes = model.vocab.classes();
        for r in &records {
            for (p, class) in r.probabilities.iter().zip(&classes) {
                let in_pred = r.predicted.iter().any(|c| c == class);
                assert_eq!(in_pred, *p >= 0.5, "class {class} p={p}");
            }
        }

        let mut foreign = samples[0].clone();
        foreign.labels = vec!["appendix".to_string()];
        assert!(predict(&model, &[foreign]).is_err());
    }

    #[test]
    fn saved_models_reload_and_agree() {
        let tmp = tempdir().unwrap();
        let samples = toy_samples(12);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &samples);
        let config = lstm_config(3, 1e-2);
        let (mut model, log) =
            train(&samples, &vocab(), &config, load_checkpoint(&ckpt).unwrap()).unwrap();
        let before = predict(&model, &samples).unwrap();

        let dir = tmp.path().join("model");
        model.save(&dir, &log).unwrap();
        let reloaded = TrainedModel::load(&dir).unwrap();
        let after = predict(&reloaded, &samples).unwrap();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.predicted, b.predicted);
            for (pa, pb) in a.probabilities.iter().zip(&b.probabilities) {
                assert!((pa - pb).abs() < 1e-9);
            }
        }
        assert!(dir.join("training_log.jsonl").is_file());
        assert!(dir.join("config.json").is_file());
        let saved: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap())
                .unwrap();
        assert_eq!(
            saved["config_hash"].as_str().unwrap(),
            config.config_hash()
        );
    }

    fn toy_set(n: usize) -> SampleSet {
        SampleSet {
            samples: toy_samples(n),
            vocab: vocab(),
            provenance: Provenance {
                corpus: "toy".to_string(),
                built_at: "fixed".to_string(),
                config_hash: "0".repeat(8),
            },
        }
    }

    #[test]
    fn cross_validation_partitions_and_resumes() {
        let tmp = tempdir().unwrap();
        let set = toy_set(24);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &set.samples);
        let folds = stratified_folds(&set, 4, 11).unwrap();
        let config = lstm_config(1, 1e-3);
        let out = tmp.path().join("cv");

        let run = run_cross_validation(&set, &folds, &config, &ckpt, &out, &CvOptions::default())
            .unwrap();
        assert_eq!(run.outcomes.len(), 4);
        assert!(run.failed_folds().is_empty());
        let mut covered: Vec<String> = run
            .predictions
            .iter()
            .flat_map(|(_, records)| records.iter().map(|r| format!("{}|{}", r.seed_id, r.target_id)))
            .collect();
        covered.sort();
        let mut expected: Vec<String> = set
            .samples
            .iter()
            .map(|s| format!("{}|{}", s.seed_id, s.target_id))
            .collect();
        expected.sort();
        assert_eq!(covered, expected);
        for fold in 0..4 {
            assert!(out.join(format!("fold_{fold}/predictions.jsonl")).is_file());
            assert!(out.join(format!("fold_{fold}/training_log.jsonl")).is_file());
        }
        assert!(out.join("fold_outcomes.json").is_file());

        let options = CvOptions {
            resume: true,
            ..CvOptions::default()
        };
        let resumed = run_cross_validation(&set, &folds, &config, &ckpt, &out, &options).unwrap();
        assert!(resumed
            .outcomes
            .iter()
            .all(|o| o.status == FoldStatus::Resumed));
        for ((_, a), (_, b)) in run.predictions.iter().zip(&resumed.predictions) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn a_failing_fold_does_not_stop_the_others() {
        let tmp = tempdir().unwrap();
        let set = toy_set(16);
        let ckpt = tiny_lstm_checkpoint(tmp.path(), &set.samples);
        let folds = stratified_folds(&set, 4, 5).unwrap();
        let config = lstm_config(1, 1e-3);
        let out = tmp.path().join("cv");
        let options = CvOptions {
            inject_failure: Some(1),
            ..CvOptions::default()
        };

        let run = run_cross_validation(&set, &folds, &config, &ckpt, &out, &options).unwrap();
        assert_eq!(run.failed_folds(), vec![1]);
        assert_eq!(run.predictions.len(), 3);
        assert!(!out.join("fold_1/predictions.jsonl").exists());
    }
}
