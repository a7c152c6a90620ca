//! Checkpoint files and weight serialization. A checkpoint holds
//! everything needed to start fine-tuning: for transformers the
//! encoder configuration, tokenizer, and parameters; for the recurrent
//! baseline the pretrained subword vectors. Checkpoints are built
//! deterministically from a text corpus, so a registry name plus a
//! corpus fully reproduces the file.
//!
//! Binary layout shared by checkpoints and trained weights: one JSON
//! header line, then the tensors as little-endian f32 in declaration
//! order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::embeddings::{SubwordConfig, SubwordEmbeddings};
use super::nn::{normal_init, sample_normal, Real};
use super::tokenizer::Tokenizer;
use super::transformer::{Transformer, TransformerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Lstm,
}

/// The six transformer variants the toolkit knows by name.
pub const TRANSFORMER_CHECKPOINTS: &[&str] = &[
    "bert-base",
    "scibert",
    "covid-bert",
    "roberta",
    "xlnet",
    "electra-discriminator",
];

pub const LSTM_BASELINE: &str = "lstm-baseline";

/// Model kind for a registry name; None if the name is unknown.
pub fn registry_kind(name: &str) -> Option<ModelKind> {
    if TRANSFORMER_CHECKPOINTS.contains(&name) {
        Some(ModelKind::Transformer)
    } else if name == LSTM_BASELINE {
        Some(ModelKind::Lstm)
    } else {
        None
    }
}

pub fn checkpoint_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ckpt"))
}

/// Registry name -> existing checkpoint file, or a fatal error before
/// any training starts.
pub fn resolve_checkpoint(dir: &Path, name: &str) -> Result<PathBuf> {
    if registry_kind(name).is_none() {
        return Err(Error::Config(format!(
            "unknown model name {name:?}; known: {}, {}",
            TRANSFORMER_CHECKPOINTS.join(", "),
            LSTM_BASELINE
        )));
    }
    let path = checkpoint_file(dir, name);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint for {name:?} not found at {}; build it first",
            path.display()
        )));
    }
    Ok(path)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CheckpointHeader {
    Transformer {
        config: TransformerConfig,
        tokens: Vec<String>,
        tensor_sizes: Vec<usize>,
    },
    LstmEmbeddings {
        config: SubwordConfig,
        vocab: Vec<String>,
    },
}

/// Starting point for training: a configured encoder.
pub enum Checkpoint {
    Transformer {
        config: TransformerConfig,
        tokenizer: Tokenizer,
        weights: Vec<f32>,
    },
    LstmEmbeddings(SubwordEmbeddings),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Transformer { .. } => ModelKind::Transformer,
            Checkpoint::LstmEmbeddings(_) => ModelKind::Lstm,
        }
    }
}

fn write_floats(file: &mut impl Write, floats: &[f32], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(floats.len() * 4);
    for &v in floats {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_floats(reader: &mut impl Read, expected: usize, path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Model(format!(
            "{} holds {} bytes of weights, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    match checkpoint {
        Checkpoint::Transformer {
            config,
            tokenizer,
            weights,
        } => {
            let header = CheckpointHeader::Transformer {
                config: config.clone(),
                tokens: tokenizer.tokens().to_vec(),
                tensor_sizes: vec![weights.len()],
            };
            serde_json::to_writer(&mut file, &header)?;
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            write_floats(&mut file, weights, path)?;
        }
        Checkpoint::LstmEmbeddings(emb) => {
            let (config, vocab, word_vecs, ngram_vecs) = emb.raw_parts();
            let header = CheckpointHeader::LstmEmbeddings {
                config: config.clone(),
                vocab: vocab.to_vec(),
            };
            serde_json::to_writer(&mut file, &header)?;
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            write_floats(&mut file, word_vecs, path)?;
            write_floats(&mut file, ngram_vecs, path)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader
        .read_line(&mut header_line)
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())?;
    match header {
        CheckpointHeader::Transformer {
            config,
            tokens,
            tensor_sizes,
        } => {
            let expected: usize = tensor_sizes.iter().sum();
            if expected != config.param_count() {
                return Err(Error::Model(format!(
                    "checkpoint {} declares {} weights, configuration needs {}",
                    path.display(),
                    expected,
                    config.param_count()
                )));
            }
            let weights = read_floats(&mut reader, expected, path)?;
            if tokens.len() != config.vocab_size {
                return Err(Error::Model(format!(
                    "checkpoint {} tokenizer has {} tokens, configuration says {}",
                    path.display(),
                    tokens.len(),
                    config.vocab_size
                )));
            }
            Ok(Checkpoint::Transformer {
                config,
                tokenizer: Tokenizer::from_tokens(tokens),
                weights,
            })
        }
        CheckpointHeader::LstmEmbeddings { config, vocab } => {
            let n_word = vocab.len() * config.dim;
            let n_gram = config.buckets * config.dim;
            let floats = read_floats(&mut reader, n_word + n_gram, path)?;
            let emb = SubwordEmbeddings::from_raw_parts(
                config,
                vocab,
                floats[..n_word].to_vec(),
                floats[n_word..].to_vec(),
            )?;
            Ok(Checkpoint::LstmEmbeddings(emb))
        }
    }
}

/// Flatten a model's parameters (in `params()` order) to f32.
pub fn collect_weights<A: Real>(params: &mut [super::nn::ParamSlice<'_, A>]) -> Vec<f32> {
    params
        .iter()
        .flat_map(|p| p.value.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)))
        .collect()
}

/// Write f32 weights back into a model's parameter slices.
pub fn restore_weights<A: Real>(
    params: &mut [super::nn::ParamSlice<'_, A>],
    weights: &[f32],
) -> Result<()> {
    let total: usize = params.iter().map(|p| p.value.len()).sum();
    if total != weights.len() {
        return Err(Error::Model(format!(
            "weight count {} does not match the model's {} parameters",
            weights.len(),
            total
        )));
    }
    let mut offset = 0;
    for p in params.iter_mut() {
        let n = p.value.len();
        for (dst, &src) in p.value.iter_mut().zip(&weights[offset..offset + n]) {
            *dst = A::from_f32(src).unwrap_or_else(A::zero);
        }
        offset += n;
    }
    Ok(())
}

/// Options for constructing a transformer checkpoint from a corpus.
#[derive(Debug, Clone)]
pub struct TransformerInit {
    pub config: TransformerConfig,
    pub vocab_budget: usize,
    pub embedding: SubwordConfig,
    pub seed: u64,
}

impl TransformerInit {
    pub fn base(vocab_budget: usize) -> Self {
        TransformerInit {
            config: TransformerConfig::base(0), // vocab filled from the tokenizer
            vocab_budget,
            embedding: SubwordConfig::default(),
            seed: 42,
        }
    }
}

/// Attention logit produced per unit of cosine similarity between
/// hidden states at initialization.
const INIT_ATTENTION_GAIN: f64 = 2.0;
/// Identity gain on the value projection at initialization.
const INIT_VALUE_GAIN: f64 = 1.0;
/// Identity gain on the attention output projection at initialization.
const INIT_OUTPUT_GAIN: f64 = 1.0;
/// Identity gain on the pooler at initialization.
const INIT_POOLER_GAIN: f64 = 1.0;
/// Row norm of position embeddings relative to unit token rows.
const INIT_POSITION_SCALE: f64 = 0.3;
/// Row norm of segment embeddings relative to unit token rows.
const INIT_SEGMENT_SCALE: f64 = 0.3;
/// Off-diagonal noise that keeps structured tensors full rank.
const INIT_STRUCTURE_NOISE: f64 = 0.01;

fn noisy_identity(w: &mut ndarray::Array2<f32>, gain: f64, rng: &mut ChaCha8Rng) {
    for ((r, c), v) in w.indexed_iter_mut() {
        let noise = sample_normal(rng) * INIT_STRUCTURE_NOISE;
        *v = (noise + if r == c { gain } else { 0.0 }) as f32;
    }
}

fn renorm_rows(table: &mut ndarray::Array2<f32>, target: f64) {
    for mut row in table.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            let s = target as f32 / norm;
            row.mapv_inplace(|v| v * s);
        }
    }
}

/// Shape freshly sampled encoder weights into a similarity-routing
/// start: each head's query and key projections share one matrix, so
/// pre-softmax scores are scaled cosines between hidden states and
/// tokens attend to repeated or related content; value and output
/// projections start near the identity, so attended content feeds the
/// residual stream; the pooler starts near the identity, so pooled
/// features track the first-position state. Embedding tables get fixed
/// row norms, keeping the geometry identical across model sizes.
fn shape_similarity_encoder(model: &mut Transformer<f32>, rng: &mut ChaCha8Rng) {
    let h = model.config.hidden;
    let dh = model.config.head_dim();
    let sigma = (INIT_ATTENTION_GAIN / (h as f64 * (dh as f64).sqrt())).sqrt();
    for layer in &mut model.layers {
        for head in 0..model.config.heads {
            let shared: ndarray::Array2<f32> = normal_init(rng, h, dh, sigma);
            for i in 0..h {
                for j in 0..dh {
                    let col = head * dh + j;
                    layer.wq.w[[i, col]] = shared[[i, j]];
                    layer.wk.w[[i, col]] = shared[[i, j]];
                }
            }
        }
        noisy_identity(&mut layer.wv.w, INIT_VALUE_GAIN, rng);
        noisy_identity(&mut layer.wo.w, INIT_OUTPUT_GAIN, rng);
    }
    noisy_identity(&mut model.pooler.w, INIT_POOLER_GAIN, rng);
    renorm_rows(&mut model.tok_emb, 1.0);
    renorm_rows(&mut model.pos_emb, INIT_POSITION_SCALE);
    renorm_rows(&mut model.seg_emb, INIT_SEGMENT_SCALE);
}

/// Deterministically construct a transformer checkpoint: wordpiece
/// vocabulary and subword vectors are trained on the corpus texts, the
/// token-embedding table starts from those vectors, attention starts
/// as similarity routing, and the remaining tensors use seeded random
/// initialization.
pub fn init_transformer_checkpoint(
    path: &Path,
    texts: &[&str],
    init: &TransformerInit,
) -> Result<()> {
    let tokenizer = Tokenizer::build(texts, init.vocab_budget);
    let mut config = init.config.clone();
    config.vocab_size = tokenizer.vocab_size();
    config.validate()?;

    let mut emb_config = init.embedding.clone();
    emb_config.dim = config.hidden;
    emb_config.seed = init.seed;
    let embeddings = SubwordEmbeddings::train(texts, emb_config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut model: Transformer<f32> = Transformer::new(&mut rng, config.clone())?;
    shape_similarity_encoder(&mut model, &mut rng);
    for (id, token) in tokenizer.tokens().iter().enumerate() {
        if matches!(token.as_str(), "[PAD]" | "[UNK]" | "[CLS]" | "[SEP]") {
            continue;
        }
        let word = token.strip_prefix("##").unwrap_or(token);
        let vec = embeddings.vector(word);
        let norm = vec.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for (dst, &src) in model.tok_emb.row_mut(id).iter_mut().zip(&vec) {
                *dst = src / norm;
            }
        }
    }

    let weights = collect_weights(&mut model.params());
    save_checkpoint(
        path,
        &Checkpoint::Transformer {
            config,
            tokenizer,
            weights,
        },
    )
}

/// Train subword vectors on the corpus texts and store them as the
/// recurrent baseline's checkpoint.
pub fn init_lstm_checkpoint(path: &Path, texts: &[&str], config: SubwordConfig) -> Result<()> {
    let embeddings = SubwordEmbeddings::train(texts, config)?;
    save_checkpoint(path, &Checkpoint::LstmEmbeddings(embeddings))
}
