//! Subword skip-gram embeddings with negative sampling. Every word is
//! represented by its own vector plus hashed character n-gram vectors,
//! so out-of-vocabulary words still compose a usable representation.
//! Used to initialize transformer token embeddings and as the frozen
//! input layer of the recurrent baseline.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::tokenizer::words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordConfig {
    pub dim: usize,
    pub min_count: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub buckets: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Frequent-word downsampling threshold; zero disables it.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig {
            dim: 100,
            min_count: 2,
            ngram_min: 3,
            ngram_max: 6,
            buckets: 20_000,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            subsample: 1e-4,
            seed: 42,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Hashed bucket ids for the character n-grams of `<word>`.
fn ngram_buckets(word: &str, min: usize, max: usize, buckets: usize) -> Vec<u32> {
    let decorated: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for n in min..=max.min(decorated.len()) {
        for start in 0..=decorated.len() - n {
            let gram: String = decorated[start..start + n].iter().collect();
            out.push(fnv1a(gram.as_bytes()) % buckets as u32);
        }
    }
    out
}

fn sigmoid32(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SubwordConfig,
    vocab: Vec<String>,
}

pub struct SubwordEmbeddings {
    pub config: SubwordConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    word_vecs: Vec<f32>,
    ngram_vecs: Vec<f32>,
    word_ngrams: Vec<Vec<u32>>,
}

impl SubwordEmbeddings {
    /// Train on the given texts. Vocabulary keeps words seen at least
    /// `min_count` times, in descending frequency order.
    pub fn train(texts: &[&str], config: SubwordConfig) -> Result<Self> {
        if config.dim == 0 || config.buckets == 0 || config.window == 0 {
            return Err(Error::Model("embedding dimensions must be positive".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let sentences: Vec<Vec<String>> = texts.iter().map(|t| words(t)).collect();
        for sent in &sentences {
            for w in sent {
                *counts.entry(w.clone()).or_insert(0) += 1;
            }
        }
        let mut vocab: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c as usize >= config.min_count.max(1))
            .collect();
        vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if vocab.is_empty() {
            return Err(Error::Model(
                "no word passed the frequency threshold; nothing to train on".into(),
            ));
        }
        let index: HashMap<String, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        let freqs: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();
        let vocab: Vec<String> = vocab.into_iter().map(|(w, _)| w).collect();
        let total_count: u64 = freqs.iter().sum();

        let word_ngrams: Vec<Vec<u32>> = vocab
            .iter()
            .map(|w| ngram_buckets(w, config.ngram_min, config.ngram_max, config.buckets))
            .collect();

        // unigram^0.75 cumulative table for negative draws
        let mut cumulative: Vec<f64> = Vec::with_capacity(freqs.len());
        let mut acc = 0.0;
        for &c in &freqs {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }

        let dim = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let span = 1.0 / dim as f64;
        let mut word_vecs: Vec<f32> = (0..vocab.len() * dim)
            .map(|_| rng.gen_range(-span..span) as f32)
            .collect();
        let mut ngram_vecs: Vec<f32> = (0..config.buckets * dim)
            .map(|_| rng.gen_range(-span..span) as f32)
            .collect();
        let mut out_vecs: Vec<f32> = vec![0.0; vocab.len() * dim];

        let sentence_ids: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| s.iter().filter_map(|w| index.get(w).copied()).collect())
            .collect();
        let planned: u64 =
            sentence_ids.iter().map(|s| s.len() as u64).sum::<u64>() * config.epochs.max(1) as u64;
        let mut processed: u64 = 0;

        let mut hidden = vec![0.0f32; dim];
        let mut dhidden = vec![0.0f32; dim];

        for _epoch in 0..config.epochs.max(1) {
            for sent in &sentence_ids {
                let kept: Vec<usize> = sent
                    .iter()
                    .copied()
                    .filter(|&w| {
                        if config.subsample <= 0.0 {
                            return true;
                        }
                        let f = freqs[w] as f64 / total_count as f64;
                        let keep = ((f / config.subsample).sqrt() + 1.0) * config.subsample / f;
                        rng.gen::<f64>() < keep.min(1.0)
                    })
                    .collect();
                processed += sent.len() as u64;
                if kept.len() < 2 {
                    continue;
                }
                let alpha =
                    (config.lr * (1.0 - processed as f64 / planned as f64).max(1e-4)) as f32;
                for center in 0..kept.len() {
                    let b = rng.gen_range(1..=config.window);
                    let lo = center.saturating_sub(b);
                    let hi = (center + b).min(kept.len() - 1);
                    let w = kept[center];

                    // input rows: the word vector plus its n-gram vectors
                    let grams = &word_ngrams[w];
                    let n_inputs = (1 + grams.len()) as f32;
                    hidden.copy_from_slice(&word_vecs[w * dim..(w + 1) * dim]);
                    for &g in grams {
                        let row = &ngram_vecs[g as usize * dim..(g as usize + 1) * dim];
                        for (h, &r) in hidden.iter_mut().zip(row) {
                            *h += r;
                        }
                    }
                    for h in hidden.iter_mut() {
                        *h /= n_inputs;
                    }

                    for ctx_pos in lo..=hi {
                        if ctx_pos == center {
                            continue;
                        }
                        let target = kept[ctx_pos];
                        dhidden.iter_mut().for_each(|v| *v = 0.0);

                        for neg in 0..=config.negatives {
                            let (label, out_id) = if neg == 0 {
                                (1.0f32, target)
                            } else {
                                let mut pick = target;
                                for _ in 0..5 {
                                    let r = rng.gen::<f64>() * acc;
                                    pick = cumulative.partition_point(|&c| c < r);
                                    if pick != target {
                                        break;
                                    }
                                }
                                if pick == target {
                                    continue;
                                }
                                (0.0f32, pick)
                            };
                            let out_row = &mut out_vecs[out_id * dim..(out_id + 1) * dim];
                            let mut score = 0.0f32;
                            for (h, o) in hidden.iter().zip(out_row.iter()) {
                                score += h * o;
                            }
                            let g = (label - sigmoid32(score)) * alpha;
                            for ((dh, o), h) in
                                dhidden.iter_mut().zip(out_row.iter_mut()).zip(hidden.iter())
                            {
                                *dh += g * *o;
                                *o += g * *h;
                            }
                        }

                        let share = 1.0 / n_inputs;
                        let w_row = &mut word_vecs[w * dim..(w + 1) * dim];
                        for (v, dh) in w_row.iter_mut().zip(dhidden.iter()) {
                            *v += dh * share;
                        }
                        for &gid in grams {
                            let row =
                                &mut ngram_vecs[gid as usize * dim..(gid as usize + 1) * dim];
                            for (v, dh) in row.iter_mut().zip(dhidden.iter()) {
                                *v += dh * share;
                            }
                        }
                    }
                }
            }
        }

        Ok(SubwordEmbeddings {
            config,
            vocab,
            index,
            word_vecs,
            ngram_vecs,
            word_ngrams,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Composed vector: mean of the word vector (when in vocabulary)
    /// and its n-gram vectors. Unknown words fall back to n-grams
    /// alone; a word with no representable n-grams yields zeros.
    pub fn vector(&self, word: &str) -> Vec<f32> {
        let dim = self.config.dim;
        let mut acc = vec![0.0f32; dim];
        let mut n = 0usize;
        if let Some(&id) = self.index.get(word) {
            acc.copy_from_slice(&self.word_vecs[id * dim..(id + 1) * dim]);
            n = 1;
            for &g in &self.word_ngrams[id] {
                let row = &self.ngram_vecs[g as usize * dim..(g as usize + 1) * dim];
                for (a, &r) in acc.iter_mut().zip(row) {
                    *a += r;
                }
                n += 1;
            }
        } else {
            for g in ngram_buckets(
                word,
                self.config.ngram_min,
                self.config.ngram_max,
                self.config.buckets,
            ) {
                let row = &self.ngram_vecs[g as usize * dim..(g as usize + 1) * dim];
                for (a, &r) in acc.iter_mut().zip(row) {
                    *a += r;
                }
                n += 1;
            }
        }
        if n > 1 {
            let inv = 1.0 / n as f32;
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        acc
    }

    pub(crate) fn raw_parts(&self) -> (&SubwordConfig, &[String], &[f32], &[f32]) {
        (&self.config, &self.vocab, &self.word_vecs, &self.ngram_vecs)
    }

    pub(crate) fn from_raw_parts(
        config: SubwordConfig,
        vocab: Vec<String>,
        word_vecs: Vec<f32>,
        ngram_vecs: Vec<f32>,
    ) -> Result<Self> {
        if word_vecs.len() != vocab.len() * config.dim
            || ngram_vecs.len() != config.buckets * config.dim
        {
            return Err(Error::Model("embedding tensor sizes are inconsistent".into()));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let word_ngrams = vocab
            .iter()
            .map(|w| ngram_buckets(w, config.ngram_min, config.ngram_max, config.buckets))
            .collect();
        Ok(SubwordEmbeddings {
            config,
            vocab,
            index,
            word_vecs,
            ngram_vecs,
            word_ngrams,
        })
    }

    /// Binary layout: one JSON header line, then word vectors and
    /// n-gram vectors as little-endian f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for &v in self.word_vecs.iter().chain(self.ngram_vecs.iter()) {
            file.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader
            .read_line(&mut header_line)
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(header_line.trim_end())?;
        let dim = header.config.dim;
        let n_word = header.vocab.len() * dim;
        let n_gram = header.config.buckets * dim;
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() != (n_word + n_gram) * 4 {
            return Err(Error::Model(format!(
                "embedding file {} holds {} bytes of vectors, expected {}",
                path.display(),
                bytes.len(),
                (n_word + n_gram) * 4
            )));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let word_vecs = floats[..n_word].to_vec();
        let ngram_vecs = floats[n_word..].to_vec();
        let index: HashMap<String, usize> = header
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let word_ngrams = header
            .vocab
            .iter()
            .map(|w| {
                ngram_buckets(
                    w,
                    header.config.ngram_min,
                    header.config.ngram_max,
                    header.config.buckets,
                )
            })
            .collect();
        Ok(SubwordEmbeddings {
            config: header.config,
            vocab: header.vocab,
            index,
            word_vecs,
            ngram_vecs,
            word_ngrams,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
        dot / (na * nb).max(1e-12)
    }

    fn toy_config() -> SubwordConfig {
        SubwordConfig {
            dim: 24,
            min_count: 1,
            buckets: 2_000,
            window: 2,
            negatives: 5,
            epochs: 40,
            lr: 0.05,
            subsample: 0.0,
            seed: 9,
            ..SubwordConfig::default()
        }
    }

    fn toy_texts() -> Vec<&'static str> {
        let block = [
            "the cat chased the mouse",
            "the dog chased the mouse",
            "the cat ate the fish",
            "the dog ate the fish",
            "the cat slept on the mat",
            "the dog slept on the mat",
            "the car drove down the road",
            "the truck drove down the road",
            "the car parked near the road",
            "the truck parked near the road",
        ];
        block.iter().cycle().take(120).copied().collect()
    }

    #[test]
    fn words_in_shared_contexts_end_up_closer() {
        let emb = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        let cat = emb.vector("cat");
        let dog = emb.vector("dog");
        let car = emb.vector("car");
        let like = cosine(&cat, &dog);
        let unlike = cosine(&cat, &car);
        assert!(
            like > unlike,
            "cosine(cat,dog)={like} should beat cosine(cat,car)={unlike}"
        );
    }

    #[test]
    fn out_of_vocabulary_words_compose_from_ngrams() {
        let emb = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        assert!(!emb.contains("cats"));
        let oov = emb.vector("cats");
        assert!(oov.iter().any(|&v| v != 0.0));
        assert!(oov.iter().all(|v| v.is_finite()));
        let related = cosine(&oov, &emb.vector("cat"));
        let unrelated = cosine(&oov, &emb.vector("road"));
        assert!(
            related > unrelated,
            "shared n-grams should pull 'cats' toward 'cat' ({related} vs {unrelated})"
        );
    }

    #[test]
    fn empty_word_yields_a_finite_vector() {
        let emb = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        let v = emb.vector("");
        assert_eq!(v.len(), emb.dim());
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let a = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        let b = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        assert_eq!(a.word_vecs, b.word_vecs);
        assert_eq!(a.ngram_vecs, b.ngram_vecs);
    }

    #[test]
    fn save_load_round_trip_preserves_vectors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("vectors.bin");
        let emb = SubwordEmbeddings::train(&toy_texts(), toy_config()).unwrap();
        emb.save(&path).unwrap();
        let loaded = SubwordEmbeddings::load(&path).unwrap();
        assert_eq!(emb.vocab, loaded.vocab);
        assert_eq!(emb.word_vecs, loaded.word_vecs);
        assert_eq!(emb.ngram_vecs, loaded.ngram_vecs);
        assert_eq!(emb.vector("mouse"), loaded.vector("mouse"));
    }

    #[test]
    fn rejects_empty_corpora() {
        assert!(SubwordEmbeddings::train(&[], toy_config()).is_err());
        assert!(SubwordEmbeddings::train(&["", "  "], toy_config()).is_err());
    }

    #[test]
    fn ngram_buckets_cover_word_boundaries() {
        let grams = ngram_buckets("cat", 3, 6, 1000);
        // <ca, cat, at>, <cat, cat>, <cat> for lengths 3..=5
        assert_eq!(grams.len(), 3 + 2 + 1);
        assert!(grams.iter().all(|&g| g < 1000));
    }
}
