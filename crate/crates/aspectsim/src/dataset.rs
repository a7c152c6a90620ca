//! Sample persistence, stratified k-fold splitting, and distribution
//! statistics.
//!
//! A dataset is a JSONL file of denormalized samples (pair ids, both
//! titles and abstracts, and the label array) plus a `.meta.json`
//! sidecar holding the label vocabulary and provenance, so training
//! jobs never need a corpus join.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RecordStore;
use crate::error::{Error, Result};
use crate::labels::{DocumentPair, LabelVocabulary, NONE_CLASS};

/// One training/evaluation sample: a document pair with its text
/// embedded. Field order here is the JSONL field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub seed_id: String,
    pub target_id: String,
    pub seed_title: String,
    pub seed_abstract: String,
    pub target_title: String,
    pub target_abstract: String,
    pub labels: Vec<String>,
}

impl Sample {
    /// Materialize a pair into a sample by joining against the record
    /// store. Labels come out in vocabulary class order.
    pub fn from_pair(
        pair: &DocumentPair,
        store: &RecordStore,
        vocab: &LabelVocabulary,
    ) -> Result<Sample> {
        let seed = store
            .get(&pair.seed_id)
            .ok_or_else(|| Error::UnknownPaper(pair.seed_id.clone()))?;
        let target = store
            .get(&pair.target_id)
            .ok_or_else(|| Error::UnknownPaper(pair.target_id.clone()))?;
        Ok(Sample {
            seed_id: pair.seed_id.clone(),
            target_id: pair.target_id.clone(),
            seed_title: seed.title.clone(),
            seed_abstract: seed.abstract_text.clone(),
            target_title: target.title.clone(),
            target_abstract: target.abstract_text.clone(),
            labels: vocab.sort_labels(&pair.labels),
        })
    }

    pub fn is_negative(&self) -> bool {
        self.labels.len() == 1 && self.labels[0] == NONE_CLASS
    }

    pub fn label_set(&self) -> BTreeSet<String> {
        self.labels.iter().cloned().collect()
    }
}

/// Where a dataset came from; stored in the sidecar, never in the
/// sample lines themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus: String,
    pub built_at: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub vocab: LabelVocabulary,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn from_pairs(
        pairs: &[DocumentPair],
        store: &RecordStore,
        vocab: &LabelVocabulary,
        provenance: Provenance,
    ) -> Result<SampleSet> {
        let samples = pairs
            .iter()
            .map(|p| Sample::from_pair(p, store, vocab))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet {
            samples,
            vocab: vocab.clone(),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn meta_path(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_path.with_file_name(format!("{}.meta.json", stem))
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    vocab: LabelVocabulary,
    provenance: Provenance,
}

/// Write samples as JSONL at `path` and vocabulary/provenance to the
/// `.meta.json` sidecar next to it.
pub fn save_dataset(set: &SampleSet, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for sample in &set.samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let meta = DatasetMeta {
        vocab: set.vocab.clone(),
        provenance: set.provenance.clone(),
    };
    let meta_file = meta_path(path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))
}

fn validate_sample(sample: &Sample, vocab: &LabelVocabulary) -> std::result::Result<(), String> {
    if sample.labels.is_empty() {
        return Err("empty labels".into());
    }
    for label in &sample.labels {
        if !vocab.contains(label) {
            return Err(format!("label {:?} not in vocabulary", label));
        }
    }
    if sample.labels.iter().any(|l| l == NONE_CLASS) && sample.labels.len() > 1 {
        return Err("None combined with other labels".into());
    }
    Ok(())
}

/// Load a dataset written by [`save_dataset`]. Any malformed line is
/// fatal, reported with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<SampleSet> {
    let meta_file = meta_path(path);
    let meta_text =
        std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;

    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::DatasetSchema {
            path: path.to_path_buf(),
            line: line_no,
            reason: e.to_string(),
        })?;
        validate_sample(&sample, &meta.vocab).map_err(|reason| Error::DatasetSchema {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        })?;
        samples.push(sample);
    }
    Ok(SampleSet {
        samples,
        vocab: meta.vocab,
        provenance: meta.provenance,
    })
}

/// Which fold each sample index belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<u32>,
}

impl FoldAssignment {
    /// (train indices, test indices) for one held-out fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignment.iter().enumerate() {
            if f as usize == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignment {
            sizes[f as usize] += 1;
        }
        sizes
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<FoldAssignment> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Average train/test sizes of a k-fold partition over n samples.
pub fn average_split(n: usize, k: usize) -> (f64, f64) {
    let test = n as f64 / k as f64;
    (n as f64 - test, test)
}

/// Iterative stratification over label sets: repeatedly take the label
/// with the fewest unassigned samples and deal those samples to the fold
/// with the greatest remaining need, measured over the sample's whole
/// label set (ties: greatest need for the current label, then greatest
/// remaining capacity, then lowest fold index). Folds carry hard integer
/// capacities differing by at most one, so the result is always a
/// near-equal partition. Sample order is shuffled once under the seed,
/// which is the only source of randomness.
pub fn stratified_folds(set: &SampleSet, k: usize, rng_seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("folds k={} must be at least 2", k)));
    }
    let n = set.samples.len();
    if k > n {
        return Err(Error::Config(format!(
            "folds k={} exceeds sample count {}",
            k, n
        )));
    }

    let classes = set.vocab.classes();
    let num_classes = classes.len();
    let label_ids: Vec<Vec<usize>> = set
        .samples
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .filter_map(|l| set.vocab.index_of(l))
                .collect()
        })
        .collect();

    let mut label_counts = vec![0usize; num_classes];
    for ids in &label_ids {
        for &l in ids {
            label_counts[l] += 1;
        }
    }
    for (l, &count) in label_counts.iter().enumerate() {
        if count > 0 && count < k {
            log::warn!(
                "class {:?} has only {} samples for {} folds; stratifying best-effort",
                classes[l],
                count,
                k
            );
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    order.shuffle(&mut rng);

    // remaining desired counts per (fold, label), and hard fold capacities
    let mut desire_label = vec![vec![0f64; num_classes]; k];
    for fold in &mut desire_label {
        for (l, d) in fold.iter_mut().enumerate() {
            *d = label_counts[l] as f64 / k as f64;
        }
    }
    let capacity: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
    let mut counts = vec![0usize; k];

    let mut remaining_per_label = label_counts.clone();
    let mut assigned = vec![u32::MAX; n];
    let mut unassigned: Vec<usize> = order;

    while !unassigned.is_empty() {
        // rarest label still present among unassigned samples
        let pick = (0..num_classes)
            .filter(|&l| remaining_per_label[l] > 0)
            .min_by(|&a, &b| {
                remaining_per_label[a]
                    .cmp(&remaining_per_label[b])
                    .then(a.cmp(&b))
            });
        let (samples_now, label): (Vec<usize>, Option<usize>) = match pick {
            Some(l) => (
                unassigned
                    .iter()
                    .copied()
                    .filter(|&i| label_ids[i].contains(&l))
                    .collect(),
                Some(l),
            ),
            // only label-less samples remain (cannot happen for valid
            // sets, but keeps the loop total)
            None => (unassigned.clone(), None),
        };

        for i in samples_now {
            let sample_need = |f: usize| -> f64 {
                label_ids[i].iter().map(|&l| desire_label[f][l]).sum()
            };
            let best = (0..k)
                .filter(|&f| counts[f] < capacity[f])
                .max_by(|&x, &y| {
                    let batch_need = match label {
                        Some(l) => desire_label[x][l].total_cmp(&desire_label[y][l]),
                        None => std::cmp::Ordering::Equal,
                    };
                    sample_need(x)
                        .total_cmp(&sample_need(y))
                        .then(batch_need)
                        .then((capacity[x] - counts[x]).cmp(&(capacity[y] - counts[y])))
                        .then(y.cmp(&x)) // prefer the lower fold index
                })
                .expect("capacities sum to the sample count");
            assigned[i] = best as u32;
            counts[best] += 1;
            for &l in &label_ids[i] {
                desire_label[best][l] -= 1.0;
                remaining_per_label[l] -= 1;
            }
        }
        unassigned.retain(|&i| assigned[i] == u32::MAX);
    }

    Ok(FoldAssignment {
        k,
        seed: rng_seed,
        assignment: assigned,
    })
}

/// Multi-label cardinality buckets used in reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCountHistogram {
    pub one: u64,
    pub two: u64,
    pub three_plus: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: u64,
    pub positives: u64,
    pub negatives: u64,
    pub per_class: Vec<(String, u64)>,
    pub histogram: LabelCountHistogram,
}

pub fn dataset_stats(set: &SampleSet) -> DatasetStats {
    let mut per_class: Vec<(String, u64)> = set
        .vocab
        .classes()
        .iter()
        .map(|c| (c.to_string(), 0u64))
        .collect();
    let mut histogram = LabelCountHistogram::default();
    let mut negatives = 0u64;
    for sample in &set.samples {
        if sample.is_negative() {
            negatives += 1;
        }
        match sample.labels.len() {
            0 => {}
            1 => histogram.one += 1,
            2 => histogram.two += 1,
            _ => histogram.three_plus += 1,
        }
        for label in &sample.labels {
            if let Some(ix) = set.vocab.index_of(label) {
                per_class[ix].1 += 1;
            }
        }
    }
    DatasetStats {
        total: set.samples.len() as u64,
        positives: set.samples.len() as u64 - negatives,
        negatives,
        per_class,
        histogram,
    }
}

impl DatasetStats {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        let io_err = |e: csv::Error| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e));
        w.write_record(["metric", "value"]).map_err(io_err)?;
        w.write_record(["total", &self.total.to_string()]).map_err(io_err)?;
        w.write_record(["positives", &self.positives.to_string()]).map_err(io_err)?;
        w.write_record(["negatives", &self.negatives.to_string()]).map_err(io_err)?;
        w.write_record(["labels_1", &self.histogram.one.to_string()]).map_err(io_err)?;
        w.write_record(["labels_2", &self.histogram.two.to_string()]).map_err(io_err)?;
        w.write_record(["labels_3_plus", &self.histogram.three_plus.to_string()])
            .map_err(io_err)?;
        for (class, count) in &self.per_class {
            w.write_record([&format!("class:{}", class), &count.to_string()])
                .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
