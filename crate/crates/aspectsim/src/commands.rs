//! Command implementations behind the binary: each takes a resolved
//! [`RunConfig`], performs one pipeline stage, writes its outputs plus a
//! manifest into the output directory, and returns a summary value.
//! Commands never mutate their inputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{write_manifest, RunConfig};
use crate::corpus::enrich::{MetadataClient, MetadataQuery};
use crate::corpus::{
    filter_and_dedup, load_records, parse_corpus_vec, save_records, FilterStats, ParseWarnings,
    RecordStore,
};
use crate::dataset::{
    dataset_stats, load_dataset, save_dataset, stratified_folds, DatasetStats, FoldAssignment,
    Provenance, Sample, SampleSet,
};
use crate::error::{Error, Result};
use crate::labels::{
    build_vocabulary, label_distribution, pairs_from_instances, resolve_instances,
    NormalizationConfig, ResolveStats,
};
use crate::metrics::{EvaluationReport, LabelSet, MacroScope};
use crate::models::embeddings::SubwordConfig;
use crate::models::io::{
    checkpoint_file, init_lstm_checkpoint, init_transformer_checkpoint, load_checkpoint,
    resolve_checkpoint, ModelKind, TransformerInit,
};
use crate::models::trainer::{
    predict, read_predictions, run_cross_validation, train, write_predictions,
    write_training_log, CvOptions, PredictionRecord, TrainedModel,
};
use crate::negatives::{negative_count, sample_negatives, NegativeConstraintIndex};

/// Dataset timestamp: `SOURCE_DATE_EPOCH` when set, else the newest
/// mtime among the corpus files, so identical inputs rebuild to
/// identical bytes.
fn build_timestamp(corpus: &Path) -> String {
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        return epoch;
    }
    let mut newest = 0u64;
    let mut stack = vec![corpus.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(meta) = path.metadata() {
                if let Ok(mtime) = meta.modified() {
                    if let Ok(secs) = mtime.duration_since(std::time::SystemTime::UNIX_EPOCH) {
                        newest = newest.max(secs.as_secs());
                    }
                }
            }
        }
    }
    newest.to_string()
}

#[derive(Debug, Serialize)]
pub struct BuildReport {
    pub papers_parsed: usize,
    pub papers_kept: usize,
    pub parse: ParseWarnings,
    pub filter: FilterStats,
    pub resolve: ResolveStats,
    pub classes: Vec<String>,
    pub instance_distribution: Vec<(String, u64)>,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub total_samples: usize,
}

/// Files a dataset build writes into its output directory.
const BUILD_OUTPUTS: &[&str] = &[
    "dataset.jsonl",
    "dataset.meta.json",
    "folds.json",
    "records.jsonl",
    "sampler_report.json",
    "stats.json",
    "stats.csv",
    "build_report.json",
    "manifest.json",
];

/// Corpus -> labeled dataset, fold assignment, and Table-1-style stats.
/// Any stage failing removes every partial output.
pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<BuildReport> {
    let corpus = cfg
        .corpus_path
        .as_deref()
        .ok_or_else(|| Error::Config("build-dataset requires --corpus".into()))?;
    let out = cfg.output_dir.clone();
    let created_dir = !out.exists();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let result = build_dataset_inner(cfg, corpus, &out);
    if result.is_err() {
        for name in BUILD_OUTPUTS {
            let _ = std::fs::remove_file(out.join(name));
        }
        if created_dir {
            let _ = std::fs::remove_dir(&out);
        }
    }
    result
}

fn build_dataset_inner(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<BuildReport> {
    let (parsed, parse_warnings) = parse_corpus_vec(corpus, cfg.corpus_format)?;
    let papers_parsed = parsed.len();
    let (records, filter_stats) = filter_and_dedup(parsed);
    let store = RecordStore::new(records);

    let normalization = match &cfg.normalization_path {
        Some(path) => NormalizationConfig::from_path(path)?,
        None => NormalizationConfig::default(),
    };
    let (instances, resolve_stats) = resolve_instances(&store, &normalization);
    let vocab = build_vocabulary(&instances, cfg.top_k)?;
    let distribution = label_distribution(&instances, &vocab);
    let positives = pairs_from_instances(&instances, &vocab);

    let edges = store.citation_edges();
    let index = NegativeConstraintIndex::build(store.records(), &positives, &edges);
    let wanted = negative_count(positives.len(), cfg.negative_ratio);
    let (negatives, sampler_report) = sample_negatives(store.records(), &index, wanted, cfg.seed)?;

    let mut pairs = positives;
    let positive_pairs = pairs.len();
    pairs.extend(negatives);

    let provenance = Provenance {
        corpus: corpus.display().to_string(),
        built_at: build_timestamp(corpus),
        config_hash: cfg.config_hash(),
    };
    let set = SampleSet::from_pairs(&pairs, &store, &vocab, provenance)?;

    save_dataset(&set, &out.join("dataset.jsonl"))?;
    let folds = stratified_folds(&set, cfg.folds, cfg.seed)?;
    folds.save_json(&out.join("folds.json"))?;
    save_records(store.records(), &out.join("records.jsonl"))?;
    sampler_report.write_json(&out.join("sampler_report.json"))?;
    let stats = dataset_stats(&set);
    stats.write_json(&out.join("stats.json"))?;
    stats.write_csv(&out.join("stats.csv"))?;

    let report = BuildReport {
        papers_parsed,
        papers_kept: store.records().len(),
        parse: parse_warnings,
        filter: filter_stats,
        resolve: resolve_stats,
        classes: set.vocab.classes().iter().map(|c| c.to_string()).collect(),
        instance_distribution: distribution,
        positive_pairs,
        negative_pairs: set.samples.len() - positive_pairs,
        total_samples: set.samples.len(),
    };
    let path = out.join("build_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&path, e))?;
    write_manifest(out, "build-dataset", cfg, &[("corpus", corpus)])?;
    Ok(report)
}

/// Distribution report for an existing dataset.
pub fn cmd_stats(cfg: &RunConfig, dataset: &Path) -> Result<DatasetStats> {
    let set = load_dataset(dataset)?;
    let stats = dataset_stats(&set);
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    stats.write_json(&out.join("stats.json"))?;
    stats.write_csv(&out.join("stats.csv"))?;
    write_manifest(out, "stats", cfg, &[("dataset", dataset)])?;
    Ok(stats)
}

/// Locate the configured checkpoint, constructing it from the dataset's
/// texts when `init` is set and no file exists yet.
fn ensure_checkpoint(cfg: &RunConfig, set: &SampleSet, init: bool) -> Result<PathBuf> {
    let name = &cfg.model.checkpoint_name;
    let path = checkpoint_file(&cfg.checkpoints_dir, name);
    if path.is_file() {
        return Ok(path);
    }
    if !init {
        return resolve_checkpoint(&cfg.checkpoints_dir, name);
    }
    std::fs::create_dir_all(&cfg.checkpoints_dir).map_err(|e| Error::io(&cfg.checkpoints_dir, e))?;
    let unique: BTreeSet<&str> = set
        .samples
        .iter()
        .flat_map(|s| {
            [
                s.seed_title.as_str(),
                s.seed_abstract.as_str(),
                s.target_title.as_str(),
                s.target_abstract.as_str(),
            ]
        })
        .collect();
    let texts: Vec<&str> = unique.into_iter().collect();
    match cfg.model.model_kind {
        ModelKind::Transformer => {
            let mut init_cfg = TransformerInit::base(30_000);
            init_cfg.seed = cfg.seed;
            init_transformer_checkpoint(&path, &texts, &init_cfg)?;
        }
        ModelKind::Lstm => {
            let sub = SubwordConfig {
                seed: cfg.seed,
                ..SubwordConfig::default()
            };
            init_lstm_checkpoint(&path, &texts, sub)?;
        }
    }
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub model_dir: PathBuf,
    pub samples: usize,
    pub steps: usize,
    pub final_loss: f64,
}

/// Train one model on the whole dataset and persist it.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, init_checkpoint: bool) -> Result<TrainSummary> {
    let set = load_dataset(dataset)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt_path = ensure_checkpoint(cfg, &set, init_checkpoint)?;
    let checkpoint = load_checkpoint(&ckpt_path)?;
    let (mut model, log) = train(&set.samples, &set.vocab, &cfg.model, checkpoint)?;
    let model_dir = out.join("model");
    model.save(&model_dir, &log)?;
    write_training_log(&out.join("training_log.jsonl"), &log)?;
    write_manifest(
        out,
        "train",
        cfg,
        &[("dataset", dataset), ("checkpoint", ckpt_path.as_path())],
    )?;
    Ok(TrainSummary {
        model_dir,
        samples: set.samples.len(),
        steps: log.len(),
        final_loss: log.last().map(|e| e.loss).unwrap_or(f64::NAN),
    })
}

pub struct CrossValidateOptions {
    pub folds_file: Option<PathBuf>,
    pub resume: bool,
    pub save_models: bool,
    pub init_checkpoint: bool,
    pub macro_scope: MacroScope,
    pub confusion_floor: u64,
}

impl Default for CrossValidateOptions {
    fn default() -> Self {
        CrossValidateOptions {
            folds_file: None,
            resume: false,
            save_models: false,
            init_checkpoint: false,
            macro_scope: MacroScope::default(),
            confusion_floor: 1,
        }
    }
}

/// k-fold protocol: train and predict per fold, then aggregate every
/// report section. Failed folds are skipped with a warning; the report
/// covers the folds that produced predictions.
pub fn cmd_cross_validate(
    cfg: &RunConfig,
    dataset: &Path,
    options: &CrossValidateOptions,
) -> Result<EvaluationReport> {
    let set = load_dataset(dataset)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let folds = match &options.folds_file {
        Some(path) => FoldAssignment::load_json(path)?,
        None => stratified_folds(&set, cfg.folds, cfg.seed)?,
    };
    folds.save_json(&out.join("folds.json"))?;

    let ckpt_path = ensure_checkpoint(cfg, &set, options.init_checkpoint)?;
    let cv = CvOptions {
        resume: options.resume,
        save_models: options.save_models,
        inject_failure: None,
    };
    let run = run_cross_validation(&set, &folds, &cfg.model, &ckpt_path, out, &cv)?;
    let fold_sets: Vec<(Vec<LabelSet>, Vec<LabelSet>)> = run
        .predictions
        .iter()
        .map(|(_, records)| {
            (
                records.iter().map(|r| r.gold_set()).collect(),
                records.iter().map(|r| r.predicted_set()).collect(),
            )
        })
        .collect();
    if fold_sets.is_empty() {
        return Err(Error::Evaluation("every fold failed; nothing to report".into()));
    }

    let report = EvaluationReport::from_folds(
        &cfg.model.checkpoint_name,
        &fold_sets,
        &set.vocab,
        options.macro_scope,
    )?;
    write_report(&report, out, options.confusion_floor)?;
    write_manifest(
        out,
        "cross-validate",
        cfg,
        &[("dataset", dataset), ("checkpoint", ckpt_path.as_path())],
    )?;
    Ok(report)
}

fn write_report(report: &EvaluationReport, out: &Path, confusion_floor: u64) -> Result<()> {
    report.write_json(&out.join("report.json"))?;
    let md_path = out.join("report.md");
    std::fs::write(&md_path, report.to_markdown(confusion_floor))
        .map_err(|e| Error::io(&md_path, e))?;
    report.write_csv_tables(&out.join("tables"))
}

/// Score persisted predictions (a cross-validation directory or a single
/// predictions file) against their gold labels.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    dataset: &Path,
    predictions: &Path,
    system: &str,
    macro_scope: MacroScope,
    confusion_floor: u64,
) -> Result<EvaluationReport> {
    let set = load_dataset(dataset)?;
    let mut fold_records: Vec<Vec<PredictionRecord>> = Vec::new();
    if predictions.is_dir() {
        for fold in 0.. {
            let path = predictions.join(format!("fold_{fold}")).join("predictions.jsonl");
            if !path.is_file() {
                break;
            }
            fold_records.push(read_predictions(&path)?);
        }
        if fold_records.is_empty() {
            return Err(Error::Evaluation(format!(
                "{}: no fold_*/predictions.jsonl files",
                predictions.display()
            )));
        }
    } else {
        fold_records.push(read_predictions(predictions)?);
    }

    let fold_sets: Vec<(Vec<LabelSet>, Vec<LabelSet>)> = fold_records
        .iter()
        .map(|records| {
            (
                records.iter().map(|r| r.gold_set()).collect(),
                records.iter().map(|r| r.predicted_set()).collect(),
            )
        })
        .collect();
    let report = EvaluationReport::from_folds(system, &fold_sets, &set.vocab, macro_scope)?;

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_report(&report, out, confusion_floor)?;
    write_manifest(
        out,
        "evaluate",
        cfg,
        &[("dataset", dataset), ("predictions", predictions)],
    )?;
    Ok(report)
}

/// One paper given inline: title and abstract, with an optional id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InlinePaper {
    #[serde(default)]
    pub id: Option<String>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InlinePair {
    pub seed: InlinePaper,
    pub target: InlinePaper,
}

/// Where the pairs to predict come from.
pub enum PairSource {
    /// JSON file holding one [`InlinePair`] or an array of them.
    Inline(PathBuf),
    /// Two paper references resolved against a records file and the
    /// metadata cache.
    Refs { seed: String, target: String },
}

pub struct PredictOptions {
    pub source: PairSource,
    /// Records file (`records.jsonl` from a dataset build) used to
    /// resolve references.
    pub records: Option<PathBuf>,
    /// Metadata cache directory consulted for references the records
    /// file cannot resolve.
    pub metadata_cache: Option<PathBuf>,
}

/// One prediction plus its None-vs-positive verdict.
#[derive(Debug, Serialize)]
pub struct PredictReport {
    pub seed_id: String,
    pub target_id: String,
    pub probabilities: Vec<(String, f64)>,
    pub predicted: Vec<String>,
    pub verdict: String,
}

fn verdict(predicted: &[String], none_class: &str) -> String {
    let has_none = predicted.iter().any(|c| c == none_class);
    let aspects: Vec<&str> = predicted
        .iter()
        .filter(|c| c.as_str() != none_class)
        .map(|c| c.as_str())
        .collect();
    match (has_none, aspects.is_empty()) {
        (true, true) => "none: no shared citation aspect predicted".to_string(),
        (false, false) => format!("positive: cited under {}", aspects.join(", ")),
        (true, false) => format!(
            "ambiguous: None scored alongside {}",
            aspects.join(", ")
        ),
        (false, true) => "undecided: no class reached the threshold".to_string(),
    }
}

fn resolve_reference(
    reference: &str,
    store: Option<&RecordStore>,
    client: Option<&MetadataClient>,
) -> Result<(String, String, String)> {
    if let Some(store) = store {
        if let Some(record) = store.resolve(reference) {
            return Ok((
                record.paper_id.clone(),
                record.title.clone(),
                record.abstract_text.clone(),
            ));
        }
    }
    if let Some(client) = client {
        let query = match reference.split_once(':') {
            Some((scheme, id)) => MetadataQuery::ById {
                scheme: scheme.to_string(),
                id: id.to_string(),
            },
            None => MetadataQuery::ByTitleYear {
                title: reference.to_string(),
                year: None,
            },
        };
        if let Some(response) = client.lookup(&query)? {
            let title = response.title.clone().or_else(|| match &query {
                MetadataQuery::ByTitleYear { title, .. } => Some(title.clone()),
                MetadataQuery::ById { .. } => None,
            });
            if let (Some(title), Some(abstract_text)) = (title, response.abstract_text) {
                let id = response
                    .resolved_paper_id
                    .unwrap_or_else(|| reference.to_string());
                return Ok((id, title, abstract_text));
            }
        }
    }
    Err(Error::UnknownPaper(reference.to_string()))
}

fn samples_from_source(options: &PredictOptions) -> Result<Vec<Sample>> {
    match &options.source {
        PairSource::Inline(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let pairs: Vec<InlinePair> = match serde_json::from_str::<InlinePair>(&text) {
                Ok(single) => vec![single],
                Err(_) => serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!(
                        "{}: expected a pair object or an array of pairs: {e}",
                        path.display()
                    ))
                })?,
            };
            Ok(pairs
                .into_iter()
                .enumerate()
                .map(|(i, pair)| Sample {
                    seed_id: pair.seed.id.unwrap_or_else(|| format!("inline-seed-{i}")),
                    target_id: pair.target.id.unwrap_or_else(|| format!("inline-target-{i}")),
                    seed_title: pair.seed.title,
                    seed_abstract: pair.seed.abstract_text,
                    target_title: pair.target.title,
                    target_abstract: pair.target.abstract_text,
                    labels: Vec::new(),
                })
                .collect())
        }
        PairSource::Refs { seed, target } => {
            let store = match &options.records {
                Some(path) => Some(RecordStore::new(load_records(path)?)),
                None => None,
            };
            let client = match &options.metadata_cache {
                Some(dir) => Some(MetadataClient::offline(Some(dir))?),
                None => None,
            };
            let (seed_id, seed_title, seed_abstract) =
                resolve_reference(seed, store.as_ref(), client.as_ref())?;
            let (target_id, target_title, target_abstract) =
                resolve_reference(target, store.as_ref(), client.as_ref())?;
            Ok(vec![Sample {
                seed_id,
                target_id,
                seed_title,
                seed_abstract,
                target_title,
                target_abstract,
                labels: Vec::new(),
            }])
        }
    }
}

/// Predict citation aspects for pairs that need not come from any
/// dataset. References resolve through the records file, then the
/// metadata cache; anything else is a "paper not found" error.
pub fn cmd_predict(
    cfg: &RunConfig,
    model_dir: &Path,
    options: &PredictOptions,
) -> Result<Vec<PredictReport>> {
    let model = TrainedModel::load(model_dir)?;
    let samples = samples_from_source(options)?;
    let records = predict(&model, &samples)?;
    let classes = model.vocab.classes();
    let none_class = model.vocab.none_class().to_string();

    let reports: Vec<PredictReport> = records
        .iter()
        .map(|r| PredictReport {
            seed_id: r.seed_id.clone(),
            target_id: r.target_id.clone(),
            probabilities: classes
                .iter()
                .zip(&r.probabilities)
                .map(|(c, p)| (c.to_string(), *p))
                .collect(),
            predicted: r.predicted.clone(),
            verdict: verdict(&r.predicted, &none_class),
        })
        .collect();

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_predictions(&out.join("predictions.jsonl"), &records)?;
    let path = out.join("predict_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&reports)?)
        .map_err(|e| Error::io(&path, e))?;
    write_manifest(out, "predict", cfg, &[("model", model_dir)])?;
    Ok(reports)
}
