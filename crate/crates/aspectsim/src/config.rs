//! Layered run configuration and output-directory manifests.
//!
//! Precedence: built-in defaults, then a TOML config file, then
//! `ASPECTSIM_*` environment variables, then command-line flags.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::corpus::CorpusFormat;
use crate::error::{Error, Result};
use crate::models::trainer::ModelConfig;

/// Everything a run needs; serialized verbatim into output manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Corpus archive directory (required by build-dataset).
    pub corpus_path: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    /// Variant-table file; the built-in table when absent.
    pub normalization_path: Option<PathBuf>,
    /// Negatives per positive pair.
    pub negative_ratio: f64,
    /// Positive label classes kept before `Other` absorbs the rest.
    pub top_k: usize,
    pub seed: u64,
    pub folds: usize,
    pub output_dir: PathBuf,
    /// Directory holding model checkpoints.
    pub checkpoints_dir: PathBuf,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: None,
            corpus_format: CorpusFormat::AclStyle,
            normalization_path: None,
            negative_ratio: 0.5,
            top_k: 9,
            seed: 42,
            folds: 4,
            output_dir: PathBuf::from("runs/latest"),
            checkpoints_dir: PathBuf::from("checkpoints"),
            model: ModelConfig::for_model("bert-base").expect("registry default"),
        }
    }
}

/// Optional settings gathered from flags or environment; `None` means
/// "not given here, fall through to the next layer".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Corpus archive directory.
    #[arg(long, global = true, env = "ASPECTSIM_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Corpus archive layout.
    #[arg(long, global = true, env = "ASPECTSIM_FORMAT", value_enum)]
    pub format: Option<CorpusFormat>,
    /// Section-title variant table file.
    #[arg(long, global = true, env = "ASPECTSIM_NORMALIZATION")]
    pub normalization: Option<PathBuf>,
    /// Negatives sampled per positive pair.
    #[arg(long, global = true, env = "ASPECTSIM_NEGATIVE_RATIO")]
    pub negative_ratio: Option<f64>,
    /// RNG seed for sampling, folds, and training.
    #[arg(long, global = true, env = "ASPECTSIM_SEED")]
    pub seed: Option<u64>,
    /// Cross-validation fold count.
    #[arg(long, global = true, env = "ASPECTSIM_FOLDS")]
    pub folds: Option<usize>,
    /// Directory receiving run outputs.
    #[arg(long, global = true, env = "ASPECTSIM_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Directory holding model checkpoints.
    #[arg(long, global = true, env = "ASPECTSIM_CHECKPOINTS_DIR")]
    pub checkpoints_dir: Option<PathBuf>,
    /// Registry model name (e.g. scibert, lstm-baseline).
    #[arg(long, global = true, env = "ASPECTSIM_MODEL")]
    pub model: Option<String>,
    /// Training epochs.
    #[arg(long, global = true, env = "ASPECTSIM_EPOCHS")]
    pub epochs: Option<usize>,
    /// Peak learning rate.
    #[arg(long, global = true, env = "ASPECTSIM_LR")]
    pub lr: Option<f64>,
    /// Mini-batch size.
    #[arg(long, global = true, env = "ASPECTSIM_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Per-class decision threshold in (0, 1).
    #[arg(long, global = true, env = "ASPECTSIM_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Maximum encoded sequence length.
    #[arg(long, global = true, env = "ASPECTSIM_MAX_LEN")]
    pub max_len: Option<usize>,
    /// Dropout rate in [0, 1).
    #[arg(long, global = true, env = "ASPECTSIM_DROPOUT")]
    pub dropout: Option<f64>,
}

impl RunConfig {
    /// Layer a config file (optional), environment, and flags. The
    /// `overrides` struct already folds environment under flags.
    pub fn resolve(config_file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<RunConfig>(&text).map_err(|e| {
                    Error::Config(format!("{}: invalid config: {e}", path.display()))
                })?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.corpus {
            self.corpus_path = Some(v.clone());
        }
        if let Some(v) = o.format {
            self.corpus_format = v;
        }
        if let Some(v) = &o.normalization {
            self.normalization_path = Some(v.clone());
        }
        if let Some(v) = o.negative_ratio {
            self.negative_ratio = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
            self.model.rng_seed = v;
        }
        if let Some(v) = o.folds {
            self.folds = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.checkpoints_dir {
            self.checkpoints_dir = v.clone();
        }
        if let Some(name) = &o.model {
            let seed = self.model.rng_seed;
            self.model = ModelConfig::for_model(name)?;
            self.model.rng_seed = seed;
        }
        if let Some(v) = o.epochs {
            self.model.epochs = v;
        }
        if let Some(v) = o.lr {
            self.model.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            self.model.batch_size = v;
        }
        if let Some(v) = o.threshold {
            self.model.classification_threshold = v;
        }
        if let Some(v) = o.max_len {
            self.model.max_len = v;
        }
        if let Some(v) = o.dropout {
            self.model.dropout = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=10.0).contains(&self.negative_ratio) {
            return Err(Error::Config(format!(
                "negative_ratio {} is outside [0, 10]",
                self.negative_ratio
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds {} must be at least 2",
                self.folds
            )));
        }
        if let Some(kind) = crate::models::io::registry_kind(&self.model.checkpoint_name) {
            if kind != self.model.model_kind {
                return Err(Error::Config(format!(
                    "checkpoint {:?} is a {kind:?} model but model_kind says {:?}",
                    self.model.checkpoint_name, self.model.model_kind
                )));
            }
        }
        self.model.validate()
    }

    /// Hash of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Reproducibility manifest written into every command's output
/// directory: the resolved config, its hash, the binary version, and a
/// content hash per input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub input_hashes: std::collections::BTreeMap<String, String>,
    pub config: RunConfig,
}

/// Content hash of one input: a file's bytes, or for a directory every
/// contained file's relative path and bytes in sorted order.
pub fn hash_input(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for file in files {
            let rel = file.strip_prefix(path).unwrap_or(&file);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0u8]);
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            hasher.update(&bytes);
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update(&bytes);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[(&str, &Path)],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut input_hashes = std::collections::BTreeMap::new();
    for (name, path) in inputs {
        input_hashes.insert(name.to_string(), hash_input(path)?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.config_hash(),
        input_hashes,
        config: cfg.clone(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
