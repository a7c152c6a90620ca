//! Thin CLI over [`aspectsim::commands`]: argument parsing, config
//! layering, human-readable summaries, and exit-code mapping. All logic
//! lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aspectsim::commands::{
    cmd_build_dataset, cmd_cross_validate, cmd_evaluate, cmd_predict, cmd_stats, cmd_train,
    CrossValidateOptions, PairSource, PredictOptions,
};
use aspectsim::config::{Overrides, RunConfig};
use aspectsim::metrics::MacroScope;

#[derive(Parser)]
#[command(
    name = "aspectsim",
    version,
    about = "Build citation-aspect pair datasets, train sequence-pair classifiers, and evaluate aspect-based paper similarity"
)]
struct Cli {
    /// TOML config file; ASPECTSIM_* env vars and flags override it.
    #[arg(long, global = true, env = "ASPECTSIM_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus into the labeled pair dataset, folds, and stats
    BuildDataset,
    /// Summarize an existing dataset file
    Stats {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train one model on the whole dataset
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Construct the checkpoint from the dataset texts if missing
        #[arg(long)]
        init_checkpoint: bool,
    },
    /// Stratified k-fold cross-validation with aggregated reports
    CrossValidate {
        #[arg(long)]
        dataset: PathBuf,
        /// Existing fold assignment; freshly stratified when absent
        #[arg(long)]
        folds_file: Option<PathBuf>,
        /// Keep folds whose prediction files already exist
        #[arg(long)]
        resume: bool,
        /// Persist each fold's trained weights
        #[arg(long)]
        save_models: bool,
        /// Construct the checkpoint from the dataset texts if missing
        #[arg(long)]
        init_checkpoint: bool,
        #[arg(long, value_enum, default_value_t)]
        macro_scope: MacroScope,
        /// Smallest gold count a confusion row needs to appear in report.md
        #[arg(long, default_value_t = 1)]
        confusion_floor: u64,
    },
    /// Score persisted predictions against their gold labels
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Cross-validation directory or a single predictions.jsonl
        #[arg(long)]
        predictions: PathBuf,
        /// System name written into the report
        #[arg(long, default_value = "model")]
        system: String,
        #[arg(long, value_enum, default_value_t)]
        macro_scope: MacroScope,
        #[arg(long, default_value_t = 1)]
        confusion_floor: u64,
    },
    /// Predict citation aspects for paper pairs outside any dataset
    Predict {
        /// Saved model directory
        #[arg(long)]
        model: PathBuf,
        /// JSON file with {"seed": {...}, "target": {...}} or an array
        #[arg(long, conflicts_with_all = ["seed", "target"])]
        pairs: Option<PathBuf>,
        /// Seed paper reference: id, external id, or title
        #[arg(long, requires = "target")]
        seed: Option<String>,
        /// Target paper reference: id, external id, or title
        #[arg(long, requires = "seed")]
        target: Option<String>,
        /// records.jsonl from a dataset build, for reference resolution
        #[arg(long)]
        records: Option<PathBuf>,
        /// Metadata cache directory for references outside the records
        #[arg(long)]
        metadata_cache: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                aspectsim::Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> aspectsim::Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::BuildDataset => {
            let report = cmd_build_dataset(&cfg)?;
            println!(
                "parsed {} papers ({} malformed, {} duplicate ids), kept {}",
                report.papers_parsed,
                report.parse.malformed_records,
                report.parse.duplicate_paper_ids,
                report.papers_kept
            );
            println!(
                "citation instances: {} resolved ({} unresolved, {} empty-section, {} self-citations dropped)",
                report.resolve.resolved_instances,
                report.resolve.unresolved_citations,
                report.resolve.empty_section_citations,
                report.resolve.self_citations
            );
            println!("classes: {}", report.classes.join(", "));
            println!(
                "{} positives + {} negatives = {} samples",
                report.positive_pairs, report.negative_pairs, report.total_samples
            );
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Stats { dataset } => {
            let stats = cmd_stats(&cfg, &dataset)?;
            println!(
                "{} samples: {} positive, {} negative",
                stats.total, stats.positives, stats.negatives
            );
            println!(
                "label cardinality: {} single, {} double, {} triple-plus",
                stats.histogram.one, stats.histogram.two, stats.histogram.three_plus
            );
            for (class, count) in &stats.per_class {
                println!("  {class:<16} {count}");
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Train {
            dataset,
            init_checkpoint,
        } => {
            let summary = cmd_train(&cfg, &dataset, init_checkpoint)?;
            println!(
                "trained {} on {} samples for {} steps (final loss {:.4})",
                cfg.model.checkpoint_name, summary.samples, summary.steps, summary.final_loss
            );
            println!("model saved to {}", summary.model_dir.display());
        }
        Command::CrossValidate {
            dataset,
            folds_file,
            resume,
            save_models,
            init_checkpoint,
            macro_scope,
            confusion_floor,
        } => {
            let options = CrossValidateOptions {
                folds_file,
                resume,
                save_models,
                init_checkpoint,
                macro_scope,
                confusion_floor,
            };
            let report = cmd_cross_validate(&cfg, &dataset, &options)?;
            print_aggregate(&report);
            println!("report written to {}", cfg.output_dir.display());
        }
        Command::Evaluate {
            dataset,
            predictions,
            system,
            macro_scope,
            confusion_floor,
        } => {
            let report =
                cmd_evaluate(&cfg, &dataset, &predictions, &system, macro_scope, confusion_floor)?;
            print_aggregate(&report);
            println!("report written to {}", cfg.output_dir.display());
        }
        Command::Predict {
            model,
            pairs,
            seed,
            target,
            records,
            metadata_cache,
        } => {
            let source = match (pairs, seed, target) {
                (Some(path), _, _) => PairSource::Inline(path),
                (None, Some(seed), Some(target)) => PairSource::Refs { seed, target },
                _ => {
                    return Err(aspectsim::Error::Config(
                        "predict needs --pairs FILE or both --seed and --target".into(),
                    ))
                }
            };
            let options = PredictOptions {
                source,
                records,
                metadata_cache,
            };
            let reports = cmd_predict(&cfg, &model, &options)?;
            for r in &reports {
                println!("{} -> {}", r.seed_id, r.target_id);
                for (class, p) in &r.probabilities {
                    println!("  {class:<16} {p:.3}");
                }
                let predicted = if r.predicted.is_empty() {
                    "(empty)".to_string()
                } else {
                    r.predicted.join(", ")
                };
                println!("  predicted: {predicted}");
                println!("  verdict: {}", r.verdict);
            }
        }
    }
    Ok(())
}

fn print_aggregate(report: &aspectsim::metrics::EvaluationReport) {
    let agg = &report.aggregate;
    println!(
        "{} over {} folds: micro-F1 {:.3} ±{:.3}, macro-F1 {:.3} ±{:.3}",
        report.system,
        report.per_fold.len(),
        agg.micro_f1.mean,
        agg.micro_f1.std,
        agg.macro_f1.mean,
        agg.macro_f1.std
    );
}
