//! Multi-label evaluation: micro/macro precision-recall-F1, per-label
//! tables, cardinality breakdowns, label-set confusion, and the
//! cross-fold report with mean and population standard deviation.
//!
//! Zero-denominator convention throughout: precision, recall, and F1
//! are 0 whenever their denominator is 0.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVocabulary;

pub type LabelSet = BTreeSet<String>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn prf_from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

fn check_lengths(gold: &[LabelSet], pred: &[LabelSet]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Evaluation(format!(
            "gold has {} samples but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Micro average: pool every (sample, class) decision into one count.
pub fn prf_micro(gold: &[LabelSet], pred: &[LabelSet]) -> Result<Prf> {
    check_lengths(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        tp += g.intersection(p).count() as u64;
        fp += p.difference(g).count() as u64;
        fn_ += g.difference(p).count() as u64;
    }
    Ok(prf_from_counts(tp, fp, fn_))
}

/// Which classes a macro average runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MacroScope {
    /// All vocabulary classes, None included.
    #[default]
    AllClasses,
    /// Content classes only: None is left out of the average.
    ExcludeNone,
}

fn per_class_counts(
    gold: &[LabelSet],
    pred: &[LabelSet],
    classes: &[&str],
) -> Vec<(u64, u64, u64)> {
    let mut counts = vec![(0u64, 0u64, 0u64); classes.len()];
    for (g, p) in gold.iter().zip(pred) {
        for (ix, class) in classes.iter().enumerate() {
            let in_gold = g.contains(*class);
            let in_pred = p.contains(*class);
            match (in_gold, in_pred) {
                (true, true) => counts[ix].0 += 1,
                (false, true) => counts[ix].1 += 1,
                (true, false) => counts[ix].2 += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// Macro average: per-class metrics first, then an unweighted mean.
/// Macro-F1 is the mean of per-class F1 scores, not the harmonic mean
/// of macro precision and recall. Classes with no support contribute 0.
pub fn prf_macro_scoped(
    gold: &[LabelSet],
    pred: &[LabelSet],
    vocab: &LabelVocabulary,
    scope: MacroScope,
) -> Result<Prf> {
    check_lengths(gold, pred)?;
    let classes: Vec<&str> = vocab
        .classes()
        .iter()
        .copied()
        .filter(|c| scope == MacroScope::AllClasses || *c != vocab.none_class())
        .collect();
    let counts = per_class_counts(gold, pred, &classes);
    let n = classes.len() as f64;
    let mut acc = Prf::default();
    for &(tp, fp, fn_) in &counts {
        let prf = prf_from_counts(tp, fp, fn_);
        acc.precision += prf.precision;
        acc.recall += prf.recall;
        acc.f1 += prf.f1;
    }
    Ok(Prf {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    })
}

pub fn prf_macro(gold: &[LabelSet], pred: &[LabelSet], vocab: &LabelVocabulary) -> Result<Prf> {
    prf_macro_scoped(gold, pred, vocab, MacroScope::AllClasses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelRow {
    pub class: String,
    pub samples: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class table in vocabulary order: gold support plus P/R/F1.
pub fn per_label_report(
    gold: &[LabelSet],
    pred: &[LabelSet],
    vocab: &LabelVocabulary,
) -> Result<Vec<PerLabelRow>> {
    check_lengths(gold, pred)?;
    let classes = vocab.classes();
    let counts = per_class_counts(gold, pred, &classes);
    Ok(classes
        .iter()
        .zip(counts)
        .map(|(class, (tp, fp, fn_))| {
            let prf = prf_from_counts(tp, fp, fn_);
            PerLabelRow {
                class: class.to_string(),
                samples: tp + fn_,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByLabelCountRow {
    pub bucket: String,
    pub samples: u64,
    /// None when the bucket is empty (rendered as n/a).
    pub metrics: Option<Prf>,
}

/// Micro metrics split by gold label-set cardinality: 1, 2, ≥3.
pub fn by_label_count_report(
    gold: &[LabelSet],
    pred: &[LabelSet],
) -> Result<Vec<ByLabelCountRow>> {
    check_lengths(gold, pred)?;
    let buckets: [(&str, Box<dyn Fn(usize) -> bool>); 3] = [
        ("1 label", Box::new(|n| n == 1)),
        ("2 labels", Box::new(|n| n == 2)),
        ("3+ labels", Box::new(|n| n >= 3)),
    ];
    let mut rows = Vec::with_capacity(3);
    for (name, belongs) in buckets {
        let (g, p): (Vec<LabelSet>, Vec<LabelSet>) = gold
            .iter()
            .zip(pred)
            .filter(|(g, _)| belongs(g.len()))
            .map(|(g, p)| (g.clone(), p.clone()))
            .unzip();
        rows.push(ByLabelCountRow {
            bucket: name.to_string(),
            samples: g.len() as u64,
            metrics: if g.is_empty() {
                None
            } else {
                Some(prf_micro(&g, &p)?)
            },
        });
    }
    Ok(rows)
}

/// Sparse confusion over exact label sets: gold set → predicted set → count.
pub fn labelset_confusion(
    gold: &[LabelSet],
    pred: &[LabelSet],
) -> Result<BTreeMap<LabelSet, BTreeMap<LabelSet, u64>>> {
    check_lengths(gold, pred)?;
    let mut matrix: BTreeMap<LabelSet, BTreeMap<LabelSet, u64>> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        *matrix
            .entry(g.clone())
            .or_default()
            .entry(p.clone())
            .or_default() += 1;
    }
    Ok(matrix)
}

/// Predict the training set's most frequent class for everything; the
/// reference point simple models must beat.
pub fn most_frequent_class(train_gold: &[LabelSet]) -> Option<LabelSet> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for set in train_gold {
        for label in set {
            *counts.entry(label).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(label, _)| {
            let mut set = BTreeSet::new();
            set.insert(label.to_string());
            set
        })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation over fold-level values.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub test_samples: u64,
    pub micro: Prf,
    pub macro_avg: Prf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub micro_precision: MeanStd,
    pub micro_recall: MeanStd,
    pub micro_f1: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

/// Everything the evaluation protocol reports for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system: String,
    pub macro_scope: MacroScope,
    pub per_fold: Vec<FoldMetrics>,
    pub aggregate: AggregateMetrics,
    pub per_label: Vec<PerLabelRow>,
    pub by_label_count: Vec<ByLabelCountRow>,
    pub labelset_confusion: Vec<(Vec<String>, Vec<(Vec<String>, u64)>)>,
}

impl EvaluationReport {
    /// Build the full report from per-fold (gold, predicted) label sets.
    /// Table-style sections pool the test folds; the aggregate block is
    /// mean ± population std over exactly the per-fold values.
    pub fn from_folds(
        system: &str,
        folds: &[(Vec<LabelSet>, Vec<LabelSet>)],
        vocab: &LabelVocabulary,
        macro_scope: MacroScope,
    ) -> Result<EvaluationReport> {
        if folds.is_empty() {
            return Err(Error::Evaluation("no folds to evaluate".into()));
        }
        let mut per_fold = Vec::with_capacity(folds.len());
        let mut pooled_gold = Vec::new();
        let mut pooled_pred = Vec::new();
        for (fold, (gold, pred)) in folds.iter().enumerate() {
            per_fold.push(FoldMetrics {
                fold,
                test_samples: gold.len() as u64,
                micro: prf_micro(gold, pred)?,
                macro_avg: prf_macro_scoped(gold, pred, vocab, macro_scope)?,
            });
            pooled_gold.extend_from_slice(gold);
            pooled_pred.extend_from_slice(pred);
        }
        let collect = |f: &dyn Fn(&FoldMetrics) -> f64| -> Vec<f64> {
            per_fold.iter().map(|m| f(m)).collect()
        };
        let aggregate = AggregateMetrics {
            micro_precision: mean_std(&collect(&|m| m.micro.precision)),
            micro_recall: mean_std(&collect(&|m| m.micro.recall)),
            micro_f1: mean_std(&collect(&|m| m.micro.f1)),
            macro_precision: mean_std(&collect(&|m| m.macro_avg.precision)),
            macro_recall: mean_std(&collect(&|m| m.macro_avg.recall)),
            macro_f1: mean_std(&collect(&|m| m.macro_avg.f1)),
        };
        let confusion = labelset_confusion(&pooled_gold, &pooled_pred)?;
        let labelset_confusion = confusion
            .into_iter()
            .map(|(g, row)| {
                (
                    g.into_iter().collect::<Vec<_>>(),
                    row.into_iter()
                        .map(|(p, n)| (p.into_iter().collect::<Vec<_>>(), n))
                        .collect(),
                )
            })
            .collect();
        Ok(EvaluationReport {
            system: system.to_string(),
            macro_scope,
            per_fold,
            aggregate,
            per_label: per_label_report(&pooled_gold, &pooled_pred, vocab)?,
            by_label_count: by_label_count_report(&pooled_gold, &pooled_pred)?,
            labelset_confusion,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<EvaluationReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Markdown rendering: overall averages, per-label table, cardinality
    /// breakdown, and the label-set confusion rows with at least
    /// `confusion_floor` gold samples.
    pub fn to_markdown(&self, confusion_floor: u64) -> String {
        let mut out = String::new();
        let fmt = |m: &MeanStd| format!("{:.3} ±{:.3}", m.mean, m.std);
        out.push_str(&format!("# Evaluation: {}\n\n", self.system));
        out.push_str(&format!("Folds: {}\n\n", self.per_fold.len()));
        out.push_str("## Overall (mean ± std across folds)\n\n");
        out.push_str("| metric | precision | recall | F1 |\n|---|---|---|---|\n");
        out.push_str(&format!(
            "| micro | {} | {} | {} |\n",
            fmt(&self.aggregate.micro_precision),
            fmt(&self.aggregate.micro_recall),
            fmt(&self.aggregate.micro_f1)
        ));
        out.push_str(&format!(
            "| macro | {} | {} | {} |\n\n",
            fmt(&self.aggregate.macro_precision),
            fmt(&self.aggregate.macro_recall),
            fmt(&self.aggregate.macro_f1)
        ));
        out.push_str("## Per label\n\n");
        out.push_str("| class | samples | precision | recall | F1 |\n|---|---|---|---|---|\n");
        for row in &self.per_label {
            out.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {:.3} |\n",
                row.class, row.samples, row.precision, row.recall, row.f1
            ));
        }
        out.push_str("\n## By gold label count\n\n");
        out.push_str("| bucket | samples | precision | recall | F1 |\n|---|---|---|---|---|\n");
        for row in &self.by_label_count {
            match &row.metrics {
                Some(m) => out.push_str(&format!(
                    "| {} | {} | {:.3} | {:.3} | {:.3} |\n",
                    row.bucket, row.samples, m.precision, m.recall, m.f1
                )),
                None => out.push_str(&format!("| {} | 0 | n/a | n/a | n/a |\n", row.bucket)),
            }
        }
        out.push_str(&format!(
            "\n## Label-set confusion (gold sets with ≥ {} samples)\n\n",
            confusion_floor
        ));
        out.push_str("| gold set | predicted set | count |\n|---|---|---|\n");
        for (gold_set, row) in &self.labelset_confusion {
            let total: u64 = row.iter().map(|(_, n)| n).sum();
            if total < confusion_floor {
                continue;
            }
            let mut cells: Vec<&(Vec<String>, u64)> = row.iter().collect();
            cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (pred_set, count) in cells {
                out.push_str(&format!(
                    "| {{{}}} | {{{}}} | {} |\n",
                    gold_set.join(", "),
                    pred_set.join(", "),
                    count
                ));
            }
        }
        out
    }

    /// One CSV per table, written into `dir`.
    pub fn write_csv_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let wrap = |path: &Path, e: csv::Error| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
        };

        let path = dir.join("aggregate.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| wrap(&path, e))?;
        w.write_record(["metric", "mean", "std"]).map_err(|e| wrap(&path, e))?;
        let rows: [(&str, &MeanStd); 6] = [
            ("micro_precision", &self.aggregate.micro_precision),
            ("micro_recall", &self.aggregate.micro_recall),
            ("micro_f1", &self.aggregate.micro_f1),
            ("macro_precision", &self.aggregate.macro_precision),
            ("macro_recall", &self.aggregate.macro_recall),
            ("macro_f1", &self.aggregate.macro_f1),
        ];
        for (name, m) in rows {
            w.write_record([name, &m.mean.to_string(), &m.std.to_string()])
                .map_err(|e| wrap(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("per_label.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| wrap(&path, e))?;
        w.write_record(["class", "samples", "precision", "recall", "f1"])
            .map_err(|e| wrap(&path, e))?;
        for row in &self.per_label {
            w.write_record([
                row.class.as_str(),
                &row.samples.to_string(),
                &row.precision.to_string(),
                &row.recall.to_string(),
                &row.f1.to_string(),
            ])
            .map_err(|e| wrap(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("by_label_count.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| wrap(&path, e))?;
        w.write_record(["bucket", "samples", "precision", "recall", "f1"])
            .map_err(|e| wrap(&path, e))?;
        for row in &self.by_label_count {
            let (p, r, f1) = match &row.metrics {
                Some(m) => (
                    m.precision.to_string(),
                    m.recall.to_string(),
                    m.f1.to_string(),
                ),
                None => ("".into(), "".into(), "".into()),
            };
            w.write_record([row.bucket.as_str(), &row.samples.to_string(), &p, &r, &f1])
                .map_err(|e| wrap(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("labelset_confusion.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| wrap(&path, e))?;
        w.write_record(["gold_set", "predicted_set", "count"])
            .map_err(|e| wrap(&path, e))?;
        for (gold_set, row) in &self.labelset_confusion {
            for (pred_set, count) in row {
                w.write_record([
                    gold_set.join("|").as_str(),
                    pred_set.join("|").as_str(),
                    &count.to_string(),
                ])
                .map_err(|e| wrap(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(labels: &[&str]) -> LabelSet {
        labels.iter().map(|s| s.to_string()).collect()
    }

    fn vocab2() -> LabelVocabulary {
        LabelVocabulary::from_positive_classes(vec!["A".into(), "B".into()])
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![set(&["A"]), set(&["B", "A"]), set(&["None"])];
        let micro = prf_micro(&gold, &gold).unwrap();
        assert_eq!(micro, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn hand_counted_micro_case() {
        let gold = vec![set(&["A"]), set(&["B"])];
        let pred = vec![set(&["A"]), set(&["A"])];
        let micro = prf_micro(&gold, &pred).unwrap();
        assert_eq!(micro.precision, 0.5);
        assert_eq!(micro.recall, 0.5);
        assert_eq!(micro.f1, 0.5);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gold = vec![set(&["A"]), set(&["B"])];
        let pred = vec![set(&[]), set(&[])];
        let micro = prf_micro(&gold, &pred).unwrap();
        assert_eq!(micro, Prf::default());
    }

    #[test]
    fn length_mismatch_is_fatal() {
        let gold = vec![set(&["A"])];
        assert!(matches!(
            prf_micro(&gold, &[]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn hand_counted_macro_case() {
        // class A: tp=1 fp=1 -> P=1/2, R=1, F1=2/3; class B: all zero;
        // Other/None have no support or predictions -> 0
        let gold = vec![set(&["A"]), set(&["B"])];
        let pred = vec![set(&["A"]), set(&["A"])];
        let vocab = vocab2();
        let macro_ = prf_macro(&gold, &pred, &vocab).unwrap();
        let classes = vocab.classes().len() as f64;
        assert!((macro_.f1 - (2.0 / 3.0) / classes).abs() < 1e-12);
        assert!((macro_.precision - 0.5 / classes).abs() < 1e-12);
        assert!((macro_.recall - 1.0 / classes).abs() < 1e-12);
    }

    #[test]
    fn macro_scope_can_exclude_none() {
        let gold = vec![set(&["A"]), set(&["None"])];
        let pred = vec![set(&["A"]), set(&["None"])];
        let vocab = vocab2(); // classes: A, B, Other, None
        let all = prf_macro_scoped(&gold, &pred, &vocab, MacroScope::AllClasses).unwrap();
        let content = prf_macro_scoped(&gold, &pred, &vocab, MacroScope::ExcludeNone).unwrap();
        assert!((all.f1 - 2.0 / 4.0).abs() < 1e-12);
        assert!((content.f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn per_label_rows_follow_vocab_order_and_support() {
        let gold = vec![set(&["A"]), set(&["A", "B"]), set(&["None"])];
        let pred = vec![set(&["A"]), set(&["B"]), set(&["Other"])];
        let rows = per_label_report(&gold, &pred, &vocab2()).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.class.as_str()).collect();
        assert_eq!(names, vec!["A", "B", "Other", "None"]);
        assert_eq!(rows[0].samples, 2);
        assert_eq!(rows[1].samples, 1);
        assert_eq!(rows[1].f1, 1.0);
        assert_eq!(rows[2].samples, 0);
        assert_eq!(rows[2].precision, 0.0); // predicted once, never gold
        assert_eq!(rows[3].samples, 1);
        assert_eq!(rows[3].f1, 0.0);
        let total: u64 = rows.iter().map(|r| r.samples).sum();
        let gold_instances: usize = gold.iter().map(|g| g.len()).sum();
        assert_eq!(total, gold_instances as u64);
    }

    #[test]
    fn one_class_correct_one_wrong() {
        let gold = vec![set(&["A"]), set(&["B"])];
        let pred = vec![set(&["A"]), set(&["Other"])];
        let rows = per_label_report(&gold, &pred, &vocab2()).unwrap();
        assert_eq!(rows[0].f1, 1.0);
        assert_eq!(rows[1].f1, 0.0);
    }

    #[test]
    fn label_count_buckets_partition_samples() {
        let gold = vec![
            set(&["A"]),
            set(&["A", "B"]),
            set(&["A", "B", "Other"]),
            set(&["B"]),
        ];
        let pred = vec![set(&["A"]), set(&["A"]), set(&["A", "B", "Other"]), set(&["B"])];
        let rows = by_label_count_report(&gold, &pred).unwrap();
        assert_eq!(rows[0].samples, 2);
        assert_eq!(rows[1].samples, 1);
        assert_eq!(rows[2].samples, 1);
        // 2-label sample with one correct prediction: P=1, R=0.5
        let two = rows[1].metrics.unwrap();
        assert_eq!(two.precision, 1.0);
        assert_eq!(two.recall, 0.5);
        assert_eq!(rows[2].metrics.unwrap().f1, 1.0);
    }

    #[test]
    fn empty_buckets_are_reported_na() {
        let gold = vec![set(&["A"]), set(&["B"])];
        let pred = gold.clone();
        let rows = by_label_count_report(&gold, &pred).unwrap();
        assert_eq!(rows[1].samples, 0);
        assert!(rows[1].metrics.is_none());
        assert!(rows[2].metrics.is_none());
    }

    #[test]
    fn confusion_counts_exact_sets_and_row_sums() {
        let gold = vec![
            set(&["A", "B"]),
            set(&["A", "B"]),
            set(&["A", "B"]),
            set(&["A"]),
        ];
        let pred = vec![set(&["A", "B"]), set(&["A"]), set(&["B"]), set(&[])];
        let matrix = labelset_confusion(&gold, &pred).unwrap();
        let row = &matrix[&set(&["A", "B"])];
        assert_eq!(row[&set(&["A", "B"])], 1);
        assert_eq!(row[&set(&["A"])], 1);
        assert_eq!(row[&set(&["B"])], 1);
        assert_eq!(row.values().sum::<u64>(), 3);
        assert_eq!(matrix[&set(&["A"])][&set(&[])], 1);

        let diag = labelset_confusion(&gold, &gold).unwrap();
        for (g, row) in diag {
            assert_eq!(row.len(), 1);
            assert!(row.contains_key(&g));
        }
    }

    #[test]
    fn permutation_invariance() {
        let gold = vec![set(&["A"]), set(&["A", "B"]), set(&["None"]), set(&["B"])];
        let pred = vec![set(&["B"]), set(&["A"]), set(&["None"]), set(&["B"])];
        let perm = [2usize, 0, 3, 1];
        let gold_p: Vec<LabelSet> = perm.iter().map(|&i| gold[i].clone()).collect();
        let pred_p: Vec<LabelSet> = perm.iter().map(|&i| pred[i].clone()).collect();
        let vocab = vocab2();
        assert_eq!(
            prf_micro(&gold, &pred).unwrap(),
            prf_micro(&gold_p, &pred_p).unwrap()
        );
        assert_eq!(
            prf_macro(&gold, &pred, &vocab).unwrap(),
            prf_macro(&gold_p, &pred_p, &vocab).unwrap()
        );
        assert_eq!(
            per_label_report(&gold, &pred, &vocab).unwrap(),
            per_label_report(&gold_p, &pred_p, &vocab).unwrap()
        );
        assert_eq!(
            labelset_confusion(&gold, &pred).unwrap(),
            labelset_confusion(&gold_p, &pred_p).unwrap()
        );
    }

    #[test]
    fn micro_f1_is_harmonic_mean_when_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = ["A", "B", "Other", "None"];
        for _ in 0..200 {
            let n = rng.gen_range(1..30);
            let draw = |rng: &mut ChaCha8Rng| -> LabelSet {
                classes
                    .iter()
                    .filter(|_| rng.gen_bool(0.4))
                    .map(|s| s.to_string())
                    .collect()
            };
            let gold: Vec<LabelSet> = (0..n).map(|_| draw(&mut rng)).collect();
            let pred: Vec<LabelSet> = (0..n).map(|_| draw(&mut rng)).collect();
            let m = prf_micro(&gold, &pred).unwrap();
            if m.precision > 0.0 && m.recall > 0.0 {
                let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                assert!((m.f1 - harmonic).abs() < 1e-12);
            }
        }
    }

    /// Brute-force oracle: recompute every metric from scratch with
    /// plain counting loops, no shared helpers.
    fn oracle_counts(gold: &[LabelSet], pred: &[LabelSet], class: &str) -> (f64, f64, f64, u64) {
        let mut tp = 0.0;
        let mut pred_n = 0.0;
        let mut gold_n = 0.0;
        for i in 0..gold.len() {
            let g = gold[i].contains(class);
            let p = pred[i].contains(class);
            if g {
                gold_n += 1.0;
            }
            if p {
                pred_n += 1.0;
            }
            if g && p {
                tp += 1.0;
            }
        }
        let prec = if pred_n > 0.0 { tp / pred_n } else { 0.0 };
        let rec = if gold_n > 0.0 { tp / gold_n } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        (prec, rec, f1, gold_n as u64)
    }

    #[test]
    fn oracle_equivalence_on_random_instances() {
        let positive: Vec<String> = (0..9).map(|i| format!("c{}", i)).collect();
        let vocab = LabelVocabulary::from_positive_classes(positive);
        let classes = vocab.classes();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=50);
            let draw = |rng: &mut ChaCha8Rng| -> LabelSet {
                let density = rng.gen_range(0.05..0.5);
                let s: LabelSet = classes
                    .iter()
                    .filter(|_| rng.gen_bool(density))
                    .map(|s| s.to_string())
                    .collect();
                s
            };
            let gold: Vec<LabelSet> = (0..n).map(|_| draw(&mut rng)).collect();
            let pred: Vec<LabelSet> = (0..n).map(|_| draw(&mut rng)).collect();

            // micro oracle: flatten decisions
            let mut tp = 0.0;
            let mut pred_n = 0.0;
            let mut gold_n = 0.0;
            for i in 0..n {
                for c in &classes {
                    let g = gold[i].contains(*c);
                    let p = pred[i].contains(*c);
                    if g {
                        gold_n += 1.0;
                    }
                    if p {
                        pred_n += 1.0;
                    }
                    if g && p {
                        tp += 1.0;
                    }
                }
            }
            let mp = if pred_n > 0.0 { tp / pred_n } else { 0.0 };
            let mr = if gold_n > 0.0 { tp / gold_n } else { 0.0 };
            let mf = if mp + mr > 0.0 { 2.0 * mp * mr / (mp + mr) } else { 0.0 };
            let micro = prf_micro(&gold, &pred).unwrap();
            assert!((micro.precision - mp).abs() < 1e-9);
            assert!((micro.recall - mr).abs() < 1e-9);
            assert!((micro.f1 - mf).abs() < 1e-9);

            // macro + per-label oracle
            let mut sum_p = 0.0;
            let mut sum_r = 0.0;
            let mut sum_f = 0.0;
            let rows = per_label_report(&gold, &pred, &vocab).unwrap();
            for (ix, c) in classes.iter().enumerate() {
                let (p, r, f, support) = oracle_counts(&gold, &pred, c);
                sum_p += p;
                sum_r += r;
                sum_f += f;
                assert!((rows[ix].precision - p).abs() < 1e-9);
                assert!((rows[ix].recall - r).abs() < 1e-9);
                assert!((rows[ix].f1 - f).abs() < 1e-9);
                assert_eq!(rows[ix].samples, support);
            }
            let k = classes.len() as f64;
            let macro_ = prf_macro(&gold, &pred, &vocab).unwrap();
            assert!((macro_.precision - sum_p / k).abs() < 1e-9);
            assert!((macro_.recall - sum_r / k).abs() < 1e-9);
            assert!((macro_.f1 - sum_f / k).abs() < 1e-9);

            // confusion row sums equal gold-set counts
            let matrix = labelset_confusion(&gold, &pred).unwrap();
            let mut gold_set_counts: BTreeMap<&LabelSet, u64> = BTreeMap::new();
            for g in &gold {
                *gold_set_counts.entry(g).or_default() += 1;
            }
            for (g, row) in &matrix {
                assert_eq!(row.values().sum::<u64>(), gold_set_counts[g]);
            }
        }
    }

    #[test]
    fn mean_std_is_population_std_over_folds() {
        let m = mean_std(&[0.2, 0.4, 0.6, 0.8]);
        assert!((m.mean - 0.5).abs() < 1e-12);
        // population variance of {.2,.4,.6,.8} = 0.05
        assert!((m.std - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn most_frequent_class_prediction() {
        let train = vec![set(&["A"]), set(&["A", "B"]), set(&["None"])];
        assert_eq!(most_frequent_class(&train).unwrap(), set(&["A"]));
        assert_eq!(most_frequent_class(&[]), None);
    }

    #[test]
    fn report_aggregates_over_exactly_k_folds() {
        let vocab = vocab2();
        let fold_a = (
            vec![set(&["A"]), set(&["B"])],
            vec![set(&["A"]), set(&["B"])],
        );
        let fold_b = (
            vec![set(&["A"]), set(&["B"])],
            vec![set(&["A"]), set(&["A"])],
        );
        let report = EvaluationReport::from_folds(
            "toy",
            &[fold_a.clone(), fold_b.clone()],
            &vocab,
            MacroScope::AllClasses,
        )
        .unwrap();
        assert_eq!(report.per_fold.len(), 2);
        let micro_a = prf_micro(&fold_a.0, &fold_a.1).unwrap();
        let micro_b = prf_micro(&fold_b.0, &fold_b.1).unwrap();
        let expect = mean_std(&[micro_a.f1, micro_b.f1]);
        assert_eq!(report.aggregate.micro_f1, expect);
        // pooled per-label support covers both folds
        let a_row = report.per_label.iter().find(|r| r.class == "A").unwrap();
        assert_eq!(a_row.samples, 2);
    }

    #[test]
    fn report_renders_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocab2();
        let fold = (
            vec![set(&["A", "B"]), set(&["None"]), set(&["A"])],
            vec![set(&["A"]), set(&["None"]), set(&["A"])],
        );
        let report =
            EvaluationReport::from_folds("toy", &[fold], &vocab, MacroScope::AllClasses).unwrap();
        let md = report.to_markdown(2);
        assert!(md.contains("| micro |"));
        assert!(md.contains("| A |"));
        assert!(!md.contains("{A, B}"), "floor 2 should hide 1-count rows:\n{}", md);
        let md_all = report.to_markdown(0);
        assert!(md_all.contains("{A, B}"));

        let json = dir.path().join("report.json");
        report.write_json(&json).unwrap();
        assert_eq!(EvaluationReport::load_json(&json).unwrap(), report);
        report.write_csv_tables(dir.path()).unwrap();
        for table in [
            "aggregate.csv",
            "per_label.csv",
            "by_label_count.csv",
            "labelset_confusion.csv",
        ] {
            assert!(dir.path().join(table).exists(), "{} missing", table);
        }
    }
}
