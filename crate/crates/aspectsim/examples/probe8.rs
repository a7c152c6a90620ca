//! Scratch probe: proxy-scale fine-tune over a synthetic 2,000-pair set.

use std::collections::BTreeSet;
use std::time::Instant;

use aspectsim::corpus::RecordStore;
use aspectsim::dataset::{stratified_folds, Provenance, Sample, SampleSet};
use aspectsim::labels::{
    build_vocabulary, pairs_from_instances, resolve_instances, LabelVocabulary,
    NormalizationConfig,
};
use aspectsim::metrics::{most_frequent_class, per_label_report, prf_micro};
use aspectsim::models::embeddings::SubwordConfig;
use aspectsim::models::encode::encode_sample;
use aspectsim::models::io::{
    checkpoint_file, init_transformer_checkpoint, load_checkpoint, restore_weights, Checkpoint,
    TransformerInit,
};
use aspectsim::models::tokenizer::Tokenizer;
use aspectsim::models::trainer::{predict, train, EncoderState, ModelConfig};
use aspectsim::models::transformer::{EncodedBatch, Transformer, TransformerConfig};
use aspectsim::negatives::{negative_count, sample_negatives, NegativeConstraintIndex};
use aspectsim::synthetic::{generate_corpus, SyntheticConfig};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pooled_features(
    model: &Transformer<f32>,
    tokenizer: &Tokenizer,
    samples: &[Sample],
    max_len: usize,
) -> aspectsim::Result<Array2<f32>> {
    let h = model.config.hidden;
    let mut out = Array2::zeros((samples.len(), h));
    let mut row = 0usize;
    for chunk in samples.chunks(16) {
        let pairs = chunk
            .iter()
            .map(|s| encode_sample(s, tokenizer, max_len))
            .collect::<aspectsim::Result<Vec<_>>>()?;
        let batch = EncodedBatch::from_pairs(&pairs)?;
        let (pooled, _) = model.forward::<ChaCha8Rng>(&batch, None)?;
        for r in pooled.outer_iter() {
            out.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(out)
}

fn multi_hot(samples: &[Sample], vocab: &LabelVocabulary) -> Array2<f32> {
    let mut y = Array2::zeros((samples.len(), vocab.len()));
    for (i, s) in samples.iter().enumerate() {
        for label in &s.labels {
            y[[i, vocab.index_of(label).unwrap()]] = 1.0;
        }
    }
    y
}

fn linear_probe(
    x_train: &Array2<f32>,
    y_train: &Array2<f32>,
    x_test: &Array2<f32>,
    vocab: &LabelVocabulary,
) -> Vec<BTreeSet<String>> {
    let (n, h) = x_train.dim();
    let c = vocab.len();
    let mut w = Array2::<f32>::zeros((h, c));
    let mut b = Array1::<f32>::zeros(c);
    let lr = 0.5f32;
    for _ in 0..500 {
        let p = (x_train.dot(&w) + &b).mapv(|z| 1.0 / (1.0 + (-z).exp()));
        let err = &p - y_train;
        w = &w - &(x_train.t().dot(&err) * (lr / n as f32));
        b = &b - &(err.sum_axis(Axis(0)) * (lr / n as f32));
    }
    let classes = vocab.classes();
    let p = (x_test.dot(&w) + &b).mapv(|z| 1.0 / (1.0 + (-z).exp()));
    p.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|&(_, &v)| v >= 0.5)
                .map(|(j, _)| classes[j].to_string())
                .collect()
        })
        .collect()
}

fn report(
    tag: &str,
    gold: &[BTreeSet<String>],
    pred: &[BTreeSet<String>],
    vocab: &LabelVocabulary,
    baseline_f1: f64,
) {
    let micro = prf_micro(gold, pred).unwrap();
    println!(
        "{tag}: micro-F1 {:.4} (margin {:+.4})",
        micro.f1,
        micro.f1 - baseline_f1
    );
    for row in per_label_report(gold, pred, vocab).unwrap() {
        println!(
            "  {:<14} support {:4}  P {:.3} R {:.3} F1 {:.3}",
            row.class, row.samples, row.precision, row.recall, row.f1
        );
    }
}

fn main() -> aspectsim::Result<()> {
    let t_all = Instant::now();
    let syn = SyntheticConfig {
        papers: 260,
        cites_min: 5,
        cites_max: 9,
        ..SyntheticConfig::default()
    };
    let records = generate_corpus(&syn)?;
    let texts: Vec<String> = records
        .iter()
        .map(|r| format!("{} {}", r.title, r.abstract_text))
        .collect();
    let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
    let store = RecordStore::new(records);

    let (instances, _) = resolve_instances(&store, &NormalizationConfig::default());
    let vocab = build_vocabulary(&instances, 9)?;
    let positives = pairs_from_instances(&instances, &vocab);
    println!("instances: {}, positives: {}", instances.len(), positives.len());

    let edges = store.citation_edges();
    let idx = NegativeConstraintIndex::build(store.records(), &positives, &edges);
    let n_neg = negative_count(positives.len(), 0.5);
    let (negatives, _) = sample_negatives(store.records(), &idx, n_neg, 99)?;
    let mut pairs = positives;
    pairs.extend(negatives);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    pairs.shuffle(&mut rng);
    pairs.truncate(2000);
    println!("pairs: {}", pairs.len());

    let set = SampleSet::from_pairs(
        &pairs,
        &store,
        &vocab,
        Provenance {
            corpus: "synthetic-probe".into(),
            built_at: "now".into(),
            config_hash: "0".repeat(8),
        },
    )?;

    let folds = stratified_folds(&set, 5, 21)?;
    let (train_ix, test_ix) = folds.split(0);
    let train_samples: Vec<Sample> = train_ix.iter().map(|&i| set.samples[i].clone()).collect();
    let test_samples: Vec<Sample> = test_ix.iter().map(|&i| set.samples[i].clone()).collect();
    println!("train {} / test {}", train_samples.len(), test_samples.len());

    let tmp = std::env::temp_dir().join("probe8");
    std::fs::create_dir_all(&tmp).unwrap();
    let ckpt_path = checkpoint_file(&tmp, "bert-base");
    let t0 = Instant::now();
    init_transformer_checkpoint(
        &ckpt_path,
        &refs,
        &TransformerInit {
            config: TransformerConfig {
                vocab_size: 0,
                hidden: 192,
                layers: 4,
                heads: 6,
                intermediate: 768,
                max_position: 128,
                type_vocab: 2,
                dropout: 0.1,
            },
            vocab_budget: 4000,
            embedding: SubwordConfig::default(),
            seed: 17,
        },
    )?;
    println!("checkpoint built in {:.1}s", t0.elapsed().as_secs_f64());

    let mut mc = ModelConfig::for_model("bert-base")?;
    mc.max_len = 96;

    let test_gold: Vec<BTreeSet<String>> = test_samples.iter().map(|s| s.label_set()).collect();
    let train_gold: Vec<BTreeSet<String>> = train_samples.iter().map(|s| s.label_set()).collect();
    let mfc = most_frequent_class(&train_gold).unwrap();
    let baseline_pred: Vec<BTreeSet<String>> = vec![mfc.clone(); test_gold.len()];
    let baseline = prf_micro(&test_gold, &baseline_pred)?;
    println!("baseline (mfc={mfc:?}) micro-F1: {:.4}", baseline.f1);

    let Checkpoint::Transformer {
        config: tcfg,
        tokenizer,
        weights,
    } = load_checkpoint(&ckpt_path)?
    else {
        unreachable!()
    };
    let mut probe_model = Transformer::<f32>::new(&mut ChaCha8Rng::seed_from_u64(0), tcfg)?;
    restore_weights(&mut probe_model.params(), &weights)?;

    let t0 = Instant::now();
    let x_train = pooled_features(&probe_model, &tokenizer, &train_samples, mc.max_len)?;
    let x_test = pooled_features(&probe_model, &tokenizer, &test_samples, mc.max_len)?;
    println!("encoded init features in {:.1}s", t0.elapsed().as_secs_f64());
    let spread = x_train.std_axis(Axis(0), 0.0);
    println!(
        "init pooled per-dim std: mean {:.4}, min {:.4}, max {:.4}",
        spread.mean().unwrap(),
        spread.iter().cloned().fold(f32::INFINITY, f32::min),
        spread.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
    );

    let y_train = multi_hot(&train_samples, &vocab);
    let probe_pred = linear_probe(&x_train, &y_train, &x_test, &vocab);
    report("init linear probe", &test_gold, &probe_pred, &vocab, baseline.f1);

    if std::env::var("PROBE_FAST").is_ok() {
        println!("fast mode: skipping fine-tune, total {:.1}s", t_all.elapsed().as_secs_f64());
        return Ok(());
    }

    let checkpoint = load_checkpoint(&ckpt_path)?;
    let t0 = Instant::now();
    let (model, log) = train(&train_samples, &vocab, &mc, checkpoint)?;
    let train_secs = t0.elapsed().as_secs_f64();
    println!(
        "trained {} steps in {:.1}s ({:.3}s/step)",
        log.len(),
        train_secs,
        train_secs / log.len() as f64
    );
    for chunk in log.chunks(100) {
        let avg: f64 = chunk.iter().map(|e| e.loss).sum::<f64>() / chunk.len() as f64;
        println!("  step {:4}..: avg loss {avg:.4}", chunk[0].step);
    }

    let records = predict(&model, &test_samples)?;
    let pred: Vec<BTreeSet<String>> = records.iter().map(|r| r.predicted_set()).collect();
    report("fine-tuned", &test_gold, &pred, &vocab, baseline.f1);

    if let EncoderState::Transformer {
        tokenizer,
        model: encoder,
    } = &model.encoder
    {
        let xt = pooled_features(encoder, tokenizer, &train_samples, mc.max_len)?;
        let xe = pooled_features(encoder, tokenizer, &test_samples, mc.max_len)?;
        let pred2 = linear_probe(&xt, &y_train, &xe, &vocab);
        report("post-finetune linear probe", &test_gold, &pred2, &vocab, baseline.f1);
    }
    println!("total {:.1}s", t_all.elapsed().as_secs_f64());
    Ok(())
}
