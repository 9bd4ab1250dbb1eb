mod common;

use entailgen_core::chains::{build_graph, export_graph, graph_stats, ExactCanon, ModelGenerator};
use entailgen_core::corpus::{read_dataset, write_dataset, Split, Vocabulary};
use entailgen_core::seq2seq::{load_checkpoint, ModelConfig, Seq2Seq};
use entailgen_core::trainer::{evaluate_bleu, read_log, train, LogRecord, TrainingConfig, LOG_FILE};

use common::synthetic_pairs;

#[test]
fn train_then_chain_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let tr = synthetic_pairs(400, 1, Split::Train);
    let dev = synthetic_pairs(40, 2, Split::Dev);
    write_dataset(&dir.path().join("train.jsonl"), &tr).unwrap();
    let tr = read_dataset(&dir.path().join("train.jsonl"), Split::Train).unwrap();
    let vocab = Vocabulary::build(&tr, 1).unwrap();

    let model = Seq2Seq::new(
        ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 16,
            hidden: 32,
            max_decode_len: 10,
            seed: 3,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let ckpt = dir.path().join("ckpt");
    let cfg = TrainingConfig {
        epochs: 10,
        batch_size: 16,
        checkpoint_dir: ckpt.clone(),
        adam: entailgen_core::optimizer::AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(model, &vocab, &tr, &dev, &cfg).unwrap();
    let best = out.best_checkpoint.clone();
    assert!(best.exists());

    let records = read_log(&ckpt.join(LOG_FILE)).unwrap();
    assert!(records.iter().any(|r| matches!(r, LogRecord::Select(_))));
    assert_eq!(records.iter().filter(|r| matches!(r, LogRecord::Epoch(_))).count(), 10);

    let loaded = load_checkpoint(&best, Some(&vocab)).unwrap().model;
    let bleu = evaluate_bleu(&loaded, &vocab, &dev, 16).unwrap().bleu;
    assert!(bleu > 20.0, "dev BLEU {bleu}");

    let seeds: Vec<Vec<String>> = dev.iter().take(8).map(|p| p.source.clone()).collect();
    let mut gen = ModelGenerator {
        model: &loaded,
        vocab: &vocab,
        chunk: 8,
    };
    let graph = build_graph(&seeds, &mut gen, 6, &ExactCanon).unwrap();
    let stats = graph_stats(&graph);
    assert_eq!(stats.chains + stats.skipped_chains, 8);
    assert!(stats.nodes >= 8.min(stats.chains));

    let mut dot = Vec::new();
    export_graph(&graph, "dot", &mut dot).unwrap();
    let dot = String::from_utf8(dot).unwrap();
    assert!(dot.starts_with("digraph"));
    let mut jsonl = Vec::new();
    export_graph(&graph, "jsonl", &mut jsonl).unwrap();
    let lines = String::from_utf8(jsonl).unwrap().lines().count();
    assert_eq!(lines, stats.nodes + stats.edges);
}
