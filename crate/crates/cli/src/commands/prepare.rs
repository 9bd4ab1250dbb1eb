use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use entailgen_core::corpus::{load_snli_dir, write_dataset, DatasetStats, Direction, Tokenizer, Vocabulary};
use entailgen_core::embeddings::{init_embedding_matrix, load_vectors, save_vectors};

use super::Ctx;
use crate::config::pick;

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Directory holding snli_1.0_{train,dev,test}.jsonl.
    #[arg(long, value_name = "DIR")]
    pub snli_dir: PathBuf,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// forward: premise → hypothesis; inverse: hypothesis → premise.
    #[arg(long)]
    pub direction: Option<Direction>,

    /// Minimum training-set count for a vocabulary entry.
    #[arg(long)]
    pub min_count: Option<usize>,

    /// Lowercase all text before tokenizing.
    #[arg(long)]
    pub lowercase: bool,

    /// Pre-trained vectors; the vocabulary's rows are saved as vectors.txt.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,

    /// Format of --embeddings (word2vec-bin or text).
    #[arg(long)]
    pub embeddings_format: Option<String>,
}

#[derive(Serialize)]
struct Resolved {
    snli_dir: PathBuf,
    out: PathBuf,
    direction: Direction,
    min_count: usize,
    lowercase: bool,
    embeddings: Option<PathBuf>,
    embeddings_format: String,
}

pub fn run(ctx: &Ctx, a: PrepareArgs) -> Result<()> {
    let f = &ctx.file.prepare;
    let file_dir = f.direction.as_deref().map(str::parse).transpose()?;
    let r = Resolved {
        snli_dir: a.snli_dir,
        out: a.out,
        direction: pick(a.direction, &file_dir, Direction::Forward),
        min_count: pick(a.min_count, &f.min_count, 1),
        lowercase: a.lowercase || f.lowercase.unwrap_or(false),
        embeddings: a.embeddings.or_else(|| f.embeddings.clone()),
        embeddings_format: pick(a.embeddings_format, &f.embeddings_format, "word2vec-bin".into()),
    };
    let mut manifest = ctx.manifest("prepare").config(&r)?;

    let corpus = load_snli_dir(&r.snli_dir, &Tokenizer::new(r.lowercase), r.direction)?;
    let vocab = Vocabulary::build(&corpus.train, r.min_count)?;
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    let mut outputs = Vec::new();
    for (name, pairs) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let p = r.out.join(format!("{name}.jsonl"));
        write_dataset(&p, pairs)?;
        outputs.push(p);
    }
    let vocab_path = r.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    outputs.push(vocab_path);

    let mut oov_fraction = None;
    if let Some(path) = &r.embeddings {
        let keep: HashSet<String> = vocab.tokens().iter().cloned().collect();
        log::info!("reading vectors from {}", path.display());
        let vectors = load_vectors(path, &r.embeddings_format, Some(&keep))?;
        let (_, oov) = init_embedding_matrix(&vocab, &vectors, ctx.seed);
        oov_fraction = Some(oov);
        // Only vocabulary rows were read, so training need not reread the full file.
        let vp = r.out.join("vectors.txt");
        save_vectors(&vp, "text", &vectors)?;
        outputs.push(vp);
        manifest.inputs.push(path.clone());
    }

    let stats = DatasetStats {
        train_pairs: corpus.train.len(),
        dev_pairs: corpus.dev.len(),
        test_pairs: corpus.test.len(),
        vocab_size: vocab.len(),
        oov_fraction,
        skipped_unlabeled: corpus.skipped_unlabeled,
        dropped_empty: corpus.dropped_empty,
        direction: r.direction,
    };
    let stats_json = serde_json::to_string_pretty(&stats)?;
    let sp = r.out.join("stats.json");
    fs::write(&sp, stats_json.clone() + "\n")?;
    outputs.push(sp);
    println!("{stats_json}");

    manifest.inputs.push(r.snli_dir.clone());
    manifest.outputs = outputs;
    manifest.write(&r.out.join("manifest.json"))
}
