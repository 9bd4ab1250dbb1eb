use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use entailgen_core::chains::{build_graph, canonicalizers, graph_exporters, graph_stats, ModelGenerator, DEFAULT_MAX_LEN};
use entailgen_core::corpus::Tokenizer;

use super::generate::{load_model, tokenize_lines};
use super::{read_lines, Ctx};
use crate::config::pick;

#[derive(Args, Debug)]
pub struct ChainArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Vocabulary file (default: vocab.txt next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Seed sentences, one per line (default: stdin).
    #[arg(long, value_name = "FILE")]
    pub seeds: Option<PathBuf>,

    /// Maximum sentences per chain.
    #[arg(long)]
    pub max_len: Option<usize>,

    /// Write graph.dot, graph.jsonl and graph_stats.json into this directory.
    #[arg(long, value_name = "DIR")]
    pub graph: Option<PathBuf>,

    /// Sentence identity for the repeat test: exact or loose.
    #[arg(long)]
    pub canon: Option<String>,

    /// Lowercase seeds, as done at preparation time.
    #[arg(long)]
    pub lowercase: bool,

    /// Sentences decoded per batch.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Chain listing destination (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    checkpoint: &'a Path,
    vocab: &'a Path,
    seeds: Option<&'a Path>,
    max_len: usize,
    canon: &'a str,
    graph: Option<&'a Path>,
    output: Option<&'a Path>,
    lowercase: bool,
    batch: usize,
}

pub fn run(ctx: &Ctx, a: ChainArgs) -> Result<()> {
    let f = &ctx.file.chain;
    let max_len = pick(a.max_len, &f.max_len, DEFAULT_MAX_LEN);
    if max_len == 0 {
        bail!("--max-len must be at least 1");
    }
    let canon_name = pick(a.canon.clone(), &f.canon, "exact".into());
    let registry = canonicalizers();
    let canon = registry.get(&canon_name)?;

    let (model, vocab, vocab_path) = load_model(&a.checkpoint, a.vocab.as_deref())?;
    let lines = read_lines(a.seeds.as_deref())?;
    let seeds: Vec<Vec<String>> = tokenize_lines(&lines, &Tokenizer::new(a.lowercase), "seeds")
        .into_iter()
        .flatten()
        .collect();
    if seeds.is_empty() {
        bail!("no seed sentences");
    }
    let mut generator = ModelGenerator {
        model: &model,
        vocab: &vocab,
        chunk: a.batch,
    };
    let graph = build_graph(&seeds, &mut generator, max_len, canon)?;

    let mut w: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for c in &graph.chains {
        let parts: Vec<String> = c.nodes.iter().map(|k| graph.nodes[k].tokens.join(" ")).collect();
        writeln!(w, "{}", parts.join(" → "))?;
    }
    w.flush()?;
    for s in &graph.skipped {
        log::warn!("seed {}: {}", s.seed_index + 1, s.error);
    }

    let mut outputs: Vec<PathBuf> = a.output.iter().cloned().collect();
    if let Some(dir) = &a.graph {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let exporters = graph_exporters();
        for name in exporters.names() {
            let ex = exporters.get(name)?;
            let p = dir.join(format!("graph.{}", ex.extension()));
            let mut out = BufWriter::new(fs::File::create(&p)?);
            ex.write(&graph, &mut out)?;
            out.flush()?;
            outputs.push(p);
        }
        let sp = dir.join("graph_stats.json");
        fs::write(&sp, serde_json::to_string_pretty(&graph_stats(&graph))? + "\n")?;
        outputs.push(sp);
    }

    let manifest_dir = a
        .graph
        .clone()
        .or_else(|| a.output.as_ref().map(|o| o.parent().unwrap_or(Path::new(".")).to_path_buf()));
    if let Some(dir) = manifest_dir {
        let r = Resolved {
            checkpoint: &a.checkpoint,
            vocab: &vocab_path,
            seeds: a.seeds.as_deref(),
            max_len,
            canon: &canon_name,
            graph: a.graph.as_deref(),
            output: a.output.as_deref(),
            lowercase: a.lowercase,
            batch: a.batch,
        };
        let mut m = ctx.manifest("chain").config(&r)?;
        m.inputs = [Some(a.checkpoint.clone()), Some(vocab_path.clone()), a.seeds.clone()]
            .into_iter()
            .flatten()
            .collect();
        m.outputs = outputs;
        m.write(&dir.join("chain.manifest.json"))?;
    }
    Ok(())
}
