use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use entailgen_core::corpus::{Tokenizer, Vocabulary};
use entailgen_core::seq2seq::{load_checkpoint, Seq2Seq};

use super::{read_lines, Ctx};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Vocabulary file (default: vocab.txt next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Input sentences, one per line (default: stdin).
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Lowercase inputs, as done at preparation time.
    #[arg(long)]
    pub lowercase: bool,

    /// Sentences decoded per batch.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Where to write the run manifest (default: next to --output).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

/// Loads a checkpoint together with its vocabulary, checking they match.
pub fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(Seq2Seq, Vocabulary, PathBuf)> {
    let vocab_path = match vocab {
        Some(v) => v.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
    };
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?;
    let loaded = load_checkpoint(checkpoint, Some(&vocab)).with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok((loaded.model, vocab, vocab_path))
}

#[derive(Serialize)]
struct Resolved<'a> {
    checkpoint: &'a Path,
    vocab: &'a Path,
    input: Option<&'a Path>,
    output: Option<&'a Path>,
    lowercase: bool,
    batch: usize,
}

/// Tokenizes non-blank lines; blank ones map to `None` with a warning.
pub fn tokenize_lines(lines: &[String], tok: &Tokenizer, what: &str) -> Vec<Option<Vec<String>>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| match tok.tokenize(l) {
            Ok(t) => Some(t),
            Err(_) => {
                log::warn!("{what} line {}: blank, skipped", i + 1);
                None
            }
        })
        .collect()
}

pub fn run(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let (model, vocab, vocab_path) = load_model(&a.checkpoint, a.vocab.as_deref())?;
    let lines = read_lines(a.input.as_deref())?;
    let tokens = tokenize_lines(&lines, &Tokenizer::new(a.lowercase), "input");
    let present: Vec<Vec<String>> = tokens.iter().flatten().cloned().collect();
    let mut outs = model.greedy_decode_many(&vocab, &present, a.batch)?.into_iter();

    let mut w: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for t in &tokens {
        match t {
            Some(_) => writeln!(w, "{}", outs.next().expect("one output per input").join(" "))?,
            None => writeln!(w)?,
        }
    }
    w.flush()?;

    let manifest_path = a
        .manifest
        .clone()
        .or_else(|| a.output.as_ref().map(|o| o.with_extension("manifest.json")));
    if let Some(mp) = manifest_path {
        let r = Resolved {
            checkpoint: &a.checkpoint,
            vocab: &vocab_path,
            input: a.input.as_deref(),
            output: a.output.as_deref(),
            lowercase: a.lowercase,
            batch: a.batch,
        };
        let mut m = ctx.manifest("generate").config(&r)?;
        m.inputs = [Some(a.checkpoint.clone()), Some(vocab_path.clone()), a.input.clone()]
            .into_iter()
            .flatten()
            .collect();
        m.outputs = a.output.iter().cloned().collect();
        m.write(&mp)?;
    }
    Ok(())
}
