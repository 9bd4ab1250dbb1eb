use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use entailgen_core::corpus::{read_dataset, Direction, SentencePair, Split, Vocabulary};
use entailgen_core::embeddings::{init_embedding_matrix, load_vectors, random_embedding_matrix};
use entailgen_core::evaluation::sample_indices;
use entailgen_core::optimizer::AdamConfig;
use entailgen_core::seq2seq::{ModelConfig, Seq2Seq};
use entailgen_core::trainer::{resume, train, TrainingConfig};

use super::Ctx;
use crate::config::pick;

/// Where the initial embedding matrix comes from.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// `vectors.txt` in the dataset directory if present, else random.
    Auto,
    Random(Option<usize>),
    File(PathBuf),
}

impl FromStr for EmbeddingSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "random" => Ok(Self::Random(None)),
            _ => match s.strip_prefix("random:") {
                Some(d) => d
                    .parse()
                    .map(|d| Self::Random(Some(d)))
                    .map_err(|_| format!("bad dimension in {s:?}")),
                None => Ok(Self::File(PathBuf::from(s))),
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,

    /// Output directory for checkpoints and the training log.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Word-by-word attention decoder (default).
    #[arg(long, overrides_with = "no_attention")]
    pub attention: bool,

    /// Plain encoder-decoder without attention.
    #[arg(long, overrides_with = "attention")]
    pub no_attention: bool,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub hidden: Option<usize>,

    /// Embedding width when embeddings are random.
    #[arg(long)]
    pub embed_dim: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub clip_norm: Option<f64>,

    /// auto, random, random:<dim>, or a vector file path.
    #[arg(long, value_name = "SOURCE")]
    pub embeddings: Option<EmbeddingSource>,

    /// Random embeddings of this width (same as `--embeddings random:<D>`).
    #[arg(long, value_name = "D", conflicts_with = "embeddings")]
    pub random_embeddings: Option<usize>,

    /// Keep pre-trained embedding rows fixed; only OOV rows are trained.
    #[arg(long)]
    pub freeze_pretrained: bool,

    /// Separate embedding matrices for source and target.
    #[arg(long)]
    pub untie_embeddings: bool,

    /// Format of an embeddings file (word2vec-bin or text; guessed from the extension).
    #[arg(long)]
    pub embeddings_format: Option<String>,

    /// Swap source and target of the prepared data before training.
    #[arg(long)]
    pub direction: Option<Direction>,

    /// Also evaluate every N steps.
    #[arg(long)]
    pub eval_every: Option<u64>,

    /// Dev pairs decoded at each evaluation.
    #[arg(long)]
    pub dev_sample: Option<usize>,

    /// Checkpoints re-scored on the full dev set at the end.
    #[arg(long)]
    pub top_k: Option<usize>,

    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<u64>,

    #[arg(long)]
    pub max_decode_len: Option<usize>,

    /// Feed the previous attention context to the decoder.
    #[arg(long)]
    pub input_feeding: bool,

    /// Train on a seeded random subset of this many pairs.
    #[arg(long)]
    pub train_limit: Option<usize>,

    /// Continue from a checkpoint of an earlier run in --out.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    data: PathBuf,
    out: PathBuf,
    embeddings: EmbeddingSource,
    freeze_pretrained: bool,
    train_limit: Option<usize>,
    resume: Option<PathBuf>,
    model: ModelConfig,
    training: TrainingConfig,
}

fn guess_format(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => "word2vec-bin",
        _ => "text",
    }
}

pub fn run(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let f = &ctx.file.train;
    let attention = if a.no_attention {
        false
    } else if a.attention {
        true
    } else {
        f.attention.unwrap_or(true)
    };
    let file_dir = f.direction.as_deref().map(str::parse).transpose()?;
    let file_emb = f.embeddings.as_deref().map(str::parse).transpose().map_err(anyhow::Error::msg)?;
    let defaults = TrainingConfig::default();
    let model_defaults = ModelConfig::default();
    let mut r = Resolved {
        data: a.data,
        out: a.out.clone(),
        embeddings: pick(
            a.embeddings.or(a.random_embeddings.map(|d| EmbeddingSource::Random(Some(d)))),
            &file_emb,
            EmbeddingSource::Auto,
        ),
        freeze_pretrained: a.freeze_pretrained || f.freeze_pretrained.unwrap_or(false),
        train_limit: a.train_limit.or(f.train_limit),
        resume: a.resume,
        model: ModelConfig {
            variant: if attention { "attention" } else { "plain" }.into(),
            vocab_size: 0,
            embed_dim: pick(a.embed_dim, &f.embed_dim, model_defaults.embed_dim),
            hidden: pick(a.hidden, &f.hidden, model_defaults.hidden),
            attention_dim: None,
            max_decode_len: pick(a.max_decode_len, &f.max_decode_len, model_defaults.max_decode_len),
            input_feeding: a.input_feeding || f.input_feeding.unwrap_or(false),
            tie_embeddings: !(a.untie_embeddings || f.untie_embeddings.unwrap_or(false)),
            frozen_rows: Vec::new(),
            seed: ctx.seed,
        },
        training: TrainingConfig {
            epochs: pick(a.epochs, &f.epochs, defaults.epochs),
            batch_size: pick(a.batch_size, &f.batch_size, defaults.batch_size),
            clip_norm: pick(a.clip_norm, &f.clip_norm, defaults.clip_norm),
            adam: AdamConfig {
                lr: pick(a.lr, &f.lr, defaults.adam.lr),
                ..defaults.adam
            },
            seed: ctx.seed,
            direction: pick(a.direction, &file_dir, Direction::Forward),
            eval_every: a.eval_every.or(f.eval_every),
            dev_sample: pick(a.dev_sample, &f.dev_sample, defaults.dev_sample),
            top_k: pick(a.top_k, &f.top_k, defaults.top_k),
            checkpoint_dir: a.out,
            max_steps: a.max_steps.or(f.max_steps),
            ..defaults
        },
    };
    // Validate before touching any data.
    r.training.validate()?;

    let vocab = Vocabulary::load(&r.data.join("vocab.txt"))
        .with_context(|| format!("loading vocabulary from {}", r.data.display()))?;
    r.model.vocab_size = vocab.len();
    let mut train_set = read_dataset(&r.data.join("train.jsonl"), Split::Train).context("reading train.jsonl")?;
    let dev_set = read_dataset(&r.data.join("dev.jsonl"), Split::Dev).context("reading dev.jsonl")?;
    if let Some(n) = r.train_limit {
        let idx = sample_indices(train_set.len(), n.min(train_set.len()), ctx.seed)?;
        train_set = idx.into_iter().map(|i| train_set[i].clone()).collect::<Vec<SentencePair>>();
    }

    let vectors_file = match &r.embeddings {
        EmbeddingSource::File(p) => Some(p.clone()),
        EmbeddingSource::Auto if r.data.join("vectors.txt").is_file() => Some(r.data.join("vectors.txt")),
        _ => None,
    };
    if r.freeze_pretrained && vectors_file.is_none() {
        bail!("--freeze-pretrained needs pre-trained vectors");
    }
    let matrix = match (&vectors_file, &r.embeddings) {
        (Some(p), _) => {
            let fmt = a.embeddings_format.clone().unwrap_or_else(|| guess_format(p).into());
            let keep: HashSet<String> = vocab.tokens().iter().cloned().collect();
            let vectors = load_vectors(p, &fmt, Some(&keep)).with_context(|| format!("reading {}", p.display()))?;
            if a.embed_dim.is_some_and(|d| d != vectors.dim()) {
                bail!("--embed-dim {} disagrees with {}-dimensional vectors", r.model.embed_dim, vectors.dim());
            }
            r.model.embed_dim = vectors.dim();
            let (m, oov) = init_embedding_matrix(&vocab, &vectors, ctx.seed);
            log::info!("embeddings from {}: {:.1}% of the vocabulary is OOV", p.display(), 100.0 * oov);
            if r.freeze_pretrained {
                r.model.frozen_rows = m.pretrained_rows();
            }
            m
        }
        (None, EmbeddingSource::Random(d)) => {
            if let Some(d) = d {
                r.model.embed_dim = *d;
            }
            random_embedding_matrix(&vocab, r.model.embed_dim, ctx.seed)
        }
        (None, _) => {
            log::warn!("no vectors.txt in {}; using random embeddings", r.data.display());
            random_embedding_matrix(&vocab, r.model.embed_dim, ctx.seed)
        }
    };
    r.model.validate()?;

    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    let mut manifest = ctx.manifest("train").config(&r)?;
    vocab.save(&r.out.join("vocab.txt"))?;
    log::info!(
        "training {} model on {} pairs ({} dev)",
        r.model.variant,
        train_set.len(),
        dev_set.len()
    );
    let outcome = match &r.resume {
        Some(ck) => resume(ck, &vocab, &train_set, &dev_set, &r.training)?,
        None => train(Seq2Seq::new(r.model.clone(), Some(matrix.matrix))?, &vocab, &train_set, &dev_set, &r.training)?,
    };
    let best = outcome.log.best.clone().context("training produced no selection")?;
    let best_path = r.out.join("best.bin");
    fs::copy(&outcome.best_checkpoint, &best_path)?;
    let summary = serde_json::json!({
        "best_checkpoint": best.checkpoint,
        "step": best.step,
        "dev_bleu": best.dev_bleu,
        "candidates": best.candidates,
        "steps_run": outcome.log.steps.len(),
    });
    fs::write(r.out.join("best.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("best dev BLEU {:.2} ({} at step {})", best.dev_bleu, best.checkpoint, best.step);

    manifest.inputs = vec![r.data.clone()];
    if let Some(p) = vectors_file {
        manifest.inputs.push(p);
    }
    manifest.outputs = vec![best_path, r.out.join("best.json"), r.out.join("train_log.jsonl"), r.out.join("vocab.txt")];
    manifest.write(&r.out.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_source_parsing() {
        assert_eq!("auto".parse(), Ok(EmbeddingSource::Auto));
        assert_eq!("random".parse(), Ok(EmbeddingSource::Random(None)));
        assert_eq!("random:50".parse(), Ok(EmbeddingSource::Random(Some(50))));
        assert!("random:x".parse::<EmbeddingSource>().is_err());
        assert_eq!("v.bin".parse(), Ok(EmbeddingSource::File("v.bin".into())));
    }
}
