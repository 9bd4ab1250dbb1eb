use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use entailgen_core::corpus::{read_dataset, Split};
use entailgen_core::evaluation::{corpus_bleu_with, export_annotation_sample, tally, Smoothing};

use super::generate::load_model;
use super::Ctx;
use crate::config::pick;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model to evaluate.
    #[arg(long, value_name = "FILE", required_unless_present_any = ["self_test", "tally"])]
    pub checkpoint: Option<PathBuf>,

    /// Vocabulary file (default: vocab.txt next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// Directory written by `prepare`.
    #[arg(long, value_name = "DIR", required_unless_present = "tally")]
    pub data: Option<PathBuf>,

    /// train, dev or test.
    #[arg(long)]
    pub split: Option<Split>,

    /// Score the gold targets against themselves (sanity check, BLEU 100).
    #[arg(long, conflicts_with = "checkpoint")]
    pub self_test: bool,

    /// BLEU smoothing: none, or add-one for diagnostics on tiny sets.
    #[arg(long, value_parser = parse_smoothing)]
    pub smoothing: Option<Smoothing>,

    /// Export a seeded sample of N items for manual judgement.
    #[arg(long, value_name = "N")]
    pub annotate: Option<usize>,

    /// Accuracy from a filled-in annotation file.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["checkpoint", "self_test", "annotate"])]
    pub tally: Option<PathBuf>,

    /// Directory for bleu.json, outputs.txt, annotation.jsonl and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn parse_smoothing(s: &str) -> Result<Smoothing, String> {
    match s {
        "none" => Ok(Smoothing::None),
        "add-one" => Ok(Smoothing::AddOne),
        _ => Err(format!("unknown smoothing {s:?} (none, add-one)")),
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    checkpoint: Option<&'a Path>,
    data: Option<&'a Path>,
    split: Split,
    self_test: bool,
    smoothing: Smoothing,
    annotate: Option<usize>,
    tally: Option<&'a Path>,
    out: Option<&'a Path>,
}

pub fn run(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let f = &ctx.file.eval;
    let file_split = f.split.as_deref().map(str::parse).transpose()?;
    let split = pick(a.split, &file_split, Split::Test);
    let annotate = a.annotate.or(f.annotate);
    let r = Resolved {
        checkpoint: a.checkpoint.as_deref(),
        data: a.data.as_deref(),
        split,
        self_test: a.self_test,
        smoothing: a.smoothing.unwrap_or_default(),
        annotate,
        tally: a.tally.as_deref(),
        out: a.out.as_deref(),
    };
    let mut manifest = ctx.manifest("eval").config(&r)?;

    if let Some(t) = &a.tally {
        let report = tally(t)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        manifest.inputs.push(t.clone());
        if let Some(out) = &a.out {
            fs::create_dir_all(out)?;
            let p = out.join("tally.json");
            fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")?;
            manifest.outputs.push(p);
            manifest.write(&out.join("eval.manifest.json"))?;
        }
        return Ok(());
    }

    let data = a.data.as_ref().expect("clap requires --data here");
    let path = data.join(format!("{}.jsonl", split.name()));
    let pairs = read_dataset(&path, split).with_context(|| format!("reading {}", path.display()))?;
    if pairs.is_empty() {
        bail!("{} has no pairs", path.display());
    }
    manifest.inputs.push(path);
    let sources: Vec<Vec<String>> = pairs.iter().map(|p| p.source.clone()).collect();
    let gold: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    let outputs = if a.self_test {
        gold.clone()
    } else {
        let ck = a.checkpoint.as_ref().expect("clap requires --checkpoint here");
        let (model, vocab, vocab_path) = load_model(ck, a.vocab.as_deref())?;
        manifest.inputs.extend([ck.clone(), vocab_path]);
        log::info!("decoding {} {} sentences", sources.len(), split.name());
        model.greedy_decode_many(&vocab, &sources, 64)?
    };
    if r.smoothing != Smoothing::None {
        log::warn!("smoothed BLEU is not comparable with unsmoothed scores");
    }
    let report = corpus_bleu_with(&outputs, &gold, r.smoothing)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");

    if annotate.is_some() && a.out.is_none() {
        bail!("--annotate needs --out for the sample file");
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let bp = out.join("bleu.json");
        fs::write(&bp, json + "\n")?;
        let op = out.join("outputs.txt");
        let text: String = outputs.iter().map(|o| o.join(" ") + "\n").collect();
        fs::write(&op, text)?;
        manifest.outputs.extend([bp, op]);
        if let Some(n) = annotate {
            let ap = out.join("annotation.jsonl");
            export_annotation_sample(&sources, &gold, &outputs, n, ctx.seed, &ap)?;
            manifest.outputs.push(ap);
        }
        manifest.write(&out.join("eval.manifest.json"))?;
    }
    Ok(())
}
