use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use super::{SentencePair, Split, Tokenizer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnliRecord {
    pub label: Label,
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Deserialize)]
struct RawRecord {
    gold_label: Option<String>,
    sentence1: Option<String>,
    sentence2: Option<String>,
}

/// Parses one SNLI JSONL line. Unlabeled (`"-"`) records give `Ok(None)`.
pub fn parse_snli_record(line: &str, line_no: usize) -> Result<Option<SnliRecord>> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let field = |v: Option<String>, name: &str| v.ok_or_else(|| err(format!("missing field `{name}`")));
    let label = field(raw.gold_label, "gold_label")?;
    let premise = field(raw.sentence1, "sentence1")?;
    let hypothesis = field(raw.sentence2, "sentence2")?;
    let label = match label.as_str() {
        "-" => return Ok(None),
        "entailment" => Label::Entailment,
        "neutral" => Label::Neutral,
        "contradiction" => Label::Contradiction,
        other => return Err(err(format!("unknown gold_label {other:?}"))),
    };
    Ok(Some(SnliRecord {
        label,
        premise,
        hypothesis,
    }))
}

/// Labeled records of one split file plus the number of unlabeled ones skipped.
#[derive(Clone, Debug, Default)]
pub struct SnliFile {
    pub records: Vec<SnliRecord>,
    pub skipped: usize,
}

pub fn read_snli_file(path: &Path) -> Result<SnliFile> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed: Vec<Option<SnliRecord>> = lines
        .par_iter()
        .map(|(n, l)| parse_snli_record(l, *n))
        .collect::<Result<_>>()?;
    let skipped = parsed.iter().filter(|r| r.is_none()).count();
    Ok(SnliFile {
        records: parsed.into_iter().flatten().collect(),
        skipped,
    })
}

/// Entailment records, tokenized, in input order. Records where either
/// side has no tokens are dropped.
pub fn filter_entailment(records: &[SnliRecord], split: Split, tokenizer: &Tokenizer) -> Vec<SentencePair> {
    records
        .par_iter()
        .filter(|r| r.label == Label::Entailment)
        .filter_map(|r| {
            let src = tokenizer.tokenize(&r.premise).ok()?;
            let tgt = tokenizer.tokenize(&r.hypothesis).ok()?;
            SentencePair::new(src, tgt, split).ok()
        })
        .collect()
}
