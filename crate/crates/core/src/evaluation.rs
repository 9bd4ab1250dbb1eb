//! Corpus BLEU and the manual-annotation sample workflow.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Precision smoothing. Only `None` is standard BLEU; the others exist
/// for diagnostics on tiny corpora.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to matches and totals for orders above 1.
    AddOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Corpus BLEU on a 0–100 scale.
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

#[derive(Clone, Copy, Default)]
struct Counts {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    cand_len: usize,
    ref_len: usize,
}

impl Counts {
    fn merge(mut self, o: Counts) -> Counts {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
        self
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

fn sentence_counts<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Counts {
    let mut c = Counts {
        cand_len: cand.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let cc = ngram_counts(cand, n);
        let rc = ngram_counts(reference, n);
        c.totals[n - 1] = cand.len().saturating_sub(n - 1);
        c.matches[n - 1] = cc
            .iter()
            .map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    c
}

/// Corpus-level BLEU-4 with one reference per candidate.
pub fn corpus_bleu<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuReport> {
    corpus_bleu_with(candidates, references, Smoothing::None)
}

/// Corpus BLEU: clipped n-gram counts are summed over the corpus, then
/// `BLEU = 100 · BP · exp(¼ Σ ln pₙ)` with `BP = exp(1 − r/c)` when
/// `c < r`. Any zero precision gives 0. An order with no candidate
/// n-grams at all has nothing to be imprecise about and counts as `pₙ = 1`.
pub fn corpus_bleu_with<S: AsRef<str> + Sync>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyDataset("BLEU needs at least one sentence".into()));
    }
    // Counts are integers, so the merge order does not affect the result.
    let counts = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| sentence_counts(c, r))
        .reduce(Counts::default, Counts::merge);

    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (mut m, mut t) = (counts.matches[n] as f64, counts.totals[n] as f64);
        if smoothing == Smoothing::AddOne && n > 0 {
            m += 1.0;
            t += 1.0;
        }
        precisions[n] = if t == 0.0 { 1.0 } else { m / t };
    }
    let (c, r) = (counts.cand_len as f64, counts.ref_len as f64);
    let brevity_penalty = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    let bleu = if precisions.iter().any(|p| *p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        candidate_length: counts.cand_len,
        reference_length: counts.ref_len,
        matches: counts.matches,
        totals: counts.totals,
    })
}

/// One line of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub index: usize,
    pub source: String,
    pub gold: String,
    pub generated: String,
    pub verdict: Option<serde_json::Value>,
}

/// Sorted sample of `n` distinct indices out of `len`, fixed by `seed`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} items from {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Writes a seeded sample of `n` test items as JSONL with empty verdicts.
pub fn export_annotation_sample<S: AsRef<str>>(
    sources: &[Vec<S>],
    gold: &[Vec<S>],
    generated: &[Vec<S>],
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<Vec<usize>> {
    if sources.len() != gold.len() || sources.len() != generated.len() {
        return Err(Error::InvalidArgument(
            "sources, gold targets and outputs must align".into(),
        ));
    }
    let idx = sample_indices(sources.len(), n, seed)?;
    let join = |s: &[S]| s.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    let mut out = BufWriter::new(File::create(path)?);
    for &i in &idx {
        let item = AnnotationItem {
            index: i,
            source: join(&sources[i]),
            gold: join(&gold[i]),
            generated: join(&generated[i]),
            verdict: None,
        };
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TallyReport {
    pub correct: usize,
    pub incorrect: usize,
    pub total: usize,
    /// Percentage of items judged correct.
    pub accuracy: f64,
}

fn verdict_value(v: &serde_json::Value) -> Option<bool> {
    match v {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "correct" | "1" => Some(true),
            "no" | "n" | "false" | "incorrect" | "0" => Some(false),
            _ => None,
        },
        serde_json::Value::Number(n) => n.as_u64().filter(|x| *x <= 1).map(|x| x == 1),
        _ => None,
    }
}

/// Reads a filled-in annotation file. Every line needs a yes/no verdict;
/// otherwise the offending line numbers are returned as an error.
pub fn tally(path: &Path) -> Result<TallyReport> {
    let reader = BufReader::new(File::open(path)?);
    let (mut yes, mut no, mut bad) = (0, 0, Vec::new());
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: AnnotationItem = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match item.verdict.as_ref().and_then(verdict_value) {
            Some(true) => yes += 1,
            Some(false) => no += 1,
            None => bad.push(i + 1),
        }
    }
    if !bad.is_empty() {
        return Err(Error::UnfilledVerdicts(bad));
    }
    let total = yes + no;
    if total == 0 {
        return Err(Error::EmptyDataset("annotation file has no items".into()));
    }
    Ok(TallyReport {
        correct: yes,
        incorrect: no,
        total,
        accuracy: 100.0 * yes as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn bleu(c: &[&str], r: &[&str]) -> BleuReport {
        let c: Vec<_> = c.iter().map(|s| toks(s)).collect();
        let r: Vec<_> = r.iter().map(|s| toks(s)).collect();
        corpus_bleu(&c, &r).unwrap()
    }

    #[test]
    fn self_bleu_is_100() {
        let r = bleu(&["a man runs .", "two dogs"], &["a man runs .", "two dogs"]);
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn short_candidate_brevity_penalty() {
        let r = bleu(&["a b c d"], &["a b c d e"]);
        assert_eq!(r.precisions, [1.0; 4]);
        assert!((r.brevity_penalty - (-0.25f64).exp()).abs() < 1e-12);
        assert!((r.bleu - 77.88).abs() < 0.01);
    }

    #[test]
    fn disjoint_is_zero() {
        let r = bleu(&["x y z"], &["a b c"]);
        assert_eq!(r.precisions[0], 0.0);
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn input_errors() {
        let one = vec![toks("a")];
        assert!(corpus_bleu(&one, &[]).is_err());
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(corpus_bleu(&empty, &empty).is_err());
    }

    #[test]
    fn add_one_smoothing_rescues_zero_orders() {
        let c = vec![toks("the the the the")];
        let r = vec![toks("the cat")];
        assert_eq!(corpus_bleu(&c, &r).unwrap().bleu, 0.0);
        assert!(corpus_bleu_with(&c, &r, Smoothing::AddOne).unwrap().bleu > 0.0);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let a = sample_indices(1000, 100, 1).unwrap();
        assert_eq!(a, sample_indices(1000, 100, 1).unwrap());
        assert_ne!(a, sample_indices(1000, 100, 2).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_indices(5, 6, 1).is_err());
    }

    #[test]
    fn export_then_tally() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.jsonl");
        let src: Vec<Vec<String>> = (0..10).map(|i| toks(&format!("s {i}"))).collect();
        let gold = src.clone();
        let gen = src.clone();
        export_annotation_sample(&src, &gold, &gen, 4, 3, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("\"verdict\":null"));
        match tally(&p) {
            Err(Error::UnfilledVerdicts(lines)) => assert_eq!(lines, vec![1, 2, 3, 4]),
            other => panic!("{other:?}"),
        }
        let filled = text.replace("\"verdict\":null", "\"verdict\":\"yes\"");
        std::fs::write(&p, filled).unwrap();
        assert_eq!(tally(&p).unwrap().accuracy, 100.0);
    }

    proptest! {
        #[test]
        fn bleu_is_order_invariant_and_bounded(
            pairs in prop::collection::vec(("[a-d]( [a-d]){0,6}", "[a-d]( [a-d]){0,6}"), 1..8),
            rot in 0usize..8,
        ) {
            let c: Vec<_> = pairs.iter().map(|(a, _)| toks(a)).collect();
            let r: Vec<_> = pairs.iter().map(|(_, b)| toks(b)).collect();
            let base = corpus_bleu(&c, &r).unwrap();
            let k = rot % c.len();
            let (mut c2, mut r2) = (c.clone(), r.clone());
            c2.rotate_left(k);
            r2.rotate_left(k);
            let rotated = corpus_bleu(&c2, &r2).unwrap();
            prop_assert_eq!(base.bleu, rotated.bleu);
            prop_assert!((0.0..=100.0).contains(&base.bleu));
            prop_assert!(base.brevity_penalty > 0.0 && base.brevity_penalty <= 1.0);
            prop_assert!(base.precisions.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert_eq!(corpus_bleu(&c, &c).unwrap().bleu, 100.0);
        }
    }
}
