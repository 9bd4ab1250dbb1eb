//! SNLI ingestion: parsing, entailment filtering, tokenization,
//! vocabulary, batching and direction swapping.

mod batch;
mod snli;
mod tokenize;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{batches, pad_sequences, Batch, EncodedPair};
pub use snli::{filter_entailment, parse_snli_record, read_snli_file, Label, SnliFile, SnliRecord};
pub use tokenize::Tokenizer;
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// Generation direction. `Inverse` maps hypotheses back to premises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Inverse,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "inverse" => Ok(Direction::Inverse),
            _ => Err(Error::InvalidArgument(format!("unknown direction {s:?}"))),
        }
    }
}

/// One training example: the model reads `source` and should produce `target`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub split: Split,
    pub direction: Direction,
}

impl SentencePair {
    pub fn new(source: Vec<String>, target: Vec<String>, split: Split) -> Result<Self> {
        for side in [&source, &target] {
            if side.is_empty() {
                return Err(Error::InvalidArgument("sentence pair side is empty".into()));
            }
            if let Some(t) = side.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
                return Err(Error::InvalidArgument(format!("invalid token {t:?}")));
            }
        }
        Ok(Self {
            source,
            target,
            split,
            direction: Direction::Forward,
        })
    }
}

/// Exchanges source and target of every pair. An involution.
pub fn swap_direction(dataset: Vec<SentencePair>) -> Vec<SentencePair> {
    dataset
        .into_iter()
        .map(|p| SentencePair {
            source: p.target,
            target: p.source,
            split: p.split,
            direction: p.direction.flipped(),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PairRecord<'a> {
    #[serde(borrow)]
    source: Vec<std::borrow::Cow<'a, str>>,
    #[serde(borrow)]
    target: Vec<std::borrow::Cow<'a, str>>,
}

/// Writes `{"source": [...], "target": [...]}` lines.
pub fn write_dataset(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in pairs {
        let rec = PairRecord {
            source: p.source.iter().map(|s| s.as_str().into()).collect(),
            target: p.target.iter().map(|s| s.as_str().into()).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, split: Split) -> Result<Vec<SentencePair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let pair = SentencePair::new(
            rec.source.into_iter().map(|s| s.into_owned()).collect(),
            rec.target.into_iter().map(|s| s.into_owned()).collect(),
            split,
        )
        .map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Summary written by dataset preparation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub vocab_size: usize,
    /// Share of non-special vocabulary entries without a pre-trained
    /// vector; `None` when no vectors were supplied.
    pub oov_fraction: Option<f64>,
    /// Records with gold label "-" across all splits.
    pub skipped_unlabeled: usize,
    /// Entailment records dropped because a side tokenized to nothing.
    pub dropped_empty: usize,
    pub direction: Direction,
}

/// File names of the three SNLI 1.0 JSONL splits.
pub const SNLI_FILES: [(Split, &str); 3] = [
    (Split::Train, "snli_1.0_train.jsonl"),
    (Split::Dev, "snli_1.0_dev.jsonl"),
    (Split::Test, "snli_1.0_test.jsonl"),
];

/// Entailment pairs of all three splits plus bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct PreparedCorpus {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    pub skipped_unlabeled: usize,
    pub dropped_empty: usize,
}

/// Reads the SNLI 1.0 JSONL files in `dir` and keeps entailment pairs,
/// swapped when `direction` is inverse. Missing files are reported by name.
pub fn load_snli_dir(dir: &Path, tokenizer: &Tokenizer, direction: Direction) -> Result<PreparedCorpus> {
    let missing: Vec<&str> = SNLI_FILES
        .iter()
        .filter(|(_, f)| !dir.join(f).is_file())
        .map(|(_, f)| *f)
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} is missing {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let mut out = PreparedCorpus::default();
    for (split, name) in SNLI_FILES {
        let file = read_snli_file(&dir.join(name))?;
        let entail = file.records.iter().filter(|r| r.label == Label::Entailment).count();
        let mut pairs = filter_entailment(&file.records, split, tokenizer);
        out.skipped_unlabeled += file.skipped;
        out.dropped_empty += entail - pairs.len();
        if direction == Direction::Inverse {
            pairs = swap_direction(pairs);
        }
        match split {
            Split::Train => out.train = pairs,
            Split::Dev => out.dev = pairs,
            Split::Test => out.test = pairs,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(s: &str, t: &str) -> SentencePair {
        SentencePair::new(
            s.split(' ').map(String::from).collect(),
            t.split(' ').map(String::from).collect(),
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn swap_examples() {
        let d = vec![pair("a", "b"), pair("c", "d")];
        let s = swap_direction(d.clone());
        assert_eq!(s[0].source, vec!["b"]);
        assert_eq!(s[0].target, vec!["a"]);
        assert_eq!(s[1].source, vec!["d"]);
        assert_eq!(s[0].direction, Direction::Inverse);
        assert_eq!(swap_direction(s), d);
        assert!(swap_direction(Vec::new()).is_empty());
    }

    #[test]
    fn pair_invariants_enforced() {
        assert!(SentencePair::new(vec![], vec!["a".into()], Split::Dev).is_err());
        assert!(SentencePair::new(vec!["a b".into()], vec!["a".into()], Split::Dev).is_err());
        assert!(SentencePair::new(vec!["".into()], vec!["a".into()], Split::Dev).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = vec![pair("A man \"sings\" .", "A man sings ."), pair("x", "y")];
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path, Split::Train).unwrap(), d);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"source\":[\"A\",\"man\""));
    }

    proptest! {
        #[test]
        fn swap_is_an_involution(words in prop::collection::vec(("[a-z]{1,4}", "[a-z]{1,4}"), 0..20)) {
            let d: Vec<_> = words.iter().map(|(a, b)| pair(a, b)).collect();
            let once = swap_direction(d.clone());
            prop_assert_eq!(once.len(), d.len());
            prop_assert_eq!(swap_direction(once), d);
        }
    }
}
