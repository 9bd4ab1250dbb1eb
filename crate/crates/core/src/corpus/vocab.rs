use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::SentencePair;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const HEADER_TAG: &str = "#specials";

/// Token/id bijection. Ids 0..4 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts tokens on both sides of `train` and keeps those seen at
    /// least `min_count` times, ordered by descending frequency, then
    /// lexicographically.
    pub fn build(train: &[SentencePair], min_count: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("vocabulary needs training pairs".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for p in train {
            for t in p.source.iter().chain(&p.target) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !SPECIALS.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary with the specials followed by `tokens` in order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `BOS ids EOS`, with unknown tokens mapped to `UNK`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Tokens up to the first `EOS`, skipping `BOS` and `PAD`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != BOS && id != PAD)
            .map(|&id| self.tokens[id].clone())
            .collect()
    }

    /// File form: a header naming the specials, then one token per line
    /// (line `k` after the header holds id `k + 4`).
    pub fn to_file_string(&self) -> String {
        let mut s = String::from(HEADER_TAG);
        for sp in SPECIALS {
            s.push('\t');
            s.push_str(sp);
        }
        s.push('\n');
        for t in &self.tokens[SPECIALS.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty vocabulary file".into(),
        })?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.first() != Some(&HEADER_TAG) || fields[1..] != SPECIALS {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {HEADER_TAG} followed by {SPECIALS:?}"),
            });
        }
        Self::from_tokens(lines.map(String::from))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the file form.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
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
    fn min_count_one_and_two() {
        let d = vec![pair("a b", "a")];
        let v = Vocabulary::build(&d, 1).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<s>", "</s>", "<unk>", "a", "b"]);
        let v2 = Vocabulary::build(&d, 2).unwrap();
        assert_eq!(v2.tokens(), ["<pad>", "<s>", "</s>", "<unk>", "a"]);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(Vocabulary::build(&[], 1), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&[pair("c b a", "c")], 1).unwrap();
        assert_eq!(&v.tokens()[4..], ["c", "a", "b"]);
    }

    #[test]
    fn special_lookalikes_never_collide() {
        let v = Vocabulary::build(&[pair("<unk> x", "x")], 1).unwrap();
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(["a".to_string()]).unwrap();
        assert_eq!(v.encode(&["a"]), vec![BOS, 4, EOS]);
        assert_eq!(v.encode(&["zzz"]), vec![BOS, UNK, EOS]);
        assert_eq!(v.encode::<&str>(&[]), vec![BOS, EOS]);
    }

    #[test]
    fn file_round_trip_and_hash() {
        let v = Vocabulary::build(&[pair("the cat sat", "the dog")], 1).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("#specials\t<pad>\t<s>\t</s>\t<unk>\nthe\n"));
        let back = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
        let other = Vocabulary::build(&[pair("the dog ran", "the cat")], 1).unwrap();
        assert_ne!(other.content_hash(), v.content_hash());
        assert!(Vocabulary::parse("nonsense\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-e]{1,3}", 1..12)) {
            let sentence = words.join(" ");
            let v = Vocabulary::build(&[pair(&sentence, &sentence)], 1).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&words)), words);
        }
    }
}
