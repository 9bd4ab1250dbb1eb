use crate::error::{Error, Result};

const LEADING: &[char] = &['"', '(', '[', '{', '`', '\''];
const TRAILING: &[char] = &['.', ',', '!', '?', ';', ':', '"', ')', ']', '}', '\''];
const CLITICS: &[&str] = &["'s", "'re", "'ve", "'ll", "'d", "'m"];

/// Whitespace split, punctuation detached from word edges, and English
/// clitics split off (`don't` → `do n't`, `man's` → `man 's`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn new(lowercase: bool) -> Self {
        Self { lowercase }
    }

    pub fn tokenize(&self, sentence: &str) -> Result<Vec<String>> {
        let text = sentence.replace(['\u{2019}', '\u{2018}'], "'");
        let text = if self.lowercase { text.to_lowercase() } else { text };
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            split_chunk(chunk, &mut out);
        }
        if out.is_empty() {
            return Err(Error::Tokenize(format!("no tokens in {sentence:?}")));
        }
        Ok(out)
    }
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut word = chunk;
    while let Some(c) = word.chars().next() {
        // A leading apostrophe stays when it starts a clitic-like word ('em, '90s).
        if LEADING.contains(&c) && !(c == '\'' && word.len() > 1 && word[1..].starts_with(char::is_alphanumeric)) {
            out.push(c.to_string());
            word = &word[c.len_utf8()..];
        } else {
            break;
        }
    }
    let mut trailing = Vec::new();
    while let Some(c) = word.chars().next_back() {
        if TRAILING.contains(&c) {
            trailing.push(c.to_string());
            word = &word[..word.len() - c.len_utf8()];
        } else {
            break;
        }
    }
    if !word.is_empty() {
        split_clitics(word, out);
    }
    out.extend(trailing.into_iter().rev());
}

fn split_clitics(word: &str, out: &mut Vec<String>) {
    let lower = word.to_lowercase();
    if lower.len() > 3 && lower.ends_with("n't") {
        let (stem, neg) = match lower.as_str() {
            "can't" => (&word[..2], &word[2..]),
            "won't" => (&word[..2], &word[2..]),
            _ => word.split_at(word.len() - 3),
        };
        out.push(stem.to_string());
        out.push(neg.to_string());
        return;
    }
    for clitic in CLITICS {
        if lower.len() > clitic.len() && lower.ends_with(clitic) {
            let (stem, tail) = word.split_at(word.len() - clitic.len());
            out.push(stem.to_string());
            out.push(tail.to_string());
            return;
        }
    }
    out.push(word.to_string());
}
