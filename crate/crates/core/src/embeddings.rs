//! Pre-trained word vectors and the initial embedding matrix.
//!
//! Rows for tokens with a pre-trained vector copy it; every other row,
//! including the special tokens, is drawn i.i.d. uniform on `[-√3, √3]`
//! (zero mean, unit variance).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::corpus::{Vocabulary, SPECIALS};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::Float;

/// Half-width of the uniform OOV initialization interval.
pub fn oov_bound() -> Float {
    (3.0 as Float).sqrt()
}

/// Word vectors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordVectors {
    dim: usize,
    words: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, word: String, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::VectorFormat {
                position: format!("word {word:?}"),
                msg: format!("dimension {} != {}", vector.len(), self.dim),
            });
        }
        if let Some(&i) = self.index.get(&word) {
            self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
        } else {
            self.index.insert(word.clone(), self.words.len());
            self.words.push(word);
            self.values.extend_from_slice(vector);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), &self.values[i * self.dim..(i + 1) * self.dim]))
    }
}

/// A word-vector file encoding.
pub trait VectorFormat: Send + Sync {
    /// Reads all vectors, keeping only words in `keep` when given.
    fn read(&self, input: &mut dyn BufRead, keep: Option<&HashSet<String>>) -> Result<WordVectors>;
    fn write(&self, vectors: &WordVectors, out: &mut dyn Write) -> Result<()>;
}

/// word2vec binary: `"count dim\n"`, then per word the token bytes, a
/// space, and `dim` little-endian f32 values (an optional newline may
/// follow each record).
pub struct Word2VecBinary;

/// One `token v1 ... vd` per line, with an optional `"count dim"` header.
pub struct TextVectors;

pub fn vector_formats() -> Registry<dyn VectorFormat> {
    let mut r: Registry<dyn VectorFormat> = Registry::new("vector format");
    r.register("word2vec-bin", Box::new(Word2VecBinary))
        .register("text", Box::new(TextVectors));
    r
}

struct CountingReader<'a> {
    inner: &'a mut dyn BufRead,
    pos: u64,
}

impl CountingReader<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::VectorFormat {
            position: format!("byte {}", self.pos),
            msg: msg.into(),
        }
    }

    fn byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(None),
            _ => {
                self.pos += 1;
                Ok(Some(b[0]))
            }
        }
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.pos += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(self.fail("truncated vector")),
            Err(e) => Err(e.into()),
        }
    }
}

fn parse_header(line: &str, position: String) -> Result<(usize, usize)> {
    let bad = || Error::VectorFormat {
        position: position.clone(),
        msg: format!("unparseable header {line:?}"),
    };
    let mut it = line.split_whitespace();
    let count = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let dim: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if it.next().is_some() || dim == 0 {
        return Err(bad());
    }
    Ok((count, dim))
}

impl VectorFormat for Word2VecBinary {
    fn read(&self, input: &mut dyn BufRead, keep: Option<&HashSet<String>>) -> Result<WordVectors> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let (count, dim) = parse_header(header.trim_end(), "byte 0".into())?;
        let mut r = CountingReader {
            inner: input,
            pos: header.len() as u64,
        };
        let mut out = WordVectors::new(dim);
        let mut raw = vec![0u8; 4 * dim];
        let mut vec = vec![0f32; dim];
        for n in 0..count {
            let mut word = Vec::new();
            loop {
                match r.byte()? {
                    None => return Err(r.fail(format!("header promises {count} words, found {n}"))),
                    Some(b' ') => break,
                    Some(b'\n') if word.is_empty() => continue,
                    Some(b) => word.push(b),
                }
            }
            let word = String::from_utf8_lossy(&word).into_owned();
            r.exact(&mut raw)?;
            for (v, chunk) in vec.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            if keep.map_or(true, |k| k.contains(&word)) {
                out.insert(word, &vec)?;
            }
        }
        Ok(out)
    }

    fn write(&self, vectors: &WordVectors, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{} {}", vectors.len(), vectors.dim())?;
        for (w, v) in vectors.iter() {
            out.write_all(w.as_bytes())?;
            out.write_all(b" ")?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl VectorFormat for TextVectors {
    fn read(&self, input: &mut dyn BufRead, keep: Option<&HashSet<String>>) -> Result<WordVectors> {
        let mut out: Option<WordVectors> = None;
        let mut expected: Option<usize> = None;
        let mut seen = 0usize;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::VectorFormat {
                position: format!("line {line_no}"),
                msg,
            };
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let (count, dim) = parse_header(&line, format!("line {line_no}"))?;
                expected = Some(count);
                out = Some(WordVectors::new(dim));
                continue;
            }
            let values: Vec<f32> = fields[1..]
                .iter()
                .map(|f| f.parse::<f32>().map_err(|e| fail(format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(fail("token without values".into()));
            }
            let table = out.get_or_insert_with(|| WordVectors::new(values.len()));
            if values.len() != table.dim() {
                return Err(fail(format!("dimension {} != {}", values.len(), table.dim())));
            }
            seen += 1;
            if keep.map_or(true, |k| k.contains(fields[0])) {
                table.insert(fields[0].to_string(), &values)?;
            }
        }
        if let Some(count) = expected {
            if count != seen {
                return Err(Error::VectorFormat {
                    position: "end of file".into(),
                    msg: format!("header promises {count} words, found {seen}"),
                });
            }
        }
        out.ok_or_else(|| Error::VectorFormat {
            position: "line 1".into(),
            msg: "no vectors".into(),
        })
    }

    fn write(&self, vectors: &WordVectors, out: &mut dyn Write) -> Result<()> {
        for (w, v) in vectors.iter() {
            write!(out, "{w}")?;
            for x in v {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Loads a vector file in the named format (`word2vec-bin` or `text`).
pub fn load_vectors(path: &Path, format: &str, keep: Option<&HashSet<String>>) -> Result<WordVectors> {
    let formats = vector_formats();
    let fmt = formats.get(format)?;
    let mut reader = BufReader::new(File::open(path)?);
    fmt.read(&mut reader, keep)
}

pub fn save_vectors(path: &Path, format: &str, vectors: &WordVectors) -> Result<()> {
    let formats = vector_formats();
    let mut out = BufWriter::new(File::create(path)?);
    formats.get(format)?.write(vectors, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Pretrained,
    Random,
}

/// `|vocab| x d` initial embeddings with per-row provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Tensor,
    pub provenance: Vec<Provenance>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn pretrained_rows(&self) -> Vec<usize> {
        (0..self.provenance.len())
            .filter(|&i| self.provenance[i] == Provenance::Pretrained)
            .collect()
    }

    /// Share of non-special rows that were randomly initialized.
    pub fn oov_fraction(&self) -> f64 {
        let rest = &self.provenance[SPECIALS.len().min(self.provenance.len())..];
        if rest.is_empty() {
            return 0.0;
        }
        rest.iter().filter(|p| **p == Provenance::Random).count() as f64 / rest.len() as f64
    }
}

/// Builds the initial matrix; returns it with its OOV fraction.
pub fn init_embedding_matrix(vocab: &Vocabulary, vectors: &WordVectors, seed: u64) -> (EmbeddingMatrix, f64) {
    let dim = vectors.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = oov_bound();
    let mut matrix = Tensor::zeros(vocab.len(), dim);
    let mut provenance = Vec::with_capacity(vocab.len());
    for (id, token) in vocab.tokens().iter().enumerate() {
        let pretrained = if id < SPECIALS.len() { None } else { vectors.get(token) };
        let row = matrix.row_mut(id);
        match pretrained {
            Some(v) => {
                for (r, x) in row.iter_mut().zip(v) {
                    *r = *x as Float;
                }
                provenance.push(Provenance::Pretrained);
            }
            None => {
                for r in row.iter_mut() {
                    *r = rng.gen_range(-bound..=bound);
                }
                provenance.push(Provenance::Random);
            }
        }
    }
    let m = EmbeddingMatrix { matrix, provenance };
    let frac = m.oov_fraction();
    (m, frac)
}

/// All-random matrix of width `dim`, for runs without a vector file.
pub fn random_embedding_matrix(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingMatrix {
    init_embedding_matrix(vocab, &WordVectors::new(dim), seed).0
}
