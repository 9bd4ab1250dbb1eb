//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "E2GCKPT\0"
//! version    u32 LE
//! config     u32 LE length + JSON bytes
//! vocab hash 32 bytes (SHA-256 of the vocabulary file)
//! count      u32 LE
//! per tensor: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//!             u32 rank, rank x u64 extents, little-endian values
//! ```
//!
//! Model checkpoints and optimizer state share this layout; the JSON
//! block says which one a file holds.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Seq2Seq};
use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::optimizer::{AdamConfig, AdamState};
use crate::Float;

pub const MAGIC: &[u8; 8] = b"E2GCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[cfg(not(feature = "f32"))]
const NATIVE_DTYPE: u8 = DTYPE_F64;
#[cfg(feature = "f32")]
const NATIVE_DTYPE: u8 = DTYPE_F32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Model {
        model: ModelConfig,
        /// Optimizer step at which the model was saved.
        #[serde(default)]
        step: u64,
    },
    Optimizer {
        adam: AdamConfig,
        step: u64,
        /// Trainer bookkeeping needed to resume.
        #[serde(default)]
        extra: serde_json::Value,
    },
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    pub vocab_hash: [u8; 32],
    pub tensors: Vec<(String, Tensor)>,
}

pub fn hash_bytes(hex: &str) -> Result<[u8; 32]> {
    if hex.len() != 64 {
        return Err(Error::InvalidArgument(format!("bad hash {hex:?}")));
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::InvalidArgument(format!("bad hash {hex:?}")))?;
    }
    Ok(out)
}

pub fn hash_hex(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let json = serde_json::to_vec(&c.header)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&c.vocab_hash)?;
        w.write_all(&(c.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &c.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[NATIVE_DTYPE])?;
            w.write_all(&2u32.to_le_bytes())?;
            for extent in t.shape() {
                w.write_all(&(extent as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
            _ => e.into(),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if r.bytes(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u32("config length")? as usize;
    let header: Header = serde_json::from_slice(&r.bytes(len, "config")?)?;
    let vocab_hash: [u8; 32] = r.bytes(32, "vocabulary hash")?.try_into().expect("32 bytes");
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let what = format!("tensor {i}");
        let nlen = r.u32(&what)? as usize;
        let name = String::from_utf8(r.bytes(nlen, &what)?)
            .map_err(|_| Error::InvalidArgument(format!("{what}: name is not UTF-8")))?;
        let dtype = r.bytes(1, &name)?[0];
        let rank = r.u32(&name)?;
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u64(&name).map(|d| d as usize))
            .collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(Error::shape("checkpoint", format!("{name} has rank {rank}"))),
        };
        let n = rows * cols;
        let data: Vec<Float> = match dtype {
            DTYPE_F32 => r
                .bytes(4 * n, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as Float)
                .collect(),
            DTYPE_F64 => r
                .bytes(8 * n, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")) as Float)
                .collect(),
            other => {
                return Err(Error::InvalidArgument(format!("{name}: unknown dtype tag {other}")))
            }
        };
        tensors.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(Container {
        header,
        vocab_hash,
        tensors,
    })
}

/// Writes model parameters, config and the vocabulary hash.
pub fn save_checkpoint(model: &Seq2Seq, vocab_hash: &str, step: u64, path: &Path) -> Result<()> {
    let c = Container {
        header: Header::Model {
            model: model.config.clone(),
            step,
        },
        vocab_hash: hash_bytes(vocab_hash)?,
        tensors: model
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect(),
    };
    write_container(path, &c)
}

/// A loaded model and the step it was saved at.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: Seq2Seq,
    pub step: u64,
    pub vocab_hash: String,
}

/// Loads a model checkpoint; with `vocab`, fails unless its hash matches.
pub fn load_checkpoint(path: &Path, vocab: Option<&Vocabulary>) -> Result<LoadedModel> {
    let c = read_container(path)?;
    let (config, step) = match c.header {
        Header::Model { model, step } => (model, step),
        Header::Optimizer { .. } => {
            return Err(Error::InvalidArgument(format!(
                "{} holds optimizer state, not a model",
                path.display()
            )))
        }
    };
    let stored = hash_hex(&c.vocab_hash);
    if let Some(v) = vocab {
        let found = v.content_hash();
        if found != stored {
            return Err(Error::VocabHashMismatch {
                expected: stored,
                found,
            });
        }
    }
    let mut model = Seq2Seq::new(config, None)?;
    if c.tensors.len() != model.store.len() {
        return Err(Error::shape(
            "checkpoint",
            format!("{} tensors, model has {}", c.tensors.len(), model.store.len()),
        ));
    }
    for (name, t) in c.tensors {
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("unexpected tensor {name}")))?;
        let p = model.store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("{name}: {:?} vs {:?}", t.shape(), p.value.shape()),
            ));
        }
        p.value = t;
    }
    Ok(LoadedModel {
        model,
        step,
        vocab_hash: stored,
    })
}

/// Persists ADAM moments (`m/<param>`, `v/<param>`) with trainer bookkeeping.
pub fn save_optimizer(
    model: &Seq2Seq,
    state: &AdamState,
    vocab_hash: &str,
    extra: serde_json::Value,
    path: &Path,
) -> Result<()> {
    state.check_matches(&model.store)?;
    let mut tensors = Vec::with_capacity(2 * state.m.len());
    for ((_, p), m) in model.store.iter().zip(&state.m) {
        tensors.push((format!("m/{}", p.name), m.clone()));
    }
    for ((_, p), v) in model.store.iter().zip(&state.v) {
        tensors.push((format!("v/{}", p.name), v.clone()));
    }
    write_container(
        path,
        &Container {
            header: Header::Optimizer {
                adam: state.config,
                step: state.step,
                extra,
            },
            vocab_hash: hash_bytes(vocab_hash)?,
            tensors,
        },
    )
}

pub fn load_optimizer(path: &Path, model: &Seq2Seq, vocab_hash: &str) -> Result<(AdamState, serde_json::Value)> {
    let c = read_container(path)?;
    let (adam, step, extra) = match c.header {
        Header::Optimizer { adam, step, extra } => (adam, step, extra),
        Header::Model { .. } => {
            return Err(Error::InvalidArgument(format!(
                "{} holds a model, not optimizer state",
                path.display()
            )))
        }
    };
    let stored = hash_hex(&c.vocab_hash);
    if stored != vocab_hash {
        return Err(Error::VocabHashMismatch {
            expected: stored,
            found: vocab_hash.to_string(),
        });
    }
    let mut state = AdamState::new(&model.store, adam)?;
    state.step = step;
    let mut found = 0;
    for (name, t) in c.tensors {
        let (slot, pname) = match name.split_once('/') {
            Some(("m", rest)) => (&mut state.m, rest),
            Some(("v", rest)) => (&mut state.v, rest),
            _ => return Err(Error::InvalidArgument(format!("unexpected tensor {name}"))),
        };
        let id = model
            .store
            .id(pname)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {pname}")))?;
        if slot[id.index()].shape() != t.shape() {
            return Err(Error::shape("optimizer state", format!("{name}: {:?}", t.shape())));
        }
        slot[id.index()] = t;
        found += 1;
    }
    if found != 2 * model.store.len() {
        return Err(Error::MissingTensor(format!(
            "optimizer state has {found} moment tensors, expected {}",
            2 * model.store.len()
        )));
    }
    Ok((state, extra))
}
