use std::fmt;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::variant::{decoder_variants, DecoderVariant, StepFeatures};
use crate::autodiff::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{Batch, Vocabulary, BOS, EOS, PAD};
use crate::embeddings::oov_bound;
use crate::error::{Error, Result};
use crate::nn::{lstm_cell, masked_cross_entropy, AttentionKeys, LstmWeights};
use crate::registry::Registry;
use crate::Float;

pub const EMBEDDING: &str = "embedding";
pub const TARGET_EMBEDDING: &str = "target_embedding";
pub const ENCODER: &str = "encoder";
pub const DECODER: &str = "decoder";
pub const OUTPUT_W: &str = "output.w";
pub const OUTPUT_B: &str = "output.b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Registered decoder variant name (`attention` or `plain`).
    pub variant: String,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Width of the attention scorer; defaults to `hidden`.
    #[serde(default)]
    pub attention_dim: Option<usize>,
    pub max_decode_len: usize,
    /// Feed the previous attention context into the decoder input.
    #[serde(default)]
    pub input_feeding: bool,
    /// Share one embedding matrix between source and target.
    #[serde(default = "yes")]
    pub tie_embeddings: bool,
    /// Embedding rows kept fixed during training (pre-trained vectors
    /// when freezing is requested).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<usize>,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "attention".into(),
            vocab_size: 0,
            embed_dim: 300,
            hidden: 256,
            attention_dim: None,
            max_decode_len: 50,
            input_feeding: false,
            tie_embeddings: true,
            frozen_rows: Vec::new(),
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or(self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed_dim == 0 || self.max_decode_len == 0 {
            return Err(Error::InvalidArgument(
                "hidden size, embedding dim and max decode length must be at least 1".into(),
            ));
        }
        if self.vocab_size <= super::super::corpus::SPECIALS.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} has no ordinary tokens",
                self.vocab_size
            )));
        }
        if let Some(r) = self.frozen_rows.iter().find(|&&r| r >= self.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "frozen row {r} outside a vocabulary of {}",
                self.vocab_size
            )));
        }
        if self.attention_dim == Some(0) {
            return Err(Error::InvalidArgument("attention dim must be at least 1".into()));
        }
        variant(&self.variant).map(|_| ())
    }
}

fn variants() -> &'static Registry<dyn DecoderVariant> {
    static REG: OnceLock<Registry<dyn DecoderVariant>> = OnceLock::new();
    REG.get_or_init(decoder_variants)
}

pub fn variant(name: &str) -> Result<&'static dyn DecoderVariant> {
    variants().get(name)
}

pub fn variant_names() -> Vec<&'static str> {
    variants().names()
}

/// Encoder results for one padded source batch.
pub struct EncoderOutput {
    /// Hidden states stacked time-major, `[T*B, h]`.
    pub states: Var,
    pub final_h: Var,
    pub final_c: Var,
    /// Batch-major source mask, entry `b*T + t`.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub context: Option<Var>,
}

/// One greedy decode with the attention weights used at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub ids: Vec<usize>,
    /// Per step, weights over the framed source positions.
    pub attention: Vec<Vec<Float>>,
}

/// Encoder–decoder LSTM and its parameters.
#[derive(Clone)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub store: ParamStore,
    embed: ParamId,
    target_embed: ParamId,
    encoder: LstmWeights,
    decoder: LstmWeights,
    out_w: ParamId,
    out_b: ParamId,
    variant: &'static dyn DecoderVariant,
}

impl fmt::Debug for Seq2Seq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Seq2Seq")
            .field("config", &self.config)
            .field("parameters", &self.store.numel())
            .finish()
    }
}

impl Seq2Seq {
    /// Fresh model seeded from `config.seed`. `embeddings`, when given,
    /// becomes the (shared) embedding matrix; otherwise rows are uniform
    /// on `[-√3, √3]`.
    pub fn new(config: ModelConfig, embeddings: Option<Tensor>) -> Result<Self> {
        config.validate()?;
        let variant = variant(&config.variant)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden);
        let bound = oov_bound();

        let table = match embeddings {
            Some(t) if t.shape() != [v, d] => {
                return Err(Error::shape(
                    "embedding",
                    format!("{:?} for vocab {v}, dim {d}", t.shape()),
                ))
            }
            Some(t) => t,
            None => Tensor::uniform(v, d, -bound, bound, &mut rng),
        };
        let target_table = (!config.tie_embeddings).then(|| table.clone());
        let embed = store.add(EMBEDDING, table)?;
        let target_embed = match target_table {
            Some(t) => store.add(TARGET_EMBEDDING, t)?,
            None => embed,
        };
        let encoder = LstmWeights::init(&mut store, ENCODER, d, h, &mut rng)?;
        let dec_in = d + if config.input_feeding { h } else { 0 };
        let decoder = LstmWeights::init(&mut store, DECODER, dec_in, h, &mut rng)?;
        variant.init_params(&mut store, &config, &mut rng)?;
        let feat = variant.feature_dim(&config);
        let out_w = store.add(OUTPUT_W, Tensor::uniform(feat, v, -0.1, 0.1, &mut rng))?;
        let out_b = store.add(OUTPUT_B, Tensor::zeros(1, v))?;
        Ok(Self {
            config,
            store,
            embed,
            target_embed,
            encoder,
            decoder,
            out_w,
            out_b,
            variant,
        })
    }

    pub fn variant(&self) -> &'static dyn DecoderVariant {
        self.variant
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embed
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Zeroes the accumulated gradient of every frozen embedding row.
    pub fn mask_frozen_grads(&mut self) {
        let mut tables = vec![self.embed];
        if self.target_embed != self.embed {
            tables.push(self.target_embed);
        }
        for id in tables {
            let grad = &mut self.store.get_mut(id).grad;
            for &r in &self.config.frozen_rows {
                grad.row_mut(r).fill(0.0);
            }
        }
    }

    /// Runs the encoder over right-padded `source[B][T]`. Padding steps
    /// carry the previous state forward, so the final state of each row
    /// is the state at its last real token.
    pub fn encode(&self, g: &mut Graph, source: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<EncoderOutput> {
        let batch = source.len();
        let steps = source.first().map_or(0, Vec::len);
        if batch == 0 || steps == 0 {
            return Err(Error::InvalidArgument("empty source sequence".into()));
        }
        if mask.len() != batch
            || source.iter().zip(mask).any(|(s, m)| s.len() != steps || m.len() != steps)
        {
            return Err(Error::shape("encode", "ragged source batch"));
        }
        if let Some(b) = mask.iter().position(|m| !m.iter().any(|&x| x)) {
            return Err(Error::InvalidArgument(format!("source row {b} has no tokens")));
        }
        let hid = self.config.hidden;
        let table = g.param(self.embed);
        let lstm = self.encoder.vars(g);
        let mut h = g.input(Tensor::zeros(batch, hid));
        let mut c = g.input(Tensor::zeros(batch, hid));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = source.iter().map(|row| row[t]).collect();
            let x = g.gather(table, &ids)?;
            let (hn, cn) = lstm_cell(g, x, h, c, &lstm)?;
            let keep: Vec<bool> = mask.iter().map(|m| m[t]).collect();
            if keep.iter().all(|&k| k) {
                h = hn;
                c = cn;
            } else {
                h = g.select_rows(hn, h, keep.clone())?;
                c = g.select_rows(cn, c, keep)?;
            }
            states.push(h);
        }
        let stacked = g.concat_rows(&states)?;
        let mask_bm = mask.iter().flat_map(|m| m.iter().copied()).collect();
        Ok(EncoderOutput {
            states: stacked,
            final_h: h,
            final_c: c,
            mask: mask_bm,
            batch,
            steps,
        })
    }

    /// Decoder starts from the final encoder state.
    pub fn initial_state(&self, g: &mut Graph, enc: &EncoderOutput) -> DecoderState {
        let context = self
            .config
            .input_feeding
            .then(|| g.input(Tensor::zeros(enc.batch, self.config.hidden)));
        DecoderState {
            h: enc.final_h,
            c: enc.final_c,
            context,
        }
    }

    pub fn prepare(&self, g: &mut Graph, enc: &EncoderOutput) -> Result<Option<AttentionKeys>> {
        self.variant.prepare(g, enc)
    }

    fn advance(
        &self,
        g: &mut Graph,
        prev: &[usize],
        state: DecoderState,
        enc: &EncoderOutput,
        keys: Option<&AttentionKeys>,
    ) -> Result<(StepFeatures, DecoderState)> {
        if prev.len() != enc.batch {
            return Err(Error::shape(
                "decode_step",
                format!("{} previous tokens for batch {}", prev.len(), enc.batch),
            ));
        }
        let table = g.param(self.target_embed);
        let mut x = g.gather(table, prev)?;
        if let Some(ctx) = state.context {
            x = g.concat_cols(&[x, ctx])?;
        }
        let lstm = self.decoder.vars(g);
        let (h, c) = lstm_cell(g, x, state.h, state.c, &lstm)?;
        let feats = self.variant.features(g, h, enc, keys)?;
        let context = if self.config.input_feeding {
            feats.context
        } else {
            None
        };
        Ok((feats, DecoderState { h, c, context }))
    }

    fn project(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let z = g.matmul(features, w)?;
        g.add_row(z, b)
    }

    /// One decoder step: logits `[B, V]`, the next state, and attention
    /// weights `[B, T]` when the variant attends.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        prev: &[usize],
        state: DecoderState,
        enc: &EncoderOutput,
        keys: Option<&AttentionKeys>,
    ) -> Result<(Var, DecoderState, Option<Var>)> {
        let (feats, next) = self.advance(g, prev, state, enc, keys)?;
        let logits = self.project(g, feats.features)?;
        Ok((logits, next, feats.weights))
    }

    /// Mean cross-entropy of predicting `target[1..]` from the gold prefix
    /// `target[..n-1]`, over unmasked target positions.
    pub fn teacher_forced_loss(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        let enc = self.encode(g, &batch.source, &batch.source_mask)?;
        let keys = self.prepare(g, &enc)?;
        let mut state = self.initial_state(g, &enc);
        let width = batch.target.first().map_or(0, Vec::len);
        if width < 2 {
            return Err(Error::InvalidArgument("targets need BOS and EOS framing".into()));
        }
        let mut features = Vec::with_capacity(width - 1);
        let mut targets = Vec::with_capacity((width - 1) * batch.len());
        let mut mask = Vec::with_capacity((width - 1) * batch.len());
        for s in 0..width - 1 {
            let prev: Vec<usize> = batch.target.iter().map(|t| t[s]).collect();
            let (f, next) = self.advance(g, &prev, state, &enc, keys.as_ref())?;
            state = next;
            features.push(f.features);
            targets.extend(batch.target.iter().map(|t| t[s + 1]));
            mask.extend(batch.target_mask.iter().map(|m| m[s + 1]));
        }
        let stacked = g.concat_rows(&features)?;
        let logits = self.project(g, stacked)?;
        let loss = masked_cross_entropy(g, logits, &targets, &mask)?;
        g.ensure_finite()?;
        Ok(loss)
    }

    pub fn loss(&self, batch: &Batch) -> Result<Float> {
        let mut g = Graph::new(&self.store);
        let l = self.teacher_forced_loss(&mut g, batch)?;
        Ok(g.value(l).item())
    }

    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(Float, Gradients)> {
        let mut g = Graph::new(&self.store);
        let l = self.teacher_forced_loss(&mut g, batch)?;
        let grads = g.backward(l)?;
        Ok((g.value(l).item(), grads))
    }

    /// Greedy decoding of framed sources (`BOS ... EOS` ids). Each step
    /// takes the highest-scoring token, lowest id on ties, never `PAD` or
    /// `BOS`; rows stop at `EOS` or after `max_decode_len` tokens. Returned
    /// ids exclude `EOS`.
    pub fn greedy_decode_ids(&self, sources: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        Ok(self.decode_batch(sources, false)?.into_iter().map(|t| t.ids).collect())
    }

    /// Like [`greedy_decode_ids`](Self::greedy_decode_ids) for one source,
    /// also returning per-step attention weights.
    pub fn greedy_decode_traced(&self, source: &[usize]) -> Result<DecodeTrace> {
        Ok(self.decode_batch(&[source.to_vec()], true)?.remove(0))
    }

    fn decode_batch(&self, sources: &[Vec<usize>], trace: bool) -> Result<Vec<DecodeTrace>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        if sources.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("empty source".into()));
        }
        let (padded, mask) = crate::corpus::pad_sequences(sources);
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, &padded, &mask)?;
        let keys = self.prepare(&mut g, &enc)?;
        let mut state = self.initial_state(&mut g, &enc);
        let batch = sources.len();
        let mut prev = vec![BOS; batch];
        let mut done = vec![false; batch];
        let mut out: Vec<DecodeTrace> = (0..batch)
            .map(|_| DecodeTrace {
                ids: Vec::new(),
                attention: Vec::new(),
            })
            .collect();
        for _ in 0..self.config.max_decode_len {
            let (logits, next, weights) = self.decode_step(&mut g, &prev, state, &enc, keys.as_ref())?;
            g.ensure_finite()?;
            state = next;
            let scores = g.value(logits);
            for b in 0..batch {
                if done[b] {
                    continue;
                }
                let id = argmax(scores.row(b));
                if trace {
                    if let Some(w) = weights {
                        let row = g.value(w).row(b);
                        out[b].attention.push(row[..sources[b].len()].to_vec());
                    }
                }
                if id == EOS {
                    done[b] = true;
                } else {
                    out[b].ids.push(id);
                }
                prev[b] = id;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    /// Tokens in, tokens out.
    pub fn greedy_decode(&self, vocab: &Vocabulary, source: &[String]) -> Result<Vec<String>> {
        if source.is_empty() {
            return Err(Error::InvalidArgument("empty source sentence".into()));
        }
        self.check_vocab(vocab)?;
        let ids = self.greedy_decode_ids(&[vocab.encode(source)])?.remove(0);
        Ok(vocab.decode(&ids))
    }

    /// Greedy decoding of many sentences, `chunk` at a time; chunks run in
    /// parallel and results keep input order.
    pub fn greedy_decode_many(&self, vocab: &Vocabulary, sources: &[Vec<String>], chunk: usize) -> Result<Vec<Vec<String>>> {
        self.check_vocab(vocab)?;
        if sources.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("empty source sentence".into()));
        }
        let encoded: Vec<Vec<usize>> = sources.iter().map(|s| vocab.encode(s)).collect();
        let parts: Vec<Vec<Vec<usize>>> = encoded
            .par_chunks(chunk.max(1))
            .map(|c| self.greedy_decode_ids(c))
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().map(|ids| vocab.decode(&ids)).collect())
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Index of the largest score, lowest index on ties, skipping `PAD` and `BOS`.
pub fn argmax(scores: &[Float]) -> usize {
    let mut best = EOS;
    for (i, &s) in scores.iter().enumerate().skip(EOS) {
        if s > scores[best] {
            best = i;
        }
    }
    debug_assert!(best != PAD && best != BOS);
    best
}
