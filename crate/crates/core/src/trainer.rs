//! Epoch loop, periodic dev BLEU, checkpointing and model selection.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{batches, swap_direction, Direction, EncodedPair, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{corpus_bleu, sample_indices, BleuReport};
use crate::optimizer::{adam_step, clip_store, AdamConfig, AdamState};
use crate::seq2seq::{load_checkpoint, load_optimizer, save_checkpoint, save_optimizer, Seq2Seq};
use crate::Float;

pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub direction: Direction,
    /// Extra evaluation every this many steps, besides each epoch end.
    pub eval_every: Option<u64>,
    /// Dev pairs decoded at each evaluation (seeded subsample).
    pub dev_sample: usize,
    /// Candidates re-scored on the full dev set at the end.
    pub top_k: usize,
    pub checkpoint_dir: PathBuf,
    /// Sentences per greedy-decoding batch during evaluation.
    pub decode_chunk: usize,
    /// Stop after this many optimizer steps in total (for smoke runs).
    pub max_steps: Option<u64>,
    pub log_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            seed: 1,
            direction: Direction::Forward,
            eval_every: None,
            dev_sample: 500,
            top_k: 3,
            checkpoint_dir: PathBuf::from("checkpoints"),
            decode_chunk: 64,
            max_steps: None,
            log_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.eval_every == Some(0) {
            return bad("eval-every must be positive");
        }
        if self.dev_sample == 0 || self.top_k == 0 || self.decode_chunk == 0 {
            return bad("dev sample, top-k and decode chunk must be positive");
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: Float,
    pub grad_norm: Float,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    /// BLEU on the dev subsample.
    pub dev_bleu: f64,
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: Float,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub checkpoint: String,
    pub step: u64,
    /// Full-dev BLEU of each re-scored candidate, in step order.
    pub candidates: Vec<(String, f64)>,
    pub dev_bleu: f64,
}

/// One JSONL line of the persisted log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Eval(EvalRecord),
    Epoch(EpochRecord),
    Select(Selection),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<Selection>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<Float> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

/// Trainer bookkeeping stored with the optimizer state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    epoch: usize,
    /// Batches of `epoch` already consumed.
    batch_in_epoch: usize,
    evals: Vec<EvalRecord>,
    retained: Vec<String>,
    selection: Option<Selection>,
}

pub struct TrainingOutcome {
    pub log: TrainingLog,
    /// Path of the selected checkpoint.
    pub best_checkpoint: PathBuf,
    /// Model with the selected weights.
    pub model: Seq2Seq,
}

/// BLEU of greedy outputs against gold targets.
pub fn evaluate_bleu(model: &Seq2Seq, vocab: &Vocabulary, pairs: &[SentencePair], chunk: usize) -> Result<BleuReport> {
    let sources: Vec<Vec<String>> = pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    let outs = model.greedy_decode_many(vocab, &sources, chunk)?;
    corpus_bleu(&outs, &refs)
}

/// Per-epoch shuffle seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

fn ckpt_name(step: u64) -> String {
    format!("ckpt-{step:08}.bin")
}

fn opt_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("opt")
}

struct Run<'a> {
    cfg: &'a TrainingConfig,
    vocab: &'a Vocabulary,
    vocab_hash: String,
    train: Vec<EncodedPair>,
    dev: Vec<SentencePair>,
    dev_sample: Vec<SentencePair>,
    model: Seq2Seq,
    adam: AdamState,
    state: ResumeState,
    log: TrainingLog,
    log_out: BufWriter<File>,
    last_good: Option<PathBuf>,
}

impl Run<'_> {
    fn record(&mut self, r: LogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.log_out, &r)?;
        self.log_out.write_all(b"\n")?;
        match r {
            LogRecord::Step(s) => self.log.steps.push(s),
            LogRecord::Eval(e) => self.log.evals.push(e),
            LogRecord::Epoch(e) => self.log.epochs.push(e),
            LogRecord::Select(s) => self.log.best = Some(s),
        }
        Ok(())
    }

    fn abort(&self, reason: String) -> Error {
        Error::TrainingAborted {
            reason,
            last_good: self.last_good.clone(),
        }
    }

    fn step(&mut self, batch: &crate::corpus::Batch, epoch: usize) -> Result<()> {
        let (loss, grads) = match self.model.loss_and_grads(batch) {
            Ok(x) => x,
            Err(e @ Error::NonFinite(_)) => return Err(self.abort(e.to_string())),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(self.abort(format!("loss {loss} at step {}", self.adam.step + 1)));
        }
        self.model.store.zero_grad();
        self.model.store.accumulate(&grads);
        self.model.mask_frozen_grads();
        let grad_norm = clip_store(&mut self.model.store, self.cfg.clip_norm as Float)
            .map_err(|e| self.abort(e.to_string()))?;
        adam_step(&mut self.model.store, &mut self.adam)?;
        let step = self.adam.step;
        if step % self.cfg.log_every.max(1) == 0 {
            log::info!("epoch {} step {step} loss {loss:.4}", epoch + 1);
        }
        self.record(LogRecord::Step(StepRecord {
            step,
            epoch,
            loss,
            grad_norm,
        }))
    }

    /// Dev-subsample BLEU, checkpoint, and pruning to the top-k plus latest.
    fn evaluate(&mut self, epoch: usize) -> Result<()> {
        let step = self.adam.step;
        if self.state.evals.last().is_some_and(|e| e.step == step) {
            return Ok(());
        }
        let bleu = evaluate_bleu(&self.model, self.vocab, &self.dev_sample, self.cfg.decode_chunk)?.bleu;
        log::info!("step {step}: dev BLEU {bleu:.2} on {} pairs", self.dev_sample.len());
        let name = ckpt_name(step);
        let path = self.cfg.checkpoint_dir.join(&name);
        save_checkpoint(&self.model, &self.vocab_hash, step, &path)?;
        let rec = EvalRecord {
            step,
            epoch,
            dev_bleu: bleu,
            checkpoint: name.clone(),
        };
        self.state.evals.push(rec.clone());
        self.state.selection = None;
        self.record(LogRecord::Eval(rec))?;
        self.state.retained.push(name.clone());
        let keep = self.top_candidates();
        let mut kept = Vec::new();
        for r in std::mem::take(&mut self.state.retained) {
            if r == name || keep.contains(&r) {
                kept.push(r);
            } else {
                let p = self.cfg.checkpoint_dir.join(&r);
                let _ = fs::remove_file(&p);
                let _ = fs::remove_file(opt_path(&p));
            }
        }
        self.state.retained = kept;
        self.save_opt(&path)?;
        self.last_good = Some(path);
        Ok(())
    }

    fn save_opt(&self, ckpt: &Path) -> Result<()> {
        save_optimizer(
            &self.model,
            &self.adam,
            &self.vocab_hash,
            serde_json::to_value(&self.state)?,
            &opt_path(ckpt),
        )
    }

    /// Top-k evaluated checkpoints by subsample BLEU; ties favour the earlier.
    fn top_candidates(&self) -> Vec<String> {
        let mut evals: Vec<&EvalRecord> = self.state.evals.iter().collect();
        evals.sort_by(|a, b| b.dev_bleu.total_cmp(&a.dev_bleu).then(a.step.cmp(&b.step)));
        evals.into_iter().take(self.cfg.top_k).map(|e| e.checkpoint.clone()).collect()
    }

    fn select(&mut self) -> Result<Selection> {
        if let Some(s) = &self.state.selection {
            return Ok(s.clone());
        }
        let mut cands: Vec<&EvalRecord> = self
            .state
            .evals
            .iter()
            .filter(|e| self.top_candidates().contains(&e.checkpoint))
            .collect();
        cands.sort_by_key(|e| e.step);
        let mut scored = Vec::new();
        for e in cands {
            let m = load_checkpoint(&self.cfg.checkpoint_dir.join(&e.checkpoint), Some(self.vocab))?.model;
            let bleu = evaluate_bleu(&m, self.vocab, &self.dev, self.cfg.decode_chunk)?.bleu;
            log::info!("{}: full dev BLEU {bleu:.2}", e.checkpoint);
            scored.push((e.checkpoint.clone(), e.step, bleu));
        }
        // Strictly greater wins, so ties keep the earlier step.
        let mut best = scored.first().cloned().ok_or_else(|| Error::EmptyDataset("no evaluations".into()))?;
        for s in &scored[1..] {
            if s.2 > best.2 {
                best = s.clone();
            }
        }
        let sel = Selection {
            checkpoint: best.0,
            step: best.1,
            candidates: scored.into_iter().map(|(c, _, b)| (c, b)).collect(),
            dev_bleu: best.2,
        };
        self.state.selection = Some(sel.clone());
        self.record(LogRecord::Select(sel.clone()))?;
        if let Some(last) = self.last_good.clone() {
            self.save_opt(&last)?;
        }
        Ok(sel)
    }

    fn run(mut self) -> Result<TrainingOutcome> {
        let budget_left = |s: &Self| s.cfg.max_steps.map_or(true, |m| s.adam.step < m);
        while self.state.epoch < self.cfg.epochs && budget_left(&self) {
            let epoch = self.state.epoch;
            let t0 = Instant::now();
            let all = batches(&self.train, self.cfg.batch_size, Some(epoch_seed(self.cfg.seed, epoch)))?;
            let first_step = self.log.steps.len();
            for b in &all[self.state.batch_in_epoch..] {
                if !budget_left(&self) {
                    break;
                }
                self.step(b, epoch)?;
                self.state.batch_in_epoch += 1;
                if self.cfg.eval_every.is_some_and(|k| self.adam.step % k == 0) {
                    self.evaluate(epoch)?;
                }
            }
            let losses: Vec<Float> = self.log.steps[first_step..].iter().map(|s| s.loss).collect();
            if self.state.batch_in_epoch == all.len() {
                self.state.epoch += 1;
                self.state.batch_in_epoch = 0;
            }
            self.evaluate(epoch)?;
            let rec = EpochRecord {
                epoch,
                steps: losses.len() as u64,
                mean_loss: losses.iter().sum::<Float>() / losses.len().max(1) as Float,
                seconds: t0.elapsed().as_secs_f64(),
            };
            log::info!("epoch {} done: mean loss {:.4} in {:.1}s", epoch + 1, rec.mean_loss, rec.seconds);
            self.record(LogRecord::Epoch(rec))?;
            // The epoch-end state must be what a resume sees.
            if let Some(last) = self.last_good.clone() {
                self.save_opt(&last)?;
            }
        }
        let sel = self.select()?;
        self.log_out.flush()?;
        let best_checkpoint = self.cfg.checkpoint_dir.join(&sel.checkpoint);
        let model = load_checkpoint(&best_checkpoint, Some(self.vocab))?.model;
        self.log.evals = self.state.evals.clone();
        Ok(TrainingOutcome {
            log: self.log,
            best_checkpoint,
            model,
        })
    }
}

fn prepare_data(
    train: &[SentencePair],
    dev: &[SentencePair],
    cfg: &TrainingConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<EncodedPair>, Vec<SentencePair>, Vec<SentencePair>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::EmptyDataset("dev set is empty".into()));
    }
    let (train, dev) = match cfg.direction {
        Direction::Forward => (train.to_vec(), dev.to_vec()),
        Direction::Inverse => (swap_direction(train.to_vec()), swap_direction(dev.to_vec())),
    };
    let idx = sample_indices(dev.len(), cfg.dev_sample.min(dev.len()), cfg.seed)?;
    let sample = idx.iter().map(|&i| dev[i].clone()).collect();
    Ok((EncodedPair::encode_all(&train, vocab), dev, sample))
}

fn open_log(dir: &Path, append: bool) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(dir.join(LOG_FILE))?;
    Ok(BufWriter::new(f))
}

/// Trains `model` from scratch. Runs `cfg.epochs` full shuffled passes,
/// evaluating dev BLEU after each epoch (and every `eval_every` steps),
/// then re-scores the best `top_k` checkpoints on the full dev set and
/// returns the winner.
pub fn train(
    model: Seq2Seq,
    vocab: &Vocabulary,
    train: &[SentencePair],
    dev: &[SentencePair],
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if model.config.vocab_size != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} vocabulary entries, got {}",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    let (train, dev, dev_sample) = prepare_data(train, dev, cfg, vocab)?;
    let adam = AdamState::new(&model.store, cfg.adam)?;
    Run {
        cfg,
        vocab,
        vocab_hash: vocab.content_hash(),
        train,
        dev,
        dev_sample,
        model,
        adam,
        state: ResumeState::default(),
        log: TrainingLog::default(),
        log_out: open_log(&cfg.checkpoint_dir, false)?,
        last_good: None,
    }
    .run()
}

/// Continues a run from a checkpoint written by [`train`] (its `.opt`
/// file must sit next to it). The returned log holds only the new records
/// plus the full evaluation history.
pub fn resume(
    checkpoint: &Path,
    vocab: &Vocabulary,
    train: &[SentencePair],
    dev: &[SentencePair],
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let loaded = load_checkpoint(checkpoint, Some(vocab))?;
    let hash = vocab.content_hash();
    let (adam, extra) = load_optimizer(&opt_path(checkpoint), &loaded.model, &hash)?;
    if adam.step != loaded.step {
        return Err(Error::InvalidArgument(format!(
            "checkpoint is at step {}, optimizer state at {}",
            loaded.step, adam.step
        )));
    }
    let mut adam = adam;
    // Settings may change between sessions; moments and the step count stay.
    adam.config = cfg.adam;
    let state: ResumeState = serde_json::from_value(extra)?;
    let (train, dev, dev_sample) = prepare_data(train, dev, cfg, vocab)?;
    let last_good = Some(checkpoint.to_path_buf());
    Run {
        cfg,
        vocab,
        vocab_hash: hash,
        train,
        dev,
        dev_sample,
        model: loaded.model,
        adam,
        log: TrainingLog {
            evals: state.evals.clone(),
            best: state.selection.clone(),
            ..Default::default()
        },
        state,
        log_out: open_log(&cfg.checkpoint_dir, true)?,
        last_good,
    }
    .run()
}

/// Reads a persisted log back.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
