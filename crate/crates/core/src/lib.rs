//! Entailment generation with an attentive LSTM encoder-decoder.
//!
//! The crate covers the whole pipeline: SNLI ingestion ([`corpus`]),
//! pre-trained vector loading ([`embeddings`]), a small reverse-mode
//! differentiation core ([`autodiff`]) with the neural primitives built on
//! top of it ([`nn`]), the sequence-to-sequence model ([`seq2seq`]),
//! ADAM with global-norm clipping ([`optimizer`]), training with dev-BLEU
//! model selection ([`trainer`]), BLEU and annotation export
//! ([`evaluation`]), and recursive inference chains / entailment graphs
//! ([`chains`]).
//!
//! Interchangeable pieces (decoder variants, vector file formats, graph
//! exporters, sentence canonicalizers) sit behind traits and are looked up
//! by name through [`registry::Registry`].

pub mod autodiff;
pub mod chains;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod optimizer;
pub mod registry;
pub mod seq2seq;
pub mod trainer;

pub use error::{Error, Result};

/// Scalar type of every tensor. 64-bit unless the `f32` feature is on.
#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;
