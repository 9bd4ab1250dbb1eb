//! Neural primitives on top of the autodiff tape.

mod attention;
mod loss;
mod lstm;

pub use attention::{additive_attention, prepare_keys, AttentionKeys, AttentionVars, AttentionWeights};
pub use loss::{masked_cross_entropy, softmax};
pub use lstm::{lstm_cell, LstmVars, LstmWeights};
