//! Attentive LSTM encoder–decoder: teacher-forced loss, greedy decoding
//! and checkpoints.

mod checkpoint;
mod model;
mod variant;


pub use checkpoint::{
    hash_bytes, hash_hex, load_checkpoint, load_optimizer, read_container, save_checkpoint, save_optimizer,
    write_container, Container, Header, LoadedModel, FORMAT_VERSION, MAGIC,
};
pub use model::{
    argmax, variant, variant_names, DecodeTrace, DecoderState, EncoderOutput, ModelConfig, Seq2Seq, DECODER,
    EMBEDDING, ENCODER, OUTPUT_B, OUTPUT_W, TARGET_EMBEDDING,
};
pub use variant::{decoder_variants, AttentionDecoder, DecoderVariant, PlainDecoder, StepFeatures};
