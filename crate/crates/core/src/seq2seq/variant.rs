//! Decoder variants: what the output projection sees at each step.

use rand::RngCore;

use super::model::{EncoderOutput, ModelConfig};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{additive_attention, prepare_keys, AttentionKeys, AttentionWeights};
use crate::registry::Registry;

pub const ATTENTION_PREFIX: &str = "attention";

/// Per-step decoder read-out.
pub struct StepFeatures {
    /// Input to the output projection.
    pub features: Var,
    /// Attention context `[B, h]`, if the variant computes one.
    pub context: Option<Var>,
    /// Attention weights `[B, T]`, if any.
    pub weights: Option<Var>,
}

/// A way of turning decoder hidden states into output features.
pub trait DecoderVariant: Send + Sync {
    fn uses_attention(&self) -> bool;

    /// Registers variant-specific parameters.
    fn init_params(&self, store: &mut ParamStore, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<()>;

    /// Width of [`StepFeatures::features`].
    fn feature_dim(&self, cfg: &ModelConfig) -> usize;

    /// Per-source-batch preparation (key projections).
    fn prepare(&self, g: &mut Graph, enc: &EncoderOutput) -> Result<Option<AttentionKeys>>;

    fn features(
        &self,
        g: &mut Graph,
        h_dec: Var,
        enc: &EncoderOutput,
        keys: Option<&AttentionKeys>,
    ) -> Result<StepFeatures>;
}

/// Encoder–decoder without attention: logits read the decoder state only.
pub struct PlainDecoder;

/// Word-by-word additive attention over encoder states; logits read
/// `[h_dec; context]`.
pub struct AttentionDecoder;

impl DecoderVariant for PlainDecoder {
    fn uses_attention(&self) -> bool {
        false
    }

    fn init_params(&self, _: &mut ParamStore, cfg: &ModelConfig, _: &mut dyn RngCore) -> Result<()> {
        if cfg.input_feeding {
            return Err(Error::InvalidArgument(
                "input feeding needs an attention context".into(),
            ));
        }
        Ok(())
    }

    fn feature_dim(&self, cfg: &ModelConfig) -> usize {
        cfg.hidden
    }

    fn prepare(&self, _: &mut Graph, _: &EncoderOutput) -> Result<Option<AttentionKeys>> {
        Ok(None)
    }

    fn features(&self, _: &mut Graph, h_dec: Var, _: &EncoderOutput, _: Option<&AttentionKeys>) -> Result<StepFeatures> {
        Ok(StepFeatures {
            features: h_dec,
            context: None,
            weights: None,
        })
    }
}

impl DecoderVariant for AttentionDecoder {
    fn uses_attention(&self) -> bool {
        true
    }

    fn init_params(&self, store: &mut ParamStore, cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<()> {
        AttentionWeights::init(store, ATTENTION_PREFIX, cfg.hidden, cfg.hidden, cfg.attention_dim(), rng)?;
        Ok(())
    }

    fn feature_dim(&self, cfg: &ModelConfig) -> usize {
        2 * cfg.hidden
    }

    fn prepare(&self, g: &mut Graph, enc: &EncoderOutput) -> Result<Option<AttentionKeys>> {
        let w = AttentionWeights::find(g.store(), ATTENTION_PREFIX)?;
        let wk = g.param(w.wk);
        Ok(Some(prepare_keys(g, enc.states, enc.batch, wk)?))
    }

    fn features(
        &self,
        g: &mut Graph,
        h_dec: Var,
        enc: &EncoderOutput,
        keys: Option<&AttentionKeys>,
    ) -> Result<StepFeatures> {
        let keys = keys.ok_or_else(|| Error::InvalidArgument("attention keys not prepared".into()))?;
        let vars = AttentionWeights::find(g.store(), ATTENTION_PREFIX)?.vars(g);
        let (weights, context) = additive_attention(g, h_dec, keys, &enc.mask, &vars)?;
        let features = g.concat_cols(&[h_dec, context])?;
        Ok(StepFeatures {
            features,
            context: Some(context),
            weights: Some(weights),
        })
    }
}

/// Registered decoder variants: `attention` and `plain`.
pub fn decoder_variants() -> Registry<dyn DecoderVariant> {
    let mut r: Registry<dyn DecoderVariant> = Registry::new("decoder variant");
    r.register("attention", Box::new(AttentionDecoder))
        .register("plain", Box::new(PlainDecoder));
    r
}
