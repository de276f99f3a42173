//! Self-attention encoder over packed dialogues.
//!
//! `embed` turns token ids into summed token + positional (+ optional
//! segment) vectors; `encode` runs them through a stack of attention +
//! feed-forward layers with residual connections and post-layer
//! normalization. The traced variants keep per-layer caches so
//! [`encode_backward`] can push gradients all the way back to the
//! embeddings — every gradient in this crate is hand-derived and checked
//! against finite differences.
//!
//! Post-training utilities (token masking, sentence-pair construction, and
//! the masked-token / next-sentence losses) live in [`pretrain`].

pub mod layers;
pub mod params;
pub mod pretrain;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::PackedDialogue;

pub use layers::{LayerCache, LayerNormCache};
pub use params::{AttentionParams, EncoderParams, LayerNormParams, LayerParams, LinearParams};

/// Feed-forward nonlinearity. GELU (tanh form) is the default; ReLU is kept
/// as a cheap alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4;
                let u = C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture hyperparameters. Embedded verbatim in checkpoint headers so
/// a saved encoder is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Maximum packed sequence length (= number of learned positions).
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub layer_norm_eps: f64,
}

/// The toy preset with `vocab_size` 0, a placeholder meaning "take the size
/// from the vocabulary file". [`EncoderConfig::validate`] rejects it, so a
/// config that was never patched cannot reach the model.
impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::toy(0)
    }
}

impl EncoderConfig {
    /// Desk-scale preset: 2 layers, 4 heads, d_model 64, d_ff 256. Trains on
    /// a laptop CPU in seconds; dropout is off since runs this small are
    /// about correctness, not regularization.
    pub fn toy(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: 512,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            dropout_rate: 0.0,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-12,
        }
    }

    /// Full-scale preset matching the cited base encoder: 12 layers, 12
    /// heads, d_model 768, 512 positions. Provided for shape compatibility;
    /// nothing in the test suite trains at this size.
    pub fn paper_scale(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: 512,
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            d_ff: 3072,
            dropout_rate: 0.1,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-12,
        }
    }

    #[cfg(test)]
    pub(crate) fn tiny_for_tests() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            max_len: 32,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout_rate: 0.0,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return fail("vocab_size, d_model, n_layers, d_ff must be positive".into());
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2 ([CLS] plus [SEP])".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Whether stochastic pieces (dropout) are active. Train mode carries the
/// generator so repeated runs with one seed stay bit-identical.
pub enum Phase<'a> {
    Train { dropout_rng: &'a mut ChaCha8Rng },
    Inference,
}

impl<'a> Phase<'a> {
    pub(crate) fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Phase::Train { dropout_rng } => Some(dropout_rng),
            Phase::Inference => None,
        }
    }
}

/// Embed a packed dialogue: token embedding plus positional embedding.
/// (Segment embeddings are only added for sentence-pair inputs; see
/// [`embed_ids`].)
pub fn embed(
    packed: &PackedDialogue,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<Array2<f64>> {
    embed_ids(&packed.token_ids, None, params, cfg)
}

/// Embed raw ids, optionally with a 0/1 segment vector (sentence-pair inputs
/// during post-training).
pub fn embed_ids(
    ids: &[u32],
    segments: Option<&[u8]>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<Array2<f64>> {
    if ids.len() > params.positional_embedding.nrows() {
        return Err(Error::PositionOutOfRange {
            len: ids.len(),
            max: params.positional_embedding.nrows(),
        });
    }
    if let Some(segments) = segments {
        if segments.len() != ids.len() {
            return Err(Error::Shape {
                operation: "embed".into(),
                expected: format!("{} segment ids", ids.len()),
                actual: format!("{}", segments.len()),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s > 1) {
            return Err(Error::Shape {
                operation: "embed".into(),
                expected: "segment ids in {0, 1}".into(),
                actual: format!("{bad}"),
            });
        }
    }

    let d = cfg.d_model;
    let mut x = Array2::zeros((ids.len(), d));
    for (t, &id) in ids.iter().enumerate() {
        if id as usize >= params.token_embedding.nrows() {
            return Err(Error::TokenIdOutOfRange {
                id,
                vocab_size: params.token_embedding.nrows(),
            });
        }
        let tok = params.token_embedding.row(id as usize);
        let pos = params.positional_embedding.row(t);
        let seg = segments.map(|s| params.segment_embedding.row(s[t] as usize));
        for j in 0..d {
            x[[t, j]] = tok[j] + pos[j] + seg.map_or(0.0, |r| r[j]);
        }
    }
    Ok(x)
}

/// Accumulate embedding gradients for the rows that were looked up.
pub fn embed_backward(
    d_embedded: &Array2<f64>,
    ids: &[u32],
    segments: Option<&[u8]>,
    grads: &mut EncoderParams,
) {
    for (t, &id) in ids.iter().enumerate() {
        let drow = d_embedded.row(t);
        let mut tok = grads.token_embedding.row_mut(id as usize);
        tok += &drow;
        let mut pos = grads.positional_embedding.row_mut(t);
        pos += &drow;
        if let Some(segments) = segments {
            let mut seg = grads.segment_embedding.row_mut(segments[t] as usize);
            seg += &drow;
        }
    }
}

/// Per-layer caches from a traced forward pass.
pub struct EncoderTrace {
    pub layers: Vec<LayerCache>,
}

/// Run the encoder and keep the caches needed for backpropagation.
///
/// `attention_mask` (one flag per position, `true` = visible) hides padding
/// keys from every query; packed single dialogues have no padding, so `None`
/// is the common case. Non-finite intermediates abort with a numeric error
/// naming the layer.
pub fn encode_traced(
    embedded: &Array2<f64>,
    attention_mask: Option<&[bool]>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    phase: &mut Phase,
) -> Result<(Array2<f64>, EncoderTrace)> {
    if embedded.ncols() != cfg.d_model {
        return Err(Error::Shape {
            operation: "encode".into(),
            expected: format!("d_model {}", cfg.d_model),
            actual: format!("{}", embedded.ncols()),
        });
    }
    if let Some(mask) = attention_mask {
        if mask.len() != embedded.nrows() {
            return Err(Error::Shape {
                operation: "encode".into(),
                expected: format!("{} mask flags", embedded.nrows()),
                actual: format!("{}", mask.len()),
            });
        }
    }

    let mut x = embedded.clone();
    let mut caches = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let (next, cache) = layers::layer_forward(&x, layer, cfg, attention_mask, phase.rng());
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                site: format!("encoder layer {i}"),
            });
        }
        x = next;
        caches.push(cache);
    }
    Ok((x, EncoderTrace { layers: caches }))
}

/// Forward-only encode.
pub fn encode(
    embedded: &Array2<f64>,
    attention_mask: Option<&[bool]>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    phase: &mut Phase,
) -> Result<Array2<f64>> {
    encode_traced(embedded, attention_mask, params, cfg, phase).map(|(reps, _)| reps)
}

/// Backward through all layers. Accumulates layer-parameter gradients into
/// `grads` and returns the gradient with respect to the embedded input
/// (which [`embed_backward`] then scatters into the embedding tables).
pub fn encode_backward(
    dreps: &Array2<f64>,
    trace: &EncoderTrace,
    params: &EncoderParams,
    grads: &mut EncoderParams,
    cfg: &EncoderConfig,
) -> Array2<f64> {
    let mut d = dreps.clone();
    for i in (0..params.layers.len()).rev() {
        d = layers::layer_backward(&d, &trace.layers[i], &params.layers[i], &mut grads.layers[i], cfg);
    }
    d
}
