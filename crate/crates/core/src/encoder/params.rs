//! Encoder parameter tensors: construction, initialization, and the named
//! walk used by the optimizer and checkpoints.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;
use crate::tensors::{NamedTensors, TensorMut, TensorRef};

/// Standard deviation for weight initialization, the cited model family's
/// convention.
pub const INIT_STD: f64 = 0.02;

/// Draw from N(0, sigma^2) via Box-Muller on the seeded stream.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    use rand::Rng;
    // Avoid ln(0) by nudging u1 away from zero.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = gaussian(rng, INIT_STD);
        }
    }
    m
}

/// An affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearParams {
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> LinearParams {
        LinearParams {
            weight: normal_matrix(d_in, d_out, rng),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> LinearParams {
        LinearParams {
            weight: Array2::zeros((d_in, d_out)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Per-row normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    pub fn init(d: usize) -> LayerNormParams {
        LayerNormParams {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize) -> LayerNormParams {
        LayerNormParams {
            gain: Array1::zeros(d),
            bias: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attention: AttentionParams,
    pub attention_norm: LayerNormParams,
    pub ffn_in: LinearParams,
    pub ffn_out: LinearParams,
    pub ffn_norm: LayerNormParams,
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> LayerParams {
        let d = cfg.d_model;
        LayerParams {
            attention: AttentionParams {
                query: LinearParams::init(d, d, rng),
                key: LinearParams::init(d, d, rng),
                value: LinearParams::init(d, d, rng),
                output: LinearParams::init(d, d, rng),
            },
            attention_norm: LayerNormParams::init(d),
            ffn_in: LinearParams::init(d, cfg.d_ff, rng),
            ffn_out: LinearParams::init(cfg.d_ff, d, rng),
            ffn_norm: LayerNormParams::init(d),
        }
    }

    fn zeros(cfg: &EncoderConfig) -> LayerParams {
        let d = cfg.d_model;
        LayerParams {
            attention: AttentionParams {
                query: LinearParams::zeros(d, d),
                key: LinearParams::zeros(d, d),
                value: LinearParams::zeros(d, d),
                output: LinearParams::zeros(d, d),
            },
            attention_norm: LayerNormParams::zeros(d),
            ffn_in: LinearParams::zeros(d, cfg.d_ff),
            ffn_out: LinearParams::zeros(cfg.d_ff, d),
            ffn_norm: LayerNormParams::zeros(d),
        }
    }
}

/// All trainable tensors of the encoder, including the two post-training
/// heads. Gradient accumulators reuse this type via [`EncoderParams::zeros`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// vocab_size x d_model.
    pub token_embedding: Array2<f64>,
    /// max_len x d_model; row `t` is added to the token at position `t`.
    pub positional_embedding: Array2<f64>,
    /// 2 x d_model; only consulted when a segment vector is supplied
    /// (sentence-pair inputs during post-training).
    pub segment_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// d_model x vocab_size; predicts original ids at masked positions.
    pub mlm_head: LinearParams,
    /// d_model x 2; consecutive-vs-random scores read off the `[CLS]` row.
    pub nsp_head: LinearParams,
}

impl EncoderParams {
    /// Fresh parameters: weights and embeddings drawn from N(0, 0.02^2),
    /// biases zero, normalization gains one.
    pub fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> EncoderParams {
        EncoderParams {
            token_embedding: normal_matrix(cfg.vocab_size, cfg.d_model, rng),
            positional_embedding: normal_matrix(cfg.max_len, cfg.d_model, rng),
            segment_embedding: normal_matrix(2, cfg.d_model, rng),
            layers: (0..cfg.n_layers).map(|_| LayerParams::init(cfg, rng)).collect(),
            mlm_head: LinearParams::init(cfg.d_model, cfg.vocab_size, rng),
            nsp_head: LinearParams::init(cfg.d_model, 2, rng),
        }
    }

    /// All-zero tensors of the same shapes, for gradient accumulation.
    pub fn zeros(cfg: &EncoderConfig) -> EncoderParams {
        EncoderParams {
            token_embedding: Array2::zeros((cfg.vocab_size, cfg.d_model)),
            positional_embedding: Array2::zeros((cfg.max_len, cfg.d_model)),
            segment_embedding: Array2::zeros((2, cfg.d_model)),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            mlm_head: LinearParams::zeros(cfg.d_model, cfg.vocab_size),
            nsp_head: LinearParams::zeros(cfg.d_model, 2),
        }
    }
}

// The two walks below must stay textually parallel: same paths, same order.

impl NamedTensors for EncoderParams {
    fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out: Vec<(String, TensorRef<'_>)> = vec![
            ("token_embedding".into(), TensorRef::Matrix(&self.token_embedding)),
            ("positional_embedding".into(), TensorRef::Matrix(&self.positional_embedding)),
            ("segment_embedding".into(), TensorRef::Matrix(&self.segment_embedding)),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = |tail: &str| format!("layers/{i}/{tail}");
            out.push((p("attention/query/weight"), TensorRef::Matrix(&layer.attention.query.weight)));
            out.push((p("attention/query/bias"), TensorRef::Vector(&layer.attention.query.bias)));
            out.push((p("attention/key/weight"), TensorRef::Matrix(&layer.attention.key.weight)));
            out.push((p("attention/key/bias"), TensorRef::Vector(&layer.attention.key.bias)));
            out.push((p("attention/value/weight"), TensorRef::Matrix(&layer.attention.value.weight)));
            out.push((p("attention/value/bias"), TensorRef::Vector(&layer.attention.value.bias)));
            out.push((p("attention/output/weight"), TensorRef::Matrix(&layer.attention.output.weight)));
            out.push((p("attention/output/bias"), TensorRef::Vector(&layer.attention.output.bias)));
            out.push((p("attention_norm/gain"), TensorRef::Vector(&layer.attention_norm.gain)));
            out.push((p("attention_norm/bias"), TensorRef::Vector(&layer.attention_norm.bias)));
            out.push((p("ffn/in/weight"), TensorRef::Matrix(&layer.ffn_in.weight)));
            out.push((p("ffn/in/bias"), TensorRef::Vector(&layer.ffn_in.bias)));
            out.push((p("ffn/out/weight"), TensorRef::Matrix(&layer.ffn_out.weight)));
            out.push((p("ffn/out/bias"), TensorRef::Vector(&layer.ffn_out.bias)));
            out.push((p("ffn_norm/gain"), TensorRef::Vector(&layer.ffn_norm.gain)));
            out.push((p("ffn_norm/bias"), TensorRef::Vector(&layer.ffn_norm.bias)));
        }
        out.push(("mlm_head/weight".into(), TensorRef::Matrix(&self.mlm_head.weight)));
        out.push(("mlm_head/bias".into(), TensorRef::Vector(&self.mlm_head.bias)));
        out.push(("nsp_head/weight".into(), TensorRef::Matrix(&self.nsp_head.weight)));
        out.push(("nsp_head/bias".into(), TensorRef::Vector(&self.nsp_head.bias)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out: Vec<(String, TensorMut<'_>)> = vec![
            ("token_embedding".into(), TensorMut::Matrix(&mut self.token_embedding)),
            ("positional_embedding".into(), TensorMut::Matrix(&mut self.positional_embedding)),
            ("segment_embedding".into(), TensorMut::Matrix(&mut self.segment_embedding)),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = |tail: &str| format!("layers/{i}/{tail}");
            out.push((p("attention/query/weight"), TensorMut::Matrix(&mut layer.attention.query.weight)));
            out.push((p("attention/query/bias"), TensorMut::Vector(&mut layer.attention.query.bias)));
            out.push((p("attention/key/weight"), TensorMut::Matrix(&mut layer.attention.key.weight)));
            out.push((p("attention/key/bias"), TensorMut::Vector(&mut layer.attention.key.bias)));
            out.push((p("attention/value/weight"), TensorMut::Matrix(&mut layer.attention.value.weight)));
            out.push((p("attention/value/bias"), TensorMut::Vector(&mut layer.attention.value.bias)));
            out.push((p("attention/output/weight"), TensorMut::Matrix(&mut layer.attention.output.weight)));
            out.push((p("attention/output/bias"), TensorMut::Vector(&mut layer.attention.output.bias)));
            out.push((p("attention_norm/gain"), TensorMut::Vector(&mut layer.attention_norm.gain)));
            out.push((p("attention_norm/bias"), TensorMut::Vector(&mut layer.attention_norm.bias)));
            out.push((p("ffn/in/weight"), TensorMut::Matrix(&mut layer.ffn_in.weight)));
            out.push((p("ffn/in/bias"), TensorMut::Vector(&mut layer.ffn_in.bias)));
            out.push((p("ffn/out/weight"), TensorMut::Matrix(&mut layer.ffn_out.weight)));
            out.push((p("ffn/out/bias"), TensorMut::Vector(&mut layer.ffn_out.bias)));
            out.push((p("ffn_norm/gain"), TensorMut::Vector(&mut layer.ffn_norm.gain)));
            out.push((p("ffn_norm/bias"), TensorMut::Vector(&mut layer.ffn_norm.bias)));
        }
        out.push(("mlm_head/weight".into(), TensorMut::Matrix(&mut self.mlm_head.weight)));
        out.push(("mlm_head/bias".into(), TensorMut::Vector(&mut self.mlm_head.bias)));
        out.push(("nsp_head/weight".into(), TensorMut::Matrix(&mut self.nsp_head.weight)));
        out.push(("nsp_head/bias".into(), TensorMut::Vector(&mut self.nsp_head.bias)));
        out
    }
}
