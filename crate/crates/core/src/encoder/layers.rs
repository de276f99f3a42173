//! Layer-level math: scaled dot-product attention, layer normalization,
//! the feed-forward block, and dropout.
//!
//! Every forward function returns a cache holding exactly the intermediates
//! its backward pass needs. Backward passes accumulate (`+=`) into gradient
//! structs so one accumulator can serve a whole batch.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AttentionParams, LayerNormParams, LayerParams};
use super::EncoderConfig;

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Multiplicative dropout mask from one forward call. `None` means the call
/// was an identity (inference mode or rate 0), so backward is an identity too.
#[derive(Debug, Clone)]
pub struct DropoutMask(Option<Array2<f64>>);

/// Inverted dropout: kept entries are scaled by `1/(1-rate)` so inference
/// needs no rescaling. Only draws from the generator when active, which keeps
/// train mode with rate 0 bit-identical to inference.
pub fn dropout_forward(
    x: &Array2<f64>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, DropoutMask) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep_scale = 1.0 / (1.0 - rate);
            let mut mask = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    if rng.gen::<f64>() >= rate {
                        mask[[i, j]] = keep_scale;
                    }
                }
            }
            (x * &mask, DropoutMask(Some(mask)))
        }
        _ => (x.clone(), DropoutMask(None)),
    }
}

pub fn dropout_backward(dy: &Array2<f64>, mask: &DropoutMask) -> Array2<f64> {
    match &mask.0 {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

// ---------------------------------------------------------------------------
// layer normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized rows before gain/bias: mean 0, variance ~1.
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Normalize each row to zero mean / unit variance (population variance, with
/// `eps` inside the square root), then apply the learned gain and bias.
pub fn layer_norm_forward(
    x: &Array2<f64>,
    p: &LayerNormParams,
    eps: f64,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    let mut y = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mean = row.sum() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[i] = istd;
        for j in 0..x.ncols() {
            let xh = (x[[i, j]] - mean) * istd;
            xhat[[i, j]] = xh;
            y[[i, j]] = p.gain[j] * xh + p.bias[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    p: &LayerNormParams,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let (n, d) = (dy.nrows(), dy.ncols());
    let df = d as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..n {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxh = dy[[i, j]] * p.gain[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * cache.xhat[[i, j]];
            dgain[j] += dy[[i, j]] * cache.xhat[[i, j]];
            dbias[j] += dy[[i, j]];
        }
        let istd = cache.inv_std[i];
        for j in 0..d {
            let dxh = dy[[i, j]] * p.gain[j];
            dx[[i, j]] =
                istd * (dxh - sum_dxhat / df - cache.xhat[[i, j]] * sum_dxhat_xhat / df);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction for stability.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Post-softmax attention weights, one T x T matrix per head.
    pub probs: Vec<Array2<f64>>,
    pub prob_masks: Vec<DropoutMask>,
    /// Attention weights actually applied (after dropout).
    pub dropped: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub context: Array2<f64>,
}

/// Multi-head scaled dot-product self-attention. Masked positions (where
/// `mask[j]` is false) receive `-inf` key scores before the softmax, so no
/// query attends to them.
pub fn attention_forward(
    x: &Array2<f64>,
    p: &AttentionParams,
    n_heads: usize,
    mask: Option<&[bool]>,
    dropout_rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, AttentionCache) {
    let (t, d) = (x.nrows(), x.ncols());
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = p.query.forward(x);
    let k = p.key.forward(x);
    let v = p.value.forward(x);

    let mut context = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    let mut prob_masks = Vec::with_capacity(n_heads);
    let mut dropped = Vec::with_capacity(n_heads);

    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);

        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|v| v * scale);
        if let Some(mask) = mask {
            for (j, &keep) in mask.iter().enumerate() {
                if !keep {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
        }
        softmax_rows(&mut scores);

        let (dropped_h, mask_h) = dropout_forward(&scores, dropout_rate, rng.as_deref_mut());
        context.slice_mut(cols).assign(&dropped_h.dot(&vh));
        probs.push(scores);
        prob_masks.push(mask_h);
        dropped.push(dropped_h);
    }

    let out = p.output.forward(&context);
    (
        out,
        AttentionCache {
            q,
            k,
            v,
            probs,
            prob_masks,
            dropped,
            context,
        },
    )
}

/// Backward through attention; accumulates parameter gradients into `grads`
/// and returns the gradient with respect to the layer input.
pub fn attention_backward(
    dout: &Array2<f64>,
    x: &Array2<f64>,
    cache: &AttentionCache,
    p: &AttentionParams,
    grads: &mut AttentionParams,
    n_heads: usize,
) -> Array2<f64> {
    let (t, d) = (x.nrows(), x.ncols());
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    grads.output.weight += &cache.context.t().dot(dout);
    grads.output.bias += &dout.sum_axis(Axis(0));
    let dcontext = dout.dot(&p.output.weight.t());

    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));

    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dcontext.slice(cols);
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);

        // context_h = dropped_h . vh
        let ddropped = dctx_h.dot(&vh.t());
        dv.slice_mut(cols).assign(&cache.dropped[h].t().dot(&dctx_h));

        let dprobs = dropout_backward(&ddropped, &cache.prob_masks[h]);

        // Softmax backward per row: ds = p * (dp - <dp, p>). Masked columns
        // have p = 0 and therefore get no gradient, as they should.
        let probs = &cache.probs[h];
        let mut dscores = Array2::zeros((t, t));
        for i in 0..t {
            let mut dot = 0.0;
            for j in 0..t {
                dot += dprobs[[i, j]] * probs[[i, j]];
            }
            for j in 0..t {
                dscores[[i, j]] = probs[[i, j]] * (dprobs[[i, j]] - dot) * scale;
            }
        }

        dq.slice_mut(cols).assign(&dscores.dot(&kh));
        dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
    }

    grads.query.weight += &x.t().dot(&dq);
    grads.query.bias += &dq.sum_axis(Axis(0));
    grads.key.weight += &x.t().dot(&dk);
    grads.key.bias += &dk.sum_axis(Axis(0));
    grads.value.weight += &x.t().dot(&dv);
    grads.value.bias += &dv.sum_axis(Axis(0));

    dq.dot(&p.query.weight.t()) + dk.dot(&p.key.weight.t()) + dv.dot(&p.value.weight.t())
}

// ---------------------------------------------------------------------------
// full layer: attention -> add & norm -> feed-forward -> add & norm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub x: Array2<f64>,
    pub attention: AttentionCache,
    pub attn_drop: DropoutMask,
    pub ln1: LayerNormCache,
    /// Output of the first add & norm (input to the feed-forward block).
    pub x1: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
    pub ffn_drop: DropoutMask,
    pub ln2: LayerNormCache,
}

pub fn layer_forward(
    x: &Array2<f64>,
    p: &LayerParams,
    cfg: &EncoderConfig,
    mask: Option<&[bool]>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, LayerCache) {
    let (attn_out, attention) =
        attention_forward(x, &p.attention, cfg.n_heads, mask, cfg.dropout_rate, rng.as_deref_mut());
    let (attn_dropped, attn_drop) = dropout_forward(&attn_out, cfg.dropout_rate, rng.as_deref_mut());
    let r1 = x + &attn_dropped;
    let (x1, ln1) = layer_norm_forward(&r1, &p.attention_norm, cfg.layer_norm_eps);

    let ffn_pre = p.ffn_in.forward(&x1);
    let ffn_act = ffn_pre.mapv(|v| cfg.activation.apply(v));
    let ffn_out = p.ffn_out.forward(&ffn_act);
    let (ffn_dropped, ffn_drop) = dropout_forward(&ffn_out, cfg.dropout_rate, rng);
    let r2 = &x1 + &ffn_dropped;
    let (x2, ln2) = layer_norm_forward(&r2, &p.ffn_norm, cfg.layer_norm_eps);

    (
        x2,
        LayerCache {
            x: x.clone(),
            attention,
            attn_drop,
            ln1,
            x1,
            ffn_pre,
            ffn_act,
            ffn_drop,
            ln2,
        },
    )
}

pub fn layer_backward(
    dout: &Array2<f64>,
    cache: &LayerCache,
    p: &LayerParams,
    grads: &mut LayerParams,
    cfg: &EncoderConfig,
) -> Array2<f64> {
    let dr2 = layer_norm_backward(
        dout,
        &cache.ln2,
        &p.ffn_norm,
        &mut grads.ffn_norm.gain,
        &mut grads.ffn_norm.bias,
    );

    // r2 = x1 + dropout(ffn_out): the residual copy and the FFN branch.
    let dffn_out = dropout_backward(&dr2, &cache.ffn_drop);
    let mut dx1 = dr2;

    grads.ffn_out.weight += &cache.ffn_act.t().dot(&dffn_out);
    grads.ffn_out.bias += &dffn_out.sum_axis(Axis(0));
    let dact = dffn_out.dot(&p.ffn_out.weight.t());
    let dpre = &dact * &cache.ffn_pre.mapv(|v| cfg.activation.derivative(v));
    grads.ffn_in.weight += &cache.x1.t().dot(&dpre);
    grads.ffn_in.bias += &dpre.sum_axis(Axis(0));
    dx1 += &dpre.dot(&p.ffn_in.weight.t());

    let dr1 = layer_norm_backward(
        &dx1,
        &cache.ln1,
        &p.attention_norm,
        &mut grads.attention_norm.gain,
        &mut grads.attention_norm.bias,
    );

    // r1 = x + dropout(attn_out).
    let dattn_out = dropout_backward(&dr1, &cache.attn_drop);
    let dx_attn = attention_backward(
        &dattn_out,
        &cache.x,
        &cache.attention,
        &p.attention,
        &mut grads.attention,
        cfg.n_heads,
    );
    dr1 + dx_attn
}
