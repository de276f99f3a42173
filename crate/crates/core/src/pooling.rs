//! Collapse per-token representations into one vector per utterance using
//! the spans recorded during packing.
//!
//! Max pooling over an utterance's tokens is the primary mode: each output
//! coordinate takes the largest value that coordinate attains anywhere in
//! the span, so the utterance vector can mix features from different tokens.
//! Mean pooling is kept as a baseline for comparisons.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::PackedDialogue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Max,
    Mean,
}

impl Default for PoolingMode {
    fn default() -> Self {
        PoolingMode::Max
    }
}

/// What the backward pass needs: which token won each coordinate (max) or
/// the span lengths (mean).
#[derive(Debug)]
pub struct PoolingCache {
    mode: PoolingMode,
    spans: Vec<(usize, usize)>,
    /// For max pooling: `argmax[u][j]` is the absolute token row that
    /// supplied coordinate `j` of utterance `u`. Ties go to the lowest row.
    argmax: Vec<Vec<usize>>,
}

fn check_spans(packed: &PackedDialogue, n_tokens: usize) -> Result<()> {
    for &(start, end) in &packed.spans {
        if start >= end || end > n_tokens {
            return Err(Error::PoolingSpan {
                start,
                end,
                len: n_tokens,
            });
        }
    }
    Ok(())
}

/// Pool token rows of `reps` into one row per included utterance.
///
/// Returns an `n_utterances x d_model` matrix in span order plus the cache
/// for [`pool_backward`]. A dialogue whose packing produced no spans yields
/// a `0 x d_model` matrix.
pub fn pool_utterances(
    reps: &Array2<f64>,
    packed: &PackedDialogue,
    mode: PoolingMode,
) -> Result<(Array2<f64>, PoolingCache)> {
    check_spans(packed, reps.nrows())?;
    let d = reps.ncols();
    let mut pooled = Array2::zeros((packed.spans.len(), d));
    let mut argmax = Vec::new();

    for (u, &(start, end)) in packed.spans.iter().enumerate() {
        match mode {
            PoolingMode::Max => {
                let mut winners = vec![start; d];
                let mut best: Array1<f64> = reps.row(start).to_owned();
                for t in start + 1..end {
                    let row = reps.row(t);
                    for j in 0..d {
                        if row[j] > best[j] {
                            best[j] = row[j];
                            winners[j] = t;
                        }
                    }
                }
                pooled.row_mut(u).assign(&best);
                argmax.push(winners);
            }
            PoolingMode::Mean => {
                let mut sum: Array1<f64> = Array1::zeros(d);
                for t in start..end {
                    sum += &reps.row(t);
                }
                sum /= (end - start) as f64;
                pooled.row_mut(u).assign(&sum);
            }
        }
    }

    Ok((
        pooled,
        PoolingCache {
            mode,
            spans: packed.spans.clone(),
            argmax,
        },
    ))
}

/// Route utterance-level gradients back onto token rows.
///
/// Max pooling sends each coordinate's gradient to the single token that won
/// it (lowest row on ties); mean pooling spreads it uniformly over the span.
pub fn pool_backward(
    dpooled: &Array2<f64>,
    cache: &PoolingCache,
    n_tokens: usize,
    d_model: usize,
) -> Array2<f64> {
    let mut dreps = Array2::zeros((n_tokens, d_model));
    for (u, &(start, end)) in cache.spans.iter().enumerate() {
        match cache.mode {
            PoolingMode::Max => {
                for j in 0..d_model {
                    dreps[[cache.argmax[u][j], j]] += dpooled[[u, j]];
                }
            }
            PoolingMode::Mean => {
                let scale = 1.0 / (end - start) as f64;
                for t in start..end {
                    for j in 0..d_model {
                        dreps[[t, j]] += dpooled[[u, j]] * scale;
                    }
                }
            }
        }
    }
    dreps
}
