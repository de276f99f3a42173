//! Post-training machinery: token corruption for masked-token prediction,
//! sentence-pair sampling for the consecutive-vs-random objective, and both
//! losses with hand-derived backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::LinearParams;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize_utterance, TokenVocabulary};

/// Class index for "segment B directly follows segment A".
pub const NSP_CONSECUTIVE: usize = 0;
/// Class index for "segments come from different dialogues".
pub const NSP_RANDOM: usize = 1;

/// Corrupt a token sequence for masked-token training.
///
/// Every non-special position is independently selected with probability
/// `rate`. A selected position becomes `[MASK]` with probability 0.8, a
/// uniformly random ordinary token with probability 0.1, and keeps its
/// original id with probability 0.1 — it is a prediction target in all three
/// cases. Returns the corrupted sequence plus `(position, original id)`
/// targets in position order. Deterministic for a given generator state.
pub fn mask_tokens(
    ids: &[u32],
    vocab: &TokenVocabulary,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<(usize, u32)>) {
    let mut corrupted = ids.to_vec();
    let mut targets = Vec::new();
    for (pos, &id) in ids.iter().enumerate() {
        if vocab.is_special_id(id) {
            continue;
        }
        if rng.gen::<f64>() >= rate {
            continue;
        }
        targets.push((pos, id));
        let u: f64 = rng.gen();
        if u < 0.8 {
            corrupted[pos] = vocab.mask_id;
        } else if u < 0.9 {
            let pool = vocab.non_special_ids();
            // A vocabulary of only specials has nothing to substitute; fall
            // back to the mask token.
            corrupted[pos] = if pool.is_empty() {
                vocab.mask_id
            } else {
                pool[rng.gen_range(0..pool.len())]
            };
        }
        // else: position stays intact but is still predicted.
    }
    (corrupted, targets)
}

/// One sentence pair packed as `[CLS] a [SEP] b [SEP]` with a 0/1 segment
/// vector separating the two halves.
#[derive(Debug, Clone)]
pub struct NspPair {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub is_consecutive: bool,
}

impl NspPair {
    pub fn label_index(&self) -> usize {
        if self.is_consecutive {
            NSP_CONSECUTIVE
        } else {
            NSP_RANDOM
        }
    }
}

/// Endless sampler of sentence pairs: half consecutive utterances from one
/// dialogue, half random utterances from two different dialogues.
pub struct NspPairStream<'a> {
    utterance_tokens: Vec<Vec<Vec<u32>>>,
    /// Dialogues with at least two utterances (candidates for consecutive
    /// pairs).
    multi: Vec<usize>,
    vocab: &'a TokenVocabulary,
    max_len: usize,
    rng: ChaCha8Rng,
}

/// Build the pair sampler. Utterances are tokenized once up front.
pub fn build_nsp_pairs<'a>(
    corpus: &Corpus,
    vocab: &'a TokenVocabulary,
    max_len: usize,
    seed: u64,
) -> Result<NspPairStream<'a>> {
    if corpus.dialogues.len() < 2 {
        return Err(Error::Training {
            message: "sentence-pair sampling needs at least two dialogues".into(),
        });
    }
    if max_len < 5 {
        return Err(Error::Training {
            message: format!("max_len {max_len} cannot fit [CLS] a [SEP] b [SEP]"),
        });
    }
    let utterance_tokens: Vec<Vec<Vec<u32>>> = corpus
        .dialogues
        .iter()
        .map(|d| {
            d.utterances
                .iter()
                .map(|u| tokenize_utterance(&u.text, vocab))
                .collect()
        })
        .collect();
    let multi: Vec<usize> = (0..utterance_tokens.len())
        .filter(|&d| utterance_tokens[d].len() >= 2)
        .collect();
    if multi.is_empty() {
        return Err(Error::Training {
            message: "no dialogue has two consecutive utterances to pair".into(),
        });
    }
    Ok(NspPairStream {
        utterance_tokens,
        multi,
        vocab,
        max_len,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl Iterator for NspPairStream<'_> {
    type Item = NspPair;

    fn next(&mut self) -> Option<NspPair> {
        let consecutive = self.rng.gen::<f64>() < 0.5;
        let (a, b) = if consecutive {
            let d = self.multi[self.rng.gen_range(0..self.multi.len())];
            let i = self.rng.gen_range(0..self.utterance_tokens[d].len() - 1);
            (
                self.utterance_tokens[d][i].clone(),
                self.utterance_tokens[d][i + 1].clone(),
            )
        } else {
            let n = self.utterance_tokens.len();
            let d1 = self.rng.gen_range(0..n);
            let d2 = loop {
                let c = self.rng.gen_range(0..n);
                if c != d1 {
                    break c;
                }
            };
            let u1 = self.rng.gen_range(0..self.utterance_tokens[d1].len());
            let u2 = self.rng.gen_range(0..self.utterance_tokens[d2].len());
            (
                self.utterance_tokens[d1][u1].clone(),
                self.utterance_tokens[d2][u2].clone(),
            )
        };
        Some(assemble_pair(a, b, self.vocab, self.max_len, consecutive))
    }
}

/// Pack two token lists as `[CLS] a [SEP] b [SEP]`, trimming the longer tail
/// first until the pair fits `max_len`. Both segments stay non-empty.
fn assemble_pair(
    mut a: Vec<u32>,
    mut b: Vec<u32>,
    vocab: &TokenVocabulary,
    max_len: usize,
    is_consecutive: bool,
) -> NspPair {
    let budget = max_len - 3;
    while a.len() + b.len() > budget {
        if a.len() >= b.len() && a.len() > 1 {
            a.pop();
        } else {
            b.pop();
        }
    }

    let mut token_ids = Vec::with_capacity(a.len() + b.len() + 3);
    let mut segment_ids = Vec::with_capacity(a.len() + b.len() + 3);
    token_ids.push(vocab.cls_id);
    segment_ids.push(0);
    token_ids.extend_from_slice(&a);
    segment_ids.extend(std::iter::repeat(0).take(a.len()));
    token_ids.push(vocab.sep_id);
    segment_ids.push(0);
    token_ids.extend_from_slice(&b);
    segment_ids.extend(std::iter::repeat(1).take(b.len()));
    token_ids.push(vocab.sep_id);
    segment_ids.push(1);

    NspPair {
        token_ids,
        segment_ids,
        is_consecutive,
    }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct MlmCache {
    positions: Vec<usize>,
    target_ids: Vec<u32>,
    /// Softmax over the vocabulary, one row per target.
    probs: Array2<f64>,
}

/// Mean cross-entropy of the original ids at the target positions, computed
/// with a log-softmax for stability. With an all-zero head the predictive
/// distribution is uniform and the loss is exactly ln(vocab_size).
pub fn mlm_loss_forward(
    reps: &Array2<f64>,
    targets: &[(usize, u32)],
    head: &LinearParams,
) -> Result<(f64, MlmCache)> {
    if targets.is_empty() {
        return Err(Error::Training {
            message: "masked-token loss needs at least one target position".into(),
        });
    }
    let vocab_size = head.weight.ncols();
    if reps.ncols() != head.weight.nrows() {
        return Err(Error::Shape {
            operation: "mlm_loss".into(),
            expected: format!("reps with {} columns", head.weight.nrows()),
            actual: format!("{}", reps.ncols()),
        });
    }

    let mut probs = Array2::zeros((targets.len(), vocab_size));
    let mut positions = Vec::with_capacity(targets.len());
    let mut target_ids = Vec::with_capacity(targets.len());
    let mut loss = 0.0;
    for (row, &(pos, id)) in targets.iter().enumerate() {
        if pos >= reps.nrows() || (id as usize) >= vocab_size {
            return Err(Error::Shape {
                operation: "mlm_loss".into(),
                expected: format!("position < {} and id < {vocab_size}", reps.nrows()),
                actual: format!("position {pos}, id {id}"),
            });
        }
        let logits = reps.row(pos).dot(&head.weight) + &head.bias;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss -= logits[id as usize] - lse;
        for v in 0..vocab_size {
            probs[[row, v]] = (logits[v] - lse).exp();
        }
        positions.push(pos);
        target_ids.push(id);
    }
    loss /= targets.len() as f64;
    Ok((
        loss,
        MlmCache {
            positions,
            target_ids,
            probs,
        },
    ))
}

/// Accumulate gradients of the masked-token loss into the head and `dreps`.
pub fn mlm_loss_backward(
    reps: &Array2<f64>,
    cache: &MlmCache,
    head: &LinearParams,
    head_grads: &mut LinearParams,
    dreps: &mut Array2<f64>,
) {
    let n = cache.positions.len() as f64;
    for (row, (&pos, &tid)) in cache.positions.iter().zip(&cache.target_ids).enumerate() {
        let mut dlogits = cache.probs.row(row).to_owned();
        dlogits[tid as usize] -= 1.0;
        dlogits.mapv_inplace(|v| v / n);

        let rep = reps.row(pos);
        head_grads.weight += &rep
            .insert_axis(Axis(1))
            .dot(&dlogits.view().insert_axis(Axis(0)));
        head_grads.bias += &dlogits;

        let dr = head.weight.dot(&dlogits);
        let mut target_row = dreps.row_mut(pos);
        target_row += &dr;
    }
}

#[derive(Debug)]
pub struct NspCache {
    probs: Array1<f64>,
    label: usize,
}

/// Cross-entropy of the consecutive-vs-random label, read off the `[CLS]`
/// row (row 0) of the representations. An all-zero head gives ln 2.
pub fn nsp_loss_forward(
    reps: &Array2<f64>,
    is_consecutive: bool,
    head: &LinearParams,
) -> Result<(f64, NspCache)> {
    if reps.nrows() == 0 || reps.ncols() != head.weight.nrows() || head.weight.ncols() != 2 {
        return Err(Error::Shape {
            operation: "nsp_loss".into(),
            expected: format!("non-empty reps with {} columns, 2-way head", head.weight.nrows()),
            actual: format!("{} x {} reps", reps.nrows(), reps.ncols()),
        });
    }
    let logits = reps.row(0).dot(&head.weight) + &head.bias;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let label = if is_consecutive { NSP_CONSECUTIVE } else { NSP_RANDOM };
    let loss = -(logits[label] - lse);
    let probs = logits.mapv(|v| (v - lse).exp());
    Ok((loss, NspCache { probs, label }))
}

pub fn nsp_loss_backward(
    reps: &Array2<f64>,
    cache: &NspCache,
    head: &LinearParams,
    head_grads: &mut LinearParams,
    dreps: &mut Array2<f64>,
) {
    let mut dlogits = cache.probs.clone();
    dlogits[cache.label] -= 1.0;

    let cls = reps.row(0);
    head_grads.weight += &cls
        .insert_axis(Axis(1))
        .dot(&dlogits.view().insert_axis(Axis(0)));
    head_grads.bias += &dlogits;

    let dr = head.weight.dot(&dlogits);
    let mut cls_row = dreps.row_mut(0);
    cls_row += &dr;
}
