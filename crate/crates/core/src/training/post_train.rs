//! Unsupervised post-training of the encoder on raw dialogues: masked-token
//! prediction plus the consecutive-vs-random sentence-pair objective, both
//! trained jointly one pair per step.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::{clip_gradients, cosine_lr, AdamState};
use crate::corpus::Corpus;
use crate::encoder::params::EncoderParams;
use crate::encoder::pretrain::{
    build_nsp_pairs, mask_tokens, mlm_loss_backward, mlm_loss_forward, nsp_loss_backward,
    nsp_loss_forward,
};
use crate::encoder::{embed_backward, embed_ids, encode_backward, encode_traced, EncoderConfig, Phase};
use crate::error::{Error, Result};
use crate::tokenizer::TokenVocabulary;

fn default_steps() -> usize {
    1000
}
fn default_eta_max() -> f64 {
    2e-5
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_mask_rate() -> f64 {
    0.15
}
fn default_seed() -> u64 {
    13
}

/// Post-training hyperparameters. The 1000-step default is sized for desk
/// experiments; production-scale encoders want on the order of 100000 steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PostTrainConfig {
    pub steps: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub clip_norm: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for PostTrainConfig {
    fn default() -> Self {
        PostTrainConfig {
            steps: default_steps(),
            eta_max: default_eta_max(),
            eta_min: 0.0,
            clip_norm: default_clip_norm(),
            mask_rate: default_mask_rate(),
            seed: default_seed(),
        }
    }
}

impl PostTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta_max <= 0.0 || self.eta_min < 0.0 || self.eta_min > self.eta_max {
            return Err(Error::Config {
                message: format!(
                    "learning rates must satisfy 0 <= eta_min <= eta_max, got {} and {}",
                    self.eta_min, self.eta_max
                ),
            });
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config {
                message: format!("clip_norm must be positive, got {}", self.clip_norm),
            });
        }
        if !(0.0..=1.0).contains(&self.mask_rate) || self.mask_rate == 0.0 {
            return Err(Error::Config {
                message: format!("mask_rate must lie in (0, 1], got {}", self.mask_rate),
            });
        }
        Ok(())
    }
}

/// One post-training step (serialized as a CSV row by the command line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub lr: f64,
}

/// Run masked-token + sentence-pair training over `cfg.steps` sampled pairs.
///
/// Masking redraws until at least one target is selected, so every step has
/// a defined masked-token loss; pairs without a single maskable token are
/// skipped (a thousand such pairs in a row is an error). Deterministic per
/// seed.
pub fn post_train(
    encoder: &mut EncoderParams,
    encoder_cfg: &EncoderConfig,
    optimizer: &mut AdamState,
    corpus: &Corpus,
    vocab: &TokenVocabulary,
    cfg: &PostTrainConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let mut pairs = build_nsp_pairs(corpus, vocab, encoder_cfg.max_len, cfg.seed)?;
    // Distinct stream from the pair sampler, so pair choice and corruption
    // draws stay decoupled.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut attempts = 0;
        let (pair, corrupted, targets) = loop {
            let pair = pairs.next().expect("pair stream is endless");
            if pair.token_ids.iter().any(|&id| !vocab.is_special_id(id)) {
                let (corrupted, targets) = loop {
                    let (c, t) = mask_tokens(&pair.token_ids, vocab, cfg.mask_rate, &mut rng);
                    if !t.is_empty() {
                        break (c, t);
                    }
                };
                break (pair, corrupted, targets);
            }
            attempts += 1;
            if attempts >= 1000 {
                return Err(Error::Training {
                    message: "no maskable token in 1000 sampled pairs; \
                              the corpus tokenizes to specials only"
                        .into(),
                });
            }
        };

        let embedded = embed_ids(&corrupted, Some(&pair.segment_ids), encoder, encoder_cfg)?;
        let (reps, trace) = encode_traced(
            &embedded,
            None,
            encoder,
            encoder_cfg,
            &mut Phase::Train {
                dropout_rng: &mut rng,
            },
        )?;
        let (mlm_loss, mlm_cache) = mlm_loss_forward(&reps, &targets, &encoder.mlm_head)?;
        let (nsp_loss, nsp_cache) =
            nsp_loss_forward(&reps, pair.is_consecutive, &encoder.nsp_head)?;

        let mut grads = EncoderParams::zeros(encoder_cfg);
        let mut dreps = Array2::zeros(reps.raw_dim());
        mlm_loss_backward(&reps, &mlm_cache, &encoder.mlm_head, &mut grads.mlm_head, &mut dreps);
        nsp_loss_backward(&reps, &nsp_cache, &encoder.nsp_head, &mut grads.nsp_head, &mut dreps);
        let d_embedded = encode_backward(&dreps, &trace, encoder, &mut grads, encoder_cfg);
        embed_backward(&d_embedded, &corrupted, Some(&pair.segment_ids), &mut grads);
        clip_gradients(&mut grads, cfg.clip_norm)?;

        let lr = cosine_lr(cfg.eta_max, cfg.eta_min, step as f64, cfg.steps as f64);
        optimizer.step(encoder, &grads, lr)?;
        log.push(StepLog {
            step,
            mlm_loss,
            nsp_loss,
            lr,
        });
    }
    Ok(log)
}
