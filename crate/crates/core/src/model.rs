//! The full classification model: encoder, pooling, and emotion head glued
//! into one parameter bundle with a single forward/backward pair.

use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointHeader, TensorRecord};
use crate::classifier::{
    classify, classify_backward, ClassWeights, ClassifierCache, ClassifierConfig,
    ClassifierParams, PredictionDistribution,
};
use crate::corpus::EmotionLabel;
use crate::encoder::params::EncoderParams;
use crate::encoder::{
    embed, embed_backward, encode_backward, encode_traced, EncoderConfig, EncoderTrace, Phase,
};
use crate::error::{Error, Result};
use crate::pooling::{pool_backward, pool_utterances, PoolingCache, PoolingMode};
use crate::tensors::{NamedTensors, TensorMut, TensorRef};
use crate::tokenizer::PackedDialogue;

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub encoder_config: EncoderConfig,
    pub classifier_config: ClassifierConfig,
    pub pooling: PoolingMode,
}

/// Everything the backward pass needs from one forward pass.
pub struct ModelCache {
    token_ids: Vec<u32>,
    trace: EncoderTrace,
    pooling: PoolingCache,
    classifier: ClassifierCache,
    d_model: usize,
}

impl Model {
    /// Fresh model with random encoder and head.
    pub fn init(
        encoder_config: EncoderConfig,
        classifier_config: ClassifierConfig,
        pooling: PoolingMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        encoder_config.validate()?;
        classifier_config.validate()?;
        if classifier_config.d_model != encoder_config.d_model {
            return Err(Error::Config {
                message: format!(
                    "classifier expects d_model {}, encoder provides {}",
                    classifier_config.d_model, encoder_config.d_model
                ),
            });
        }
        Ok(Model {
            encoder: EncoderParams::init(&encoder_config, rng),
            classifier: ClassifierParams::init(&classifier_config, rng),
            encoder_config,
            classifier_config,
            pooling,
        })
    }

    /// Same shapes as `self`, all parameters zero — a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: EncoderParams::zeros(&self.encoder_config),
            classifier: ClassifierParams::zeros(&self.classifier_config),
            encoder_config: self.encoder_config.clone(),
            classifier_config: self.classifier_config.clone(),
            pooling: self.pooling,
        }
    }

    /// Run one packed dialogue through encoder, pooling, and head.
    ///
    /// Returns one probability row per included utterance (zero rows when
    /// packing produced no spans) plus the cache for [`Model::backward`].
    pub fn forward(
        &self,
        packed: &PackedDialogue,
        phase: &mut Phase<'_>,
    ) -> Result<(Array2<f64>, ModelCache)> {
        let embedded = embed(packed, &self.encoder, &self.encoder_config)?;
        let (reps, trace) =
            encode_traced(&embedded, None, &self.encoder, &self.encoder_config, phase)?;
        let (pooled, pooling) = pool_utterances(&reps, packed, self.pooling)?;
        let (probs, classifier) =
            classify(&pooled, &self.classifier, &self.classifier_config, phase)?;
        Ok((
            probs,
            ModelCache {
                token_ids: packed.token_ids.clone(),
                trace,
                pooling,
                classifier,
                d_model: self.encoder_config.d_model,
            },
        ))
    }

    /// Accumulate gradients of the weighted cross-entropy into `grads`.
    pub fn backward(
        &self,
        golds: &[EmotionLabel],
        weights: &ClassWeights,
        cache: &ModelCache,
        grads: &mut Model,
    ) -> Result<()> {
        let dpooled = classify_backward(
            golds,
            weights,
            &cache.classifier,
            &self.classifier,
            &mut grads.classifier,
        )?;
        let dreps = pool_backward(&dpooled, &cache.pooling, cache.token_ids.len(), cache.d_model);
        let d_embedded = encode_backward(
            &dreps,
            &cache.trace,
            &self.encoder,
            &mut grads.encoder,
            &self.encoder_config,
        );
        embed_backward(&d_embedded, &cache.token_ids, None, &mut grads.encoder);
        Ok(())
    }

    /// Inference-mode distributions for the included utterances of `packed`.
    pub fn predict(&self, packed: &PackedDialogue) -> Result<Vec<PredictionDistribution>> {
        let (probs, _) = self.forward(packed, &mut Phase::Inference)?;
        Ok(crate::classifier::predictions(&probs))
    }

    /// Predict a dialogue end to end: one slot per utterance, `None` where
    /// packing had to exclude the utterance. Fallback policy for excluded
    /// slots is the caller's business.
    pub fn predict_dialogue(
        &self,
        dialogue: &crate::corpus::Dialogue,
        vocab: &crate::tokenizer::TokenVocabulary,
    ) -> Result<Vec<Option<PredictionDistribution>>> {
        let packed =
            crate::tokenizer::pack_dialogue_text(dialogue, vocab, self.encoder_config.max_len);
        let distributions = self.predict(&packed)?;
        let mut slots = vec![None; dialogue.utterances.len()];
        for (dist, &ui) in distributions.into_iter().zip(&packed.included_utterance_indices) {
            slots[ui] = Some(dist);
        }
        Ok(slots)
    }

    // -- persistence ---------------------------------------------------------

    pub fn header(&self, class_counts: Option<[u64; EmotionLabel::COUNT]>) -> CheckpointHeader {
        let mut header = CheckpointHeader::new(self.encoder_config.clone());
        header.classifier = Some(self.classifier_config.clone());
        header.pooling = Some(self.pooling);
        header.class_counts = class_counts;
        header
    }

    /// Encoder tensors at their bare paths, head tensors under `classifier/`.
    pub fn records(&self) -> Vec<TensorRecord> {
        let mut records = checkpoint::collect_records("", &self.encoder);
        records.extend(checkpoint::collect_records("classifier/", &self.classifier));
        records
    }

    pub fn save(
        &self,
        path: &Path,
        class_counts: Option<[u64; EmotionLabel::COUNT]>,
    ) -> Result<()> {
        checkpoint::save(path, &self.header(class_counts), &self.records())
    }

    /// Rebuild a model from header + records (as returned by
    /// [`checkpoint::load`]).
    pub fn from_checkpoint(
        path: &Path,
        header: &CheckpointHeader,
        records: &[TensorRecord],
    ) -> Result<Self> {
        let classifier_config = header.classifier.clone().ok_or_else(|| Error::Checkpoint {
            path: path.display().to_string(),
            message: "checkpoint has no classification head".into(),
        })?;
        let mut encoder = EncoderParams::zeros(&header.encoder);
        checkpoint::restore_records(path, "", records, &mut encoder)?;
        let mut classifier = ClassifierParams::zeros(&classifier_config);
        checkpoint::restore_records(path, "classifier/", records, &mut classifier)?;
        Ok(Model {
            encoder,
            classifier,
            encoder_config: header.encoder.clone(),
            classifier_config,
            pooling: header.pooling.unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, records) = checkpoint::load(path)?;
        let model = Model::from_checkpoint(path, &header, &records)?;
        Ok((model, header))
    }
}

/// Save an encoder without a classification head — the product of
/// post-training, consumed later as a fine-tuning starting point.
pub fn save_encoder(path: &Path, config: &EncoderConfig, params: &EncoderParams) -> Result<()> {
    checkpoint::save(
        path,
        &CheckpointHeader::new(config.clone()),
        &checkpoint::collect_records("", params),
    )
}

/// Load the encoder half of any checkpoint, headless or full.
pub fn load_encoder(path: &Path) -> Result<(EncoderParams, EncoderConfig)> {
    let (header, records) = checkpoint::load(path)?;
    let mut encoder = EncoderParams::zeros(&header.encoder);
    checkpoint::restore_records(path, "", &records, &mut encoder)?;
    Ok((encoder, header.encoder))
}

impl NamedTensors for Model {
    fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = self.encoder.tensors();
        out.extend(
            self.classifier
                .tensors()
                .into_iter()
                .map(|(p, t)| (format!("classifier/{p}"), t)),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out = self.encoder.tensors_mut();
        out.extend(
            self.classifier
                .tensors_mut()
                .into_iter()
                .map(|(p, t)| (format!("classifier/{p}"), t)),
        );
        out
    }
}
