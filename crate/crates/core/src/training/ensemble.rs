//! K-fold ensembling: train one model per fold, predict by majority vote.
//!
//! Ties break in two stages — highest summed probability among the tied
//! classes, then training-set frequency order. Utterances the packer had to
//! exclude get the majority training class, flagged as fallbacks.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::finetune::{train, TrainConfig, TrainLog};
use super::optimizer::AdamState;
use crate::classifier::{ClassifierConfig, PredictionDistribution};
use crate::corpus::{class_counts, split_folds, subset, ClassCounts, Corpus, Dialogue, EmotionLabel};
use crate::encoder::params::EncoderParams;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensors::NamedTensors;
use crate::tokenizer::TokenVocabulary;

fn default_k() -> usize {
    5
}
fn default_seed() -> u64 {
    13
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Number of folds, and therefore of ensemble members.
    pub k: usize,
    /// Seed for the fold split and member initialization.
    pub seed: u64,
    /// Worker threads for member training; 0 means one per core.
    pub jobs: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: default_k(),
            seed: default_seed(),
            jobs: 0,
        }
    }
}

pub struct EnsembleModel {
    pub members: Vec<Model>,
    /// Gold distribution of the full training corpus; drives tie-breaking
    /// and the fallback label.
    pub class_counts: ClassCounts,
    pub k: usize,
    pub seed: u64,
    /// Dialogue ids each member held out as its validation fold. Recorded in
    /// the manifest so a saved ensemble documents its own fold assignment.
    pub fold_validation: Vec<Vec<String>>,
}

/// One utterance's ensemble decision.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePrediction {
    pub label: EmotionLabel,
    /// True when packing excluded the utterance and the label is the
    /// majority training class rather than a model output.
    pub excluded_fallback: bool,
}

/// Train `k` members, each on `k-1` folds with the remaining fold as its
/// validation split. Member `i` initializes from seed `cfg.seed + 1 + i` and
/// trains with shuffling seed `train_cfg.seed + i`, so runs are reproducible
/// and members decorrelated. `init_encoder` starts every member from a
/// post-trained encoder instead of random weights.
pub fn train_kfold_ensemble(
    corpus: &Corpus,
    vocab: &TokenVocabulary,
    encoder_cfg: &EncoderConfig,
    classifier_cfg: &ClassifierConfig,
    train_cfg: &TrainConfig,
    cfg: &EnsembleConfig,
    init_encoder: Option<&EncoderParams>,
) -> Result<(EnsembleModel, Vec<TrainLog>)> {
    if let Some(init) = init_encoder {
        let expected = (encoder_cfg.vocab_size, encoder_cfg.d_model);
        let got = (init.token_embedding.nrows(), init.token_embedding.ncols());
        if expected != got {
            return Err(Error::Config {
                message: format!(
                    "initial encoder has token embedding {got:?}, configuration wants {expected:?}"
                ),
            });
        }
    }
    let counts = class_counts(corpus)?;
    let folds = split_folds(corpus, cfg.k, cfg.seed)?;

    let train_member = |(i, fold): (usize, &crate::corpus::FoldSplit)| {
        let train_split = subset(corpus, &fold.train, &format!("{}:fold{}:train", corpus.name, i));
        let val_split = subset(
            corpus,
            &fold.validation,
            &format!("{}:fold{}:validation", corpus.name, i),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + i as u64));
        let mut model = Model::init(
            encoder_cfg.clone(),
            classifier_cfg.clone(),
            train_cfg.pooling,
            &mut rng,
        )?;
        if let Some(init) = init_encoder {
            model.encoder = init.clone();
        }
        let member_cfg = TrainConfig {
            seed: train_cfg.seed.wrapping_add(i as u64),
            ..train_cfg.clone()
        };
        let mut adam = AdamState::new(model.n_parameters());
        let log = train(&mut model, &mut adam, &train_split, Some(&val_split), vocab, &member_cfg)?;
        Ok((model, log))
    };

    let outcomes: Vec<(Model, TrainLog)> = if cfg.jobs == 1 {
        folds.iter().enumerate().map(train_member).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Training {
                message: format!("worker pool construction failed: {e}"),
            })?;
        pool.install(|| {
            folds
                .par_iter()
                .enumerate()
                .map(train_member)
                .collect::<Result<_>>()
        })?
    };

    let (members, logs): (Vec<Model>, Vec<TrainLog>) = outcomes.into_iter().unzip();
    let fold_validation = folds
        .iter()
        .map(|fold| {
            fold.validation
                .iter()
                .map(|&i| corpus.dialogues[i].dialogue_id.clone())
                .collect()
        })
        .collect();
    Ok((
        EnsembleModel {
            members,
            class_counts: counts,
            k: cfg.k,
            seed: cfg.seed,
            fold_validation,
        },
        logs,
    ))
}

/// Majority vote over member distributions; ties go to the tied class with
/// the highest summed probability, then to the earliest class in `priority`
/// (the training-set frequency order, when called through an ensemble).
pub fn majority_vote(
    distributions: &[PredictionDistribution],
    priority: &[EmotionLabel; EmotionLabel::COUNT],
) -> EmotionLabel {
    let mut votes = [0usize; EmotionLabel::COUNT];
    for d in distributions {
        votes[d.predicted.index()] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    let tied: Vec<usize> = (0..EmotionLabel::COUNT).filter(|&c| votes[c] == top).collect();
    if tied.len() == 1 {
        return EmotionLabel::from_index(tied[0]);
    }

    let summed: Vec<f64> = tied
        .iter()
        .map(|&c| distributions.iter().map(|d| d.probabilities[c]).sum())
        .collect();
    let best = summed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let still_tied: Vec<usize> = tied
        .iter()
        .zip(&summed)
        .filter(|&(_, &s)| s == best)
        .map(|(&c, _)| c)
        .collect();
    if still_tied.len() == 1 {
        return EmotionLabel::from_index(still_tied[0]);
    }
    *priority
        .iter()
        .find(|l| still_tied.contains(&l.index()))
        .expect("priority covers every class")
}

impl EnsembleModel {
    /// Vote on every utterance of a dialogue.
    pub fn predict_dialogue(
        &self,
        dialogue: &Dialogue,
        vocab: &TokenVocabulary,
    ) -> Result<Vec<UtterancePrediction>> {
        let priority = self.class_counts.frequency_order();
        let fallback = self.class_counts.majority_label();

        let mut member_slots = Vec::with_capacity(self.members.len());
        for member in &self.members {
            member_slots.push(member.predict_dialogue(dialogue, vocab)?);
        }

        let mut out = Vec::with_capacity(dialogue.utterances.len());
        for ui in 0..dialogue.utterances.len() {
            let distributions: Vec<PredictionDistribution> = member_slots
                .iter()
                .filter_map(|slots| slots[ui].clone())
                .collect();
            if distributions.is_empty() {
                out.push(UtterancePrediction {
                    label: fallback,
                    excluded_fallback: true,
                });
                continue;
            }
            if distributions.len() != self.members.len() {
                // Members share tokenizer and max_len, so packing decisions
                // must agree; anything else means mismatched checkpoints.
                return Err(Error::Config {
                    message: format!(
                        "ensemble members disagree on packing of dialogue {}",
                        dialogue.dialogue_id
                    ),
                });
            }
            out.push(UtterancePrediction {
                label: majority_vote(&distributions, &priority),
                excluded_fallback: false,
            });
        }
        Ok(out)
    }

    pub fn predict_corpus(
        &self,
        corpus: &Corpus,
        vocab: &TokenVocabulary,
    ) -> Result<Vec<Vec<UtterancePrediction>>> {
        corpus
            .dialogues
            .iter()
            .map(|d| self.predict_dialogue(d, vocab))
            .collect()
    }

    /// Wrap a single fine-tuned model as a one-member ensemble, taking the
    /// class counts from its checkpoint header (uniform if absent).
    pub fn from_single(model: Model, counts: Option<[u64; EmotionLabel::COUNT]>) -> Self {
        let class_counts = counts
            .and_then(|c| ClassCounts::new(c).ok())
            .unwrap_or(ClassCounts { counts: [1; EmotionLabel::COUNT] });
        EnsembleModel {
            members: vec![model],
            class_counts,
            k: 1,
            seed: 0,
            fold_validation: vec![Vec::new()],
        }
    }
}

// ---------------------------------------------------------------------------
// persistence: a directory of member checkpoints plus a manifest
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    k: usize,
    seed: u64,
    class_counts: [u64; EmotionLabel::COUNT],
    members: Vec<String>,
    /// Validation dialogue ids per member, parallel to `members`.
    #[serde(default)]
    fold_validation: Vec<Vec<String>>,
}

const MANIFEST_NAME: &str = "ensemble.json";

pub fn save_ensemble(dir: &Path, ensemble: &EnsembleModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut member_files = Vec::new();
    for (i, member) in ensemble.members.iter().enumerate() {
        let file = format!("member_{i}.ckpt");
        member.save(&dir.join(&file), Some(ensemble.class_counts.counts))?;
        member_files.push(file);
    }
    let manifest = EnsembleManifest {
        k: ensemble.k,
        seed: ensemble.seed,
        class_counts: ensemble.class_counts.counts,
        members: member_files,
        fold_validation: ensemble.fold_validation.clone(),
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    fs::write(&path, json).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let path = dir.join(MANIFEST_NAME);
    let json = fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let manifest: EnsembleManifest = serde_json::from_str(&json).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if manifest.members.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "manifest lists no members".into(),
        });
    }
    let members = manifest
        .members
        .iter()
        .map(|file| Model::load(&dir.join(file)).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        members,
        class_counts: ClassCounts::new(manifest.class_counts)?,
        k: manifest.k,
        seed: manifest.seed,
        fold_validation: manifest.fold_validation,
    })
}
