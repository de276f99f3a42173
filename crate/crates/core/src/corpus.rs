//! Dialogue corpora: loading, label mapping, statistics, and fold splitting.
//!
//! The on-disk format is a JSON array of dialogues, each dialogue an array of
//! `{"speaker": ..., "utterance": ..., "emotion": ...}` objects. Unknown keys
//! are ignored so files with extra annotation columns load unchanged. In
//! unlabeled mode the `emotion` key may be absent (prediction inputs); when
//! present it must still be a recognized label string.
//!
//! Source emotion strings collapse onto five classes: `neutral`, `joy`,
//! `sadness`, `anger` map to themselves, while `fear`, `surprise`, `disgust`
//! and `non-neutral` all fold into [`EmotionLabel::OutOfDomain`]. The exact
//! source string is retained on each utterance so a loaded corpus can be
//! re-serialized without losing the distinction.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// The five emotion classes the classifier distinguishes.
///
/// `index()` positions are fixed and shared by every per-class array in the
/// crate (class counts, weights, logits, confusion matrices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmotionLabel {
    Neutral,
    Joy,
    Sadness,
    Anger,
    OutOfDomain,
}

impl EmotionLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Neutral,
        EmotionLabel::Joy,
        EmotionLabel::Sadness,
        EmotionLabel::Anger,
        EmotionLabel::OutOfDomain,
    ];

    pub fn index(self) -> usize {
        match self {
            EmotionLabel::Neutral => 0,
            EmotionLabel::Joy => 1,
            EmotionLabel::Sadness => 2,
            EmotionLabel::Anger => 3,
            EmotionLabel::OutOfDomain => 4,
        }
    }

    /// Inverse of [`EmotionLabel::index`]. Panics on `i >= 5`; indices only
    /// ever come from this enum.
    pub fn from_index(i: usize) -> EmotionLabel {
        EmotionLabel::ALL[i]
    }

    /// Human-readable class name, used in reports and tables.
    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Anger => "anger",
            EmotionLabel::OutOfDomain => "out-of-domain",
        }
    }

    /// Label string written to corpus-format files. `OutOfDomain` serializes
    /// as `non-neutral`, the one source alias guaranteed to map back to it,
    /// so prediction files stay loadable by [`map_label`].
    pub fn file_label(self) -> &'static str {
        match self {
            EmotionLabel::OutOfDomain => "non-neutral",
            other => other.name(),
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Map a source emotion string onto the five-class space.
///
/// Accepts exactly the eight strings that occur in the source data
/// (case-insensitively, surrounding whitespace ignored); anything else is a
/// label error.
pub fn map_label(raw: &str) -> Result<EmotionLabel> {
    match raw.trim().to_lowercase().as_str() {
        "neutral" => Ok(EmotionLabel::Neutral),
        "joy" => Ok(EmotionLabel::Joy),
        "sadness" => Ok(EmotionLabel::Sadness),
        "anger" => Ok(EmotionLabel::Anger),
        "fear" | "surprise" | "disgust" | "non-neutral" => Ok(EmotionLabel::OutOfDomain),
        _ => Err(Error::Label {
            label: raw.to_string(),
            location: "input".to_string(),
        }),
    }
}

/// One speaker turn. `text` is stored exactly as it appeared in the source
/// file; it is guaranteed non-empty after trimming.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub gold_label: Option<EmotionLabel>,
    /// Verbatim source emotion string (`"fear"` stays `"fear"` even though it
    /// maps to `OutOfDomain`), kept for lossless re-serialization.
    pub raw_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn n_utterances(&self) -> usize {
        self.dialogues.iter().map(|d| d.utterances.len()).sum()
    }

    /// Concatenate several corpora into one. Dialogue ids already carry their
    /// source corpus name as a prefix, so merged ids stay unique.
    pub fn merge(corpora: Vec<Corpus>, name: &str) -> Corpus {
        let dialogues = corpora.into_iter().flat_map(|c| c.dialogues).collect();
        Corpus {
            name: name.to_string(),
            dialogues,
        }
    }
}

/// Load a corpus file. In labeled mode every utterance must carry a valid
/// `emotion`; in unlabeled mode the key is optional but still validated when
/// present.
pub fn load_corpus(path: &Path, labeled: bool) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    parse_corpus(&text, &name, labeled)
}

/// Parse corpus JSON from a string. Split out of [`load_corpus`] so callers
/// (and tests) can work without touching the filesystem.
pub fn parse_corpus(json: &str, name: &str, labeled: bool) -> Result<Corpus> {
    let root: serde_json::Value = serde_json::from_str(json).map_err(|e| Error::Parse {
        path: name.to_string(),
        message: e.to_string(),
    })?;
    let raw_dialogues = root.as_array().ok_or_else(|| Error::Schema {
        location: format!("{name}: root"),
        message: "expected a JSON array of dialogues".to_string(),
    })?;

    let mut dialogues = Vec::with_capacity(raw_dialogues.len());
    for (di, raw_dialogue) in raw_dialogues.iter().enumerate() {
        let raw_utts = raw_dialogue.as_array().ok_or_else(|| Error::Schema {
            location: format!("{name}: dialogue {di}"),
            message: "expected an array of utterance objects".to_string(),
        })?;
        if raw_utts.is_empty() {
            return Err(Error::Schema {
                location: format!("{name}: dialogue {di}"),
                message: "dialogue has no utterances".to_string(),
            });
        }

        let mut utterances = Vec::with_capacity(raw_utts.len());
        for (ui, raw_utt) in raw_utts.iter().enumerate() {
            let location = format!("{name}: dialogue {di}, utterance {ui}");
            let obj = raw_utt.as_object().ok_or_else(|| Error::Schema {
                location: location.clone(),
                message: "expected a JSON object".to_string(),
            })?;

            let speaker = require_str(obj, "speaker", &location)?;
            let text = require_str(obj, "utterance", &location)?;
            if text.trim().is_empty() {
                return Err(Error::Schema {
                    location,
                    message: "utterance text is empty".to_string(),
                });
            }

            let raw_label = match obj.get("emotion") {
                Some(serde_json::Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    return Err(Error::Schema {
                        location,
                        message: "\"emotion\" must be a string".to_string(),
                    })
                }
                None if labeled => {
                    return Err(Error::Schema {
                        location,
                        message: "missing \"emotion\" key in labeled mode".to_string(),
                    })
                }
                None => None,
            };
            let gold_label = match &raw_label {
                Some(s) => Some(map_label(s).map_err(|e| relocate_label_error(e, &location))?),
                None => None,
            };

            utterances.push(Utterance {
                speaker: speaker.to_string(),
                text: text.to_string(),
                gold_label,
                raw_label,
            });
        }

        dialogues.push(Dialogue {
            dialogue_id: format!("{name}:{di}"),
            utterances,
        });
    }

    Ok(Corpus {
        name: name.to_string(),
        dialogues,
    })
}

fn require_str<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    key: &str,
    location: &str,
) -> Result<&'a str> {
    obj.get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Schema {
            location: location.to_string(),
            message: format!("missing or non-string {key:?} key"),
        })
}

fn relocate_label_error(e: Error, location: &str) -> Error {
    match e {
        Error::Label { label, .. } => Error::Label {
            label,
            location: location.to_string(),
        },
        other => other,
    }
}

/// Serialize a corpus back to the on-disk JSON format. Source emotion strings
/// are emitted verbatim, so load → save round-trips label strings exactly.
pub fn corpus_to_json(corpus: &Corpus) -> String {
    let rows: Vec<Vec<serde_json::Value>> = corpus
        .dialogues
        .iter()
        .map(|d| {
            d.utterances
                .iter()
                .map(|u| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("speaker".into(), u.speaker.clone().into());
                    obj.insert("utterance".into(), u.text.clone().into());
                    if let Some(raw) = &u.raw_label {
                        obj.insert("emotion".into(), raw.clone().into());
                    }
                    serde_json::Value::Object(obj)
                })
                .collect()
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("corpus serialization cannot fail")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_json(corpus)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

/// Descriptive statistics over a fully-labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_dialogues: usize,
    pub n_utterances: usize,
    pub avg_utterances_per_dialogue: f64,
    /// Mean dialogue length in whitespace-separated words, summed over the
    /// dialogue's utterances.
    pub avg_dialogue_length_words: f64,
    /// Fraction of utterances per class, in fixed class order.
    #[serde(serialize_with = "serialize_label_map")]
    pub label_fractions: [f64; 5],
}

fn serialize_label_map<S: Serializer>(vals: &[f64; 5], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(5))?;
    for label in EmotionLabel::ALL {
        map.serialize_entry(label.name(), &vals[label.index()])?;
    }
    map.end()
}

impl CorpusStats {
    /// Plain-text table for terminal output.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28}{}\n", "dialogues", self.n_dialogues));
        out.push_str(&format!("{:<28}{}\n", "utterances", self.n_utterances));
        out.push_str(&format!(
            "{:<28}{:.4}\n",
            "avg utterances per dialogue", self.avg_utterances_per_dialogue
        ));
        out.push_str(&format!(
            "{:<28}{:.4}\n",
            "avg words per dialogue", self.avg_dialogue_length_words
        ));
        for label in EmotionLabel::ALL {
            out.push_str(&format!(
                "{:<28}{:.4}\n",
                format!("fraction {}", label.name()),
                self.label_fractions[label.index()]
            ));
        }
        out
    }
}

/// Compute [`CorpusStats`]. Every utterance must be labeled; anything else
/// would make the label fractions meaningless.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    let n_dialogues = corpus.dialogues.len();
    let n_utterances = corpus.n_utterances();
    if n_dialogues == 0 {
        return Err(Error::Stats {
            reason: "corpus has no dialogues".to_string(),
        });
    }

    let mut counts = [0u64; 5];
    let mut total_words = 0usize;
    for dialogue in &corpus.dialogues {
        for utt in &dialogue.utterances {
            total_words += utt.text.split_whitespace().count();
            match utt.gold_label {
                Some(label) => counts[label.index()] += 1,
                None => {
                    return Err(Error::Stats {
                        reason: format!(
                            "unlabeled utterance in dialogue {:?}",
                            dialogue.dialogue_id
                        ),
                    })
                }
            }
        }
    }

    let mut label_fractions = [0.0; 5];
    for i in 0..5 {
        label_fractions[i] = counts[i] as f64 / n_utterances as f64;
    }

    Ok(CorpusStats {
        n_dialogues,
        n_utterances,
        avg_utterances_per_dialogue: n_utterances as f64 / n_dialogues as f64,
        avg_dialogue_length_words: total_words as f64 / n_dialogues as f64,
        label_fractions,
    })
}

/// Per-class counts of labeled utterances. At least one count is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ClassCounts {
    pub counts: [u64; 5],
}

impl ClassCounts {
    pub fn new(counts: [u64; 5]) -> Result<ClassCounts> {
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Stats {
                reason: "all class counts are zero".to_string(),
            });
        }
        Ok(ClassCounts { counts })
    }

    pub fn get(&self, label: EmotionLabel) -> u64 {
        self.counts[label.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Most frequent class; ties break toward the lower class index.
    pub fn majority_label(&self) -> EmotionLabel {
        let mut best = EmotionLabel::Neutral;
        for label in EmotionLabel::ALL {
            if self.counts[label.index()] > self.counts[best.index()] {
                best = label;
            }
        }
        best
    }

    /// All five classes ordered by descending count; ties keep class-index
    /// order. Used as the final tie-break in ensemble voting.
    pub fn frequency_order(&self) -> [EmotionLabel; 5] {
        let mut order = EmotionLabel::ALL;
        order.sort_by_key(|l| std::cmp::Reverse(self.counts[l.index()]));
        order
    }
}

/// Count gold labels across a corpus, ignoring unlabeled utterances.
pub fn class_counts(corpus: &Corpus) -> Result<ClassCounts> {
    let mut counts = [0u64; 5];
    for dialogue in &corpus.dialogues {
        for utt in &dialogue.utterances {
            if let Some(label) = utt.gold_label {
                counts[label.index()] += 1;
            }
        }
    }
    ClassCounts::new(counts).map_err(|_| Error::Stats {
        reason: "corpus has no labeled utterances".to_string(),
    })
}

// ---------------------------------------------------------------------------
// fold splitting
// ---------------------------------------------------------------------------

/// One train/validation split over dialogue indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Split a corpus into `k` train/validation fold pairs.
///
/// Dialogue indices are shuffled once with a seeded generator and dealt into
/// `k` contiguous chunks whose sizes differ by at most one; fold `i` validates
/// on chunk `i` and trains on everything else. Deterministic per seed.
pub fn split_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    split_folds_pinned(corpus, k, seed, &[])
}

/// [`split_folds`] with some dialogues pinned to the training side.
///
/// Pinned dialogues (e.g. augmented data that should never be validated on)
/// appear in every fold's train set; validation chunks are dealt only from
/// the remaining dialogues. `pinned` may be empty or one flag per dialogue.
pub fn split_folds_pinned(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    pinned: &[bool],
) -> Result<Vec<FoldSplit>> {
    let n = corpus.dialogues.len();
    if k < 2 {
        return Err(Error::Split {
            k,
            n_dialogues: n,
            reason: "need at least 2 folds".to_string(),
        });
    }
    if !pinned.is_empty() && pinned.len() != n {
        return Err(Error::Split {
            k,
            n_dialogues: n,
            reason: format!("pinned flags cover {} dialogues", pinned.len()),
        });
    }

    let pinned_idx: Vec<usize> = (0..n).filter(|&i| pinned.get(i).copied().unwrap_or(false)).collect();
    let mut eligible: Vec<usize> = (0..n).filter(|&i| !pinned.get(i).copied().unwrap_or(false)).collect();
    if eligible.len() < k {
        return Err(Error::Split {
            k,
            n_dialogues: n,
            reason: format!("only {} dialogues available for validation folds", eligible.len()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);

    // Deal into k chunks: the first (len % k) chunks get one extra dialogue.
    let base = eligible.len() / k;
    let extra = eligible.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut validation: Vec<usize> = eligible[cursor..cursor + size].to_vec();
        cursor += size;
        let mut train: Vec<usize> = eligible[..cursor - size]
            .iter()
            .chain(eligible[cursor..].iter())
            .copied()
            .chain(pinned_idx.iter().copied())
            .collect();
        train.sort_unstable();
        validation.sort_unstable();
        folds.push(FoldSplit { train, validation });
    }
    Ok(folds)
}

/// Materialize a sub-corpus from dialogue indices (used to build the train
/// and validation corpora of a fold).
pub fn subset(corpus: &Corpus, indices: &[usize], name: &str) -> Corpus {
    Corpus {
        name: name.to_string(),
        dialogues: indices.iter().map(|&i| corpus.dialogues[i].clone()).collect(),
    }
}
