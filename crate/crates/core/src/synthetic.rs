//! Synthetic dialogue generator for experiments and end-to-end tests.
//!
//! Labels are learnable by construction: every regular utterance carries one
//! emotion keyword, while "echo" utterances carry no keyword at all and
//! inherit the previous utterance's label — solvable only by reading
//! context, which is exactly what the dialogue-level encoder is for.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, EmotionLabel, Utterance};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenVocabulary, CLS, MASK, PAD, SEP, UNK};

/// One keyword per in-domain emotion, in class order.
pub const EMOTION_KEYWORDS: [(&str, EmotionLabel); 4] = [
    ("calm", EmotionLabel::Neutral),
    ("yay", EmotionLabel::Joy),
    ("sigh", EmotionLabel::Sadness),
    ("grr", EmotionLabel::Anger),
];

/// Marker word of a context-dependent utterance.
pub const ECHO_KEYWORD: &str = "echo";

/// Emotion-free padding words.
pub const FILLER_WORDS: [&str; 8] = [
    "well", "um", "okay", "right", "really", "maybe", "anyway", "hmm",
];

const SPEAKERS: [&str; 3] = ["mia", "leo", "zoe"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_dialogues: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    /// Dialogue-theme distribution over neutral, joy, sadness, anger
    /// (normalized internally). Zero weight removes a class entirely.
    pub theme_weights: [f64; 4],
    /// Probability that a regular utterance takes the dialogue theme rather
    /// than an off-theme emotion.
    pub theme_share: f64,
    /// Probability that a non-initial utterance is an echo of its
    /// predecessor.
    pub echo_rate: f64,
    pub min_fillers: usize,
    pub max_fillers: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_dialogues: 100,
            min_utterances: 4,
            max_utterances: 8,
            theme_weights: [0.4, 0.2, 0.2, 0.2],
            theme_share: 0.9,
            echo_rate: 0.2,
            min_fillers: 2,
            max_fillers: 5,
            seed: 13,
        }
    }
}

impl SyntheticConfig {
    /// The bundled benchmark corpus: 500 dialogues of 4–10 terse utterances
    /// (a marker plus at most one filler), a strongly coherent theme, and a
    /// 15% echo rate.
    ///
    /// The terseness is deliberate. At the stock fine-tuning rate of 2e-5 the
    /// whole run moves each parameter by a few hundredths at most, so the
    /// corpus must be separable near initialization: short spans keep max
    /// pooling from drowning the marker in filler features, and the coherent
    /// theme lets echo utterances be resolved from the dialogue-wide context
    /// that even early, nearly uniform attention already mixes into every
    /// token. Under that recipe this corpus trains past 0.95 micro-F1 in ten
    /// epochs on a laptop CPU while staying out of reach of any model that
    /// ignores context (a per-utterance ceiling of roughly 0.91: echoes carry
    /// no marker of their own).
    pub fn benchmark() -> SyntheticConfig {
        SyntheticConfig {
            n_dialogues: 500,
            min_utterances: 4,
            max_utterances: 10,
            theme_weights: [0.4, 0.2, 0.2, 0.2],
            theme_share: 0.98,
            echo_rate: 0.15,
            min_fillers: 0,
            max_fillers: 1,
            seed: 21,
        }
    }

    /// A disjoint draw from the [`benchmark`](Self::benchmark) distribution,
    /// sized for held-out evaluation.
    pub fn benchmark_held_out() -> SyntheticConfig {
        SyntheticConfig {
            n_dialogues: 100,
            seed: 1021,
            ..Self::benchmark()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dialogues == 0 || self.min_utterances == 0 {
            return Err(Error::Config {
                message: "generator needs at least one dialogue with one utterance".into(),
            });
        }
        if self.min_utterances > self.max_utterances || self.min_fillers > self.max_fillers {
            return Err(Error::Config {
                message: "generator ranges must have min <= max".into(),
            });
        }
        if self.theme_weights.iter().any(|&w| w < 0.0)
            || self.theme_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config {
                message: "theme weights must be non-negative with a positive sum".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.theme_share) || !(0.0..=1.0).contains(&self.echo_rate) {
            return Err(Error::Config {
                message: "theme_share and echo_rate must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Every word the generator can emit, as a ready-made vocabulary.
pub fn synthetic_vocabulary() -> TokenVocabulary {
    let mut tokens: Vec<String> =
        [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    tokens.extend(EMOTION_KEYWORDS.iter().map(|(w, _)| w.to_string()));
    tokens.push(ECHO_KEYWORD.to_string());
    tokens.extend(FILLER_WORDS.iter().map(|w| w.to_string()));
    TokenVocabulary::from_tokens(tokens, "synthetic")
        .expect("the built-in word list is well-formed")
}

fn sample_weighted(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> EmotionLabel {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw < 0.0 {
            return EmotionLabel::from_index(i);
        }
    }
    // Floating-point leftovers land on the last positively weighted class.
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
    EmotionLabel::from_index(last)
}

/// Theme distribution with `theme` removed, or `None` when the theme is the
/// only class with positive weight.
fn off_theme_weights(weights: &[f64; 4], theme: EmotionLabel) -> Option<[f64; 4]> {
    let mut reduced = *weights;
    reduced[theme.index()] = 0.0;
    if reduced.iter().sum::<f64>() > 0.0 {
        Some(reduced)
    } else {
        None
    }
}

/// Generate a labeled corpus. Deterministic per seed.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let keyword_of = |label: EmotionLabel| {
        EMOTION_KEYWORDS
            .iter()
            .find(|(_, l)| *l == label)
            .map(|(w, _)| *w)
            .expect("themes are always in-domain")
    };

    let mut dialogues = Vec::with_capacity(cfg.n_dialogues);
    for di in 0..cfg.n_dialogues {
        let theme = sample_weighted(&cfg.theme_weights, &mut rng);
        let n_utterances = rng.gen_range(cfg.min_utterances..=cfg.max_utterances);
        let mut utterances: Vec<Utterance> = Vec::with_capacity(n_utterances);
        let mut previous_label: Option<EmotionLabel> = None;

        for ui in 0..n_utterances {
            let echo = previous_label.is_some() && rng.gen::<f64>() < cfg.echo_rate;
            let (label, marker) = if echo {
                (previous_label.unwrap(), ECHO_KEYWORD)
            } else {
                let label = match off_theme_weights(&cfg.theme_weights, theme) {
                    Some(reduced) if rng.gen::<f64>() >= cfg.theme_share => {
                        sample_weighted(&reduced, &mut rng)
                    }
                    _ => theme,
                };
                (label, keyword_of(label))
            };

            let n_fillers = rng.gen_range(cfg.min_fillers..=cfg.max_fillers);
            let mut words = vec![marker];
            for _ in 0..n_fillers {
                words.push(FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]);
            }
            words.shuffle(&mut rng);

            utterances.push(Utterance {
                speaker: SPEAKERS[ui % SPEAKERS.len()].to_string(),
                text: words.join(" "),
                gold_label: Some(label),
                raw_label: Some(label.file_label().to_string()),
            });
            previous_label = Some(label);
        }
        dialogues.push(Dialogue {
            dialogue_id: format!("synthetic:{di}"),
            utterances,
        });
    }
    Ok(Corpus {
        name: "synthetic".into(),
        dialogues,
    })
}
