//! Subword vocabulary, tokenization, and dialogue packing.
//!
//! Tokenization is greedy longest-match over a fixed vocabulary: text is
//! lowercased, split on whitespace, every punctuation character becomes its
//! own word, and each word is consumed left to right by repeatedly taking the
//! longest vocabulary entry that matches (continuation pieces carry a `##`
//! prefix). If any step of a word fails to match, the whole word collapses to
//! a single `[UNK]`.
//!
//! Packing turns a multi-utterance dialogue into one token sequence:
//! `[CLS]` first, then each utterance's tokens followed by `[SEP]`. The
//! sequence is capped at `max_len`; the first utterance that would not fit is
//! dropped *together with every utterance after it*, so the kept prefix of
//! the conversation is always contiguous.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const CONTINUATION: &str = "##";

/// Token/id table with the five special tokens resolved up front.
#[derive(Debug, Clone)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    non_special_ids: Vec<u32>,
    pub pad_id: u32,
    pub unk_id: u32,
    pub cls_id: u32,
    pub sep_id: u32,
    pub mask_id: u32,
}

impl TokenVocabulary {
    /// Build a vocabulary from an ordered token list; ids are list positions.
    pub fn from_tokens(tokens: Vec<String>, source: &str) -> Result<TokenVocabulary> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() {
                return Err(Error::Vocab {
                    path: source.to_string(),
                    message: format!("empty token at line {}", i + 1),
                });
            }
            if let Some(prev) = lookup.insert(token.clone(), i as u32) {
                return Err(Error::Vocab {
                    path: source.to_string(),
                    message: format!(
                        "duplicate token {token:?} at lines {} and {}",
                        prev + 1,
                        i + 1
                    ),
                });
            }
        }

        let special = |name: &str| -> Result<u32> {
            lookup.get(name).copied().ok_or_else(|| Error::Vocab {
                path: source.to_string(),
                message: format!("missing special token {name}"),
            })
        };
        let pad_id = special(PAD)?;
        let unk_id = special(UNK)?;
        let cls_id = special(CLS)?;
        let sep_id = special(SEP)?;
        let mask_id = special(MASK)?;

        let specials = [pad_id, unk_id, cls_id, sep_id, mask_id];
        let non_special_ids = (0..tokens.len() as u32)
            .filter(|id| !specials.contains(id))
            .collect();

        Ok(TokenVocabulary {
            tokens,
            lookup,
            non_special_ids,
            pad_id,
            unk_id,
            cls_id,
            sep_id,
            mask_id,
        })
    }

    /// Load a vocabulary file: one token per line, id = 0-based line number.
    pub fn load(path: &Path) -> Result<TokenVocabulary> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let tokens = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        TokenVocabulary::from_tokens(tokens, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn is_special_id(&self, id: u32) -> bool {
        id == self.pad_id || id == self.unk_id || id == self.cls_id || id == self.sep_id || id == self.mask_id
    }

    /// Ids of all ordinary tokens, for random replacement during masking.
    pub fn non_special_ids(&self) -> &[u32] {
        &self.non_special_ids
    }
}

/// Punctuation in the tokenizer's sense: ASCII punctuation/symbol ranges plus
/// the common Unicode punctuation blocks. Matches the cited model family's
/// convention of treating ASCII symbols like `$` as word boundaries too.
fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    (33..=47).contains(&cp)
        || (58..=64).contains(&cp)
        || (91..=96).contains(&cp)
        || (123..=126).contains(&cp)
        || matches!(cp, 0x2010..=0x206F | 0x3000..=0x303F | 0xFE30..=0xFE4F | 0xFF00..=0xFFEF)
}

/// Lowercase and split into words: whitespace separates, and every
/// punctuation character is a one-character word of its own.
fn normalize_and_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Greedy longest-match segmentation of a single word. `None` means some
/// step had no matching piece, in which case the caller emits `[UNK]` for the
/// whole word.
fn match_word(word: &str, vocab: &TokenVocabulary) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut matched = None;
        let mut end = chars.len();
        while end > start {
            let mut candidate: String = chars[start..end].iter().collect();
            if start > 0 {
                candidate.insert_str(0, CONTINUATION);
            }
            if let Some(id) = vocab.id_of(&candidate) {
                matched = Some((id, end));
                break;
            }
            end -= 1;
        }
        let (id, end) = matched?;
        pieces.push(id);
        start = end;
    }
    Some(pieces)
}

/// Tokenize one utterance to ids. Never emits special ids other than `[UNK]`.
pub fn tokenize_utterance(text: &str, vocab: &TokenVocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in normalize_and_split(text) {
        match match_word(&word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(vocab.unk_id),
        }
    }
    ids
}

/// A dialogue packed into a single encoder-ready token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedDialogue {
    pub token_ids: Vec<u32>,
    /// Half-open `[start, end)` token ranges, one per included utterance, in
    /// order. Spans never cover `[CLS]`/`[SEP]` positions.
    pub spans: Vec<(usize, usize)>,
    /// Indices (into the dialogue's utterance list) that made it into the
    /// packed sequence. Always a prefix of `0..n`.
    pub included_utterance_indices: Vec<usize>,
    /// Total number of utterances in the source dialogue, so callers can tell
    /// which tail was dropped.
    pub n_utterances: usize,
}

impl PackedDialogue {
    pub fn excluded_utterance_indices(&self) -> Vec<usize> {
        (self.included_utterance_indices.len()..self.n_utterances).collect()
    }
}

/// Pack a dialogue's utterances into `[CLS] u0 [SEP] u1 [SEP] ...`, stopping
/// before the first utterance whose tokens plus its `[SEP]` would push the
/// sequence past `max_len`. Everything after the first overflow is excluded
/// too. If nothing fits, the result is the degenerate `[CLS] [SEP]` with no
/// spans. `max_len` must be at least 2.
pub fn pack_dialogue(
    utterance_tokens: &[Vec<u32>],
    vocab: &TokenVocabulary,
    max_len: usize,
) -> PackedDialogue {
    debug_assert!(max_len >= 2, "max_len must leave room for [CLS] [SEP]");
    let mut token_ids = vec![vocab.cls_id];
    let mut spans = Vec::new();
    let mut included = Vec::new();

    for (i, tokens) in utterance_tokens.iter().enumerate() {
        if token_ids.len() + tokens.len() + 1 > max_len {
            break;
        }
        let start = token_ids.len();
        token_ids.extend_from_slice(tokens);
        spans.push((start, token_ids.len()));
        token_ids.push(vocab.sep_id);
        included.push(i);
    }

    if included.is_empty() {
        token_ids.push(vocab.sep_id);
    }

    PackedDialogue {
        token_ids,
        spans,
        included_utterance_indices: included,
        n_utterances: utterance_tokens.len(),
    }
}

/// Tokenize every utterance of a dialogue and pack the results.
pub fn pack_dialogue_text(
    dialogue: &crate::corpus::Dialogue,
    vocab: &TokenVocabulary,
    max_len: usize,
) -> PackedDialogue {
    let tokens: Vec<Vec<u32>> = dialogue
        .utterances
        .iter()
        .map(|u| tokenize_utterance(&u.text, vocab))
        .collect();
    pack_dialogue(&tokens, vocab, max_len)
}
