//! Subword tokenization and dialogue packing, step by step: words split
//! greedily into vocabulary pieces, utterances concatenated into one
//! `[CLS] u0 [SEP] u1 [SEP] ...` sequence with per-utterance spans.
//!
//! ```sh
//! cargo run -p dialogue-emotion --example tokenize_dialogue
//! ```

use std::path::Path;

use dialogue_emotion::corpus::load_corpus;
use dialogue_emotion::tokenizer::{pack_dialogue_text, tokenize_utterance, TokenVocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = env!("CARGO_MANIFEST_DIR");
    let vocab = TokenVocabulary::load(Path::new(&format!("{dir}/fixtures/vocab.txt")))?;
    let corpus = load_corpus(Path::new(&format!("{dir}/fixtures/sample_corpus.json")), true)?;
    println!("vocabulary: {} tokens\n", vocab.len());

    // Per-utterance tokenization. "feeling" has no whole-word entry, so the
    // greedy matcher emits "feel" + "##ing"; "grandmother" has no matching
    // pieces at all and becomes [UNK].
    let dialogue = &corpus.dialogues[0];
    println!("--- tokenization of {} ---", dialogue.dialogue_id);
    for utt in &corpus.dialogues[0].utterances {
        let ids = tokenize_utterance(&utt.text, &vocab);
        let pieces: Vec<&str> = ids.iter().map(|&id| vocab.token(id).unwrap()).collect();
        println!("{:>10}: {:<26} -> {:?}", utt.speaker, utt.text, pieces);
    }
    let oov = "I miss my grandmother.";
    let ids = tokenize_utterance(oov, &vocab);
    let pieces: Vec<&str> = ids.iter().map(|&id| vocab.token(id).unwrap()).collect();
    println!("{:>10}: {:<26} -> {:?}", "(oov)", oov, pieces);

    // Packing turns the whole dialogue into one encoder input. Spans index
    // into the packed sequence and never cover the separator tokens.
    println!("\n--- packing with max_len 32 ---");
    let packed = pack_dialogue_text(dialogue, &vocab, 32);
    let rendered: Vec<&str> = packed
        .token_ids
        .iter()
        .map(|&id| vocab.token(id).unwrap())
        .collect();
    println!("packed ({} tokens): {:?}", packed.token_ids.len(), rendered);
    for (i, &(start, end)) in packed.spans.iter().enumerate() {
        println!("utterance {i}: tokens [{start}, {end}) -> {:?}", &rendered[start..end]);
    }

    // A tight budget drops the tail: the first utterance that does not fit
    // excludes itself and everything after it.
    println!("\n--- packing with max_len 12 ---");
    let tight = pack_dialogue_text(dialogue, &vocab, 12);
    println!(
        "included {} of {} utterances; excluded indices: {:?}",
        tight.included_utterance_indices.len(),
        tight.n_utterances,
        tight.excluded_utterance_indices()
    );
    Ok(())
}
