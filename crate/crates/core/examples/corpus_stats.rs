//! Load a dialogue corpus, summarize it, and derive the class weights a
//! training run would use.
//!
//! ```sh
//! cargo run -p dialogue-emotion --example corpus_stats
//! ```

use std::path::Path;

use dialogue_emotion::classifier::ClassWeights;
use dialogue_emotion::corpus::{class_counts, corpus_stats, load_corpus, EmotionLabel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = format!("{}/fixtures/sample_corpus.json", env!("CARGO_MANIFEST_DIR"));
    let corpus = load_corpus(Path::new(&path), true)?;

    let stats = corpus_stats(&corpus)?;
    println!("--- {} ---", corpus.name);
    print!("{}", stats.table());

    // Inverse-frequency weights: rare classes weigh more in the loss, which
    // is what keeps a 10:1 imbalanced corpus from collapsing to the majority.
    let counts = class_counts(&corpus)?;
    let weights = ClassWeights::inverse_frequency(&counts);
    println!("\nclass weights (total / class count):");
    for label in EmotionLabel::ALL {
        match weights.get(label) {
            Ok(w) => println!("  {:<14} {:>6}  weight {:.4}", label.name(), counts.get(label), w),
            Err(_) => println!("  {:<14} {:>6}  (absent from the corpus)", label.name(), 0),
        }
    }

    println!("\nmajority fallback label: {}", counts.majority_label());
    Ok(())
}
