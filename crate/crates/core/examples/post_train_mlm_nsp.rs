//! Adapt a fresh encoder to conversational text with the two self-supervised
//! objectives: masked-token recovery (predict what was hidden) and
//! sentence-pair order (were these two utterances consecutive in a
//! dialogue?).
//!
//! At initialization both losses sit at their chance levels — ln(vocab) for
//! masked tokens, ln 2 for the pair decision — and a few hundred steps on a
//! toy encoder pull both down visibly. The command-line equivalent is
//! `dialogue-emotion post-train`, which also writes the loss curve as CSV.
//!
//! ```text
//! cargo run --release --example post_train_mlm_nsp
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dialogue_emotion::encoder::{EncoderConfig, EncoderParams, Phase};
use dialogue_emotion::synthetic::{generate_corpus, synthetic_vocabulary, SyntheticConfig};
use dialogue_emotion::tensors::NamedTensors;
use dialogue_emotion::training::{post_train, AdamState, PostTrainConfig};
use dialogue_emotion::Result;

fn main() -> Result<()> {
    // A synthetic conversational corpus: enough dialogues that the pair
    // sampler sees plenty of both consecutive and cross-dialogue pairs.
    let corpus = generate_corpus(&SyntheticConfig {
        n_dialogues: 200,
        seed: 5,
        ..SyntheticConfig::default()
    })?;
    let vocab = synthetic_vocabulary();
    println!(
        "corpus: {} dialogues, vocabulary: {} tokens (chance-level masked loss ln {} = {:.3})",
        corpus.dialogues.len(),
        vocab.len(),
        vocab.len(),
        (vocab.len() as f64).ln()
    );

    let mut cfg = EncoderConfig::toy(vocab.len());
    cfg.max_len = 64; // synthetic utterances are short; small positions train faster
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut encoder = EncoderParams::init(&cfg, &mut rng);
    let mut optimizer = AdamState::new(encoder.n_parameters());

    let post_cfg = PostTrainConfig {
        steps: 300,
        eta_max: 1e-3, // fast schedule for the demo; defaults are gentler
        seed: 11,
        ..PostTrainConfig::default()
    };
    println!(
        "post-training {} steps, cosine-annealed lr {:.0e} -> {:.0e}\n",
        post_cfg.steps, post_cfg.eta_max, post_cfg.eta_min
    );

    let log = post_train(&mut encoder, &cfg, &mut optimizer, &corpus, &vocab, &post_cfg)?;

    println!("step   masked-token loss   pair-order loss   lr");
    for entry in log.iter().step_by(30).chain(log.last()) {
        println!(
            "{:>4}   {:>17.4}   {:>15.4}   {:.2e}",
            entry.step, entry.mlm_loss, entry.nsp_loss, entry.lr
        );
    }

    let window = 25;
    let mean = |s: &[dialogue_emotion::training::StepLog]| {
        s.iter().map(|e| e.mlm_loss).sum::<f64>() / s.len() as f64
    };
    let first = mean(&log[..window]);
    let last = mean(&log[log.len() - window..]);
    println!(
        "\nmasked-token loss, {window}-step windows: first {first:.4} -> last {last:.4} \
         ({:.0}% of the starting level)",
        100.0 * last / first
    );
    assert!(last < first, "post-training should reduce the masked-token loss");

    // The adapted encoder is a drop-in starting point for fine-tuning: same
    // tensor layout, just better weights. `Phase::Inference` here only checks
    // the forward pass still runs cleanly.
    let packed = dialogue_emotion::tokenizer::pack_dialogue_text(
        &corpus.dialogues[0],
        &vocab,
        cfg.max_len,
    );
    let embedded = dialogue_emotion::encoder::embed(&packed, &encoder, &cfg)?;
    let reps =
        dialogue_emotion::encoder::encode(&embedded, None, &encoder, &cfg, &mut Phase::Inference)?;
    println!(
        "adapted encoder encodes dialogue 0 to {} x {} representations, ready for fine-tuning",
        reps.nrows(),
        reps.ncols()
    );
    Ok(())
}
