//! Verify the hand-derived backward pass against central finite differences.
//!
//! The whole training stack — embeddings, attention layers, span pooling,
//! the SELU head, and the weighted cross-entropy — is differentiated by
//! hand in this crate. This example perturbs sampled parameter coordinates
//! of a tiny model by ±1e-5, recomputes the loss, and compares the slope
//! against the analytic gradient; any relative error above 1e-4 fails
//! loudly.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dialogue_emotion::classifier::{weighted_cross_entropy, ClassWeights, ClassifierConfig};
use dialogue_emotion::corpus::EmotionLabel;
use dialogue_emotion::encoder::{Activation, EncoderConfig, Phase};
use dialogue_emotion::gradcheck::check_gradients;
use dialogue_emotion::model::Model;
use dialogue_emotion::pooling::PoolingMode;
use dialogue_emotion::tensors::NamedTensors;
use dialogue_emotion::tokenizer::{pack_dialogue, TokenVocabulary};
use dialogue_emotion::Result;

fn main() -> Result<()> {
    // Small enough that probing ~300 coordinates takes well under a second,
    // but with every architectural piece present: multi-head attention,
    // residuals, layer norm, max pooling, the two-linear SELU head.
    let cfg = EncoderConfig {
        vocab_size: 12,
        max_len: 32,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout_rate: 0.0,
        activation: Activation::Gelu,
        layer_norm_eps: 1e-12,
    };
    let head = ClassifierConfig::for_encoder(cfg.d_model, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut model = Model::init(cfg, head, PoolingMode::Max, &mut rng)?;

    // A synthetic three-utterance dialogue over a 12-token vocabulary.
    let vocab = TokenVocabulary::from_tokens(
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b", "c", "d", "e", "f", "g"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        "inline",
    )?;
    let utterances = vec![vec![5, 6, 7], vec![8, 9], vec![10, 11, 5, 6]];
    let packed = pack_dialogue(&utterances, &vocab, 32);
    let golds = [EmotionLabel::Joy, EmotionLabel::Neutral, EmotionLabel::Anger];
    let weights = ClassWeights::uniform();

    // Analytic gradients from one forward/backward pass.
    let (probs, cache) = model.forward(&packed, &mut Phase::Inference)?;
    let loss0 = weighted_cross_entropy(&probs, &golds, &weights)?;
    let mut analytic = model.zeros_like();
    model.backward(&golds, &weights, &cache, &mut analytic)?;

    println!("initial loss {loss0:.6} (≈ ln 5 = {:.6} for an untrained model)", 5f64.ln());
    println!(
        "model has {} parameters across {} tensors; probing 6 coordinates per tensor\n",
        model.n_parameters(),
        model.tensors().len(),
    );

    let report = check_gradients(
        &mut model,
        &analytic,
        |m| {
            let (probs, _) = m.forward(&packed, &mut Phase::Inference)?;
            weighted_cross_entropy(&probs, &golds, &weights)
        },
        1e-5, // probe step
        1e-4, // tolerance on relative error
        6,    // sampled coordinates per tensor
        7,    // sampling seed
    )?;

    let worst = report.worst.as_ref().expect("coordinates were checked");
    println!("checked {} coordinates", report.checked);
    println!(
        "worst coordinate: {} [{}]  numeric {:+.9e}  analytic {:+.9e}  rel err {:.2e}",
        worst.path, worst.index, worst.numeric, worst.analytic, worst.relative_error
    );
    println!(
        "{} coordinates exceeded the {:.0e} tolerance",
        report.failures.len(),
        report.tolerance
    );
    assert!(report.passed(), "gradient check failed: {:?}", report.failures);
    println!("\nanalytic gradients match finite differences.");
    Ok(())
}
