//! Score predictions against gold labels: confusion matrix, per-class
//! precision/recall/F1, micro and macro averages.
//!
//! Three points worth seeing once:
//!   * out-of-domain gold utterances are skipped under the default class set,
//!   * with every class evaluated, micro-F1 collapses to plain accuracy,
//!   * the product-over-sum compatibility definition is exactly half the
//!     harmonic-mean value.
//!
//! ```text
//! cargo run --example evaluate_predictions
//! ```

use dialogue_emotion::evaluation::{evaluate, EvaluationConfig, F1Definition};
use dialogue_emotion::corpus::EmotionLabel::{self, *};
use dialogue_emotion::Result;

fn main() -> Result<()> {
    // Ten utterances: seven with in-domain gold labels (six answered
    // correctly, one confused), three with out-of-domain gold.
    let golds = vec![
        Neutral, Neutral, Joy, Joy, Sadness, Anger, Neutral, OutOfDomain, OutOfDomain, OutOfDomain,
    ];
    let preds = vec![
        Neutral, Neutral, Joy, Joy, Sadness, Anger, Joy, Neutral, Sadness, Anger,
    ];

    let report = evaluate(&golds, &preds, &EvaluationConfig::default())?;
    println!("--- default: four in-domain classes evaluated ---");
    print!("{}", report.table());
    println!(
        "micro precision, recall and F1 coincide at 6/7 = {:.4}: every error on a\n\
         scored utterance costs one false positive and one false negative.\n",
        6.0 / 7.0
    );

    let all = EvaluationConfig {
        evaluated: EmotionLabel::ALL.to_vec(),
        definition: F1Definition::HarmonicMean,
    };
    let full = evaluate(&golds, &preds, &all)?;
    let accuracy = golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64;
    println!("--- all five classes evaluated ---");
    println!(
        "micro F1 {:.4} == accuracy {:.4} (single-label task, nothing skipped)\n",
        full.micro_f1, accuracy
    );

    let compat = evaluate(
        &golds,
        &preds,
        &EvaluationConfig {
            definition: F1Definition::ProductOverSum,
            ..EvaluationConfig::default()
        },
    )?;
    println!("--- product-over-sum compatibility definition ---");
    println!(
        "P*R/(P+R) = {:.4}, exactly half the harmonic mean {:.4}; kept for\n\
         comparing against reports that used the unscaled formula.",
        compat.micro_f1, report.micro_f1
    );

    // The JSON form feeds dashboards and the `evaluate` subcommand's --format
    // json output; confusion cells are keyed by class name.
    let json = serde_json::to_value(&report).expect("reports always serialize");
    println!(
        "\nconfusion[\"neutral\"][\"joy\"] = {} (the one scored error above)",
        json["confusion"]["neutral"]["joy"]
    );
    Ok(())
}
