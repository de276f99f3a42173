//! Train a k-fold ensemble and combine its members by majority vote.
//!
//! Each of the k members trains on k−1 folds with the remaining fold as its
//! validation split, from its own initialization seed, so the members make
//! partly independent mistakes. At prediction time every member votes; ties
//! fall back to the highest summed probability among the tied classes, then
//! to training-set frequency order.
//!
//! ```text
//! cargo run --release --example kfold_ensemble
//! ```

use dialogue_emotion::classifier::ClassifierConfig;
use dialogue_emotion::corpus::EmotionLabel;
use dialogue_emotion::encoder::EncoderConfig;
use dialogue_emotion::synthetic::{generate_corpus, synthetic_vocabulary, SyntheticConfig};
use dialogue_emotion::training::{
    train_kfold_ensemble, EnsembleConfig, TrainConfig,
};
use dialogue_emotion::Result;

fn main() -> Result<()> {
    let corpus = generate_corpus(&SyntheticConfig {
        n_dialogues: 200, // smaller than the full benchmark; members train in parallel
        ..SyntheticConfig::benchmark()
    })?;
    let held_out = generate_corpus(&SyntheticConfig::benchmark_held_out())?;
    let vocab = synthetic_vocabulary();

    let mut encoder_cfg = EncoderConfig::toy(vocab.len());
    encoder_cfg.max_len = 96;
    encoder_cfg.validate()?;
    let classifier_cfg = ClassifierConfig::for_encoder(encoder_cfg.d_model, 0.0);
    let train_cfg = TrainConfig::default();
    let ensemble_cfg = EnsembleConfig::default(); // k = 5, one worker per core

    println!(
        "training {} members on {} dialogues ({} folds, rotating validation)...",
        ensemble_cfg.k,
        corpus.dialogues.len(),
        ensemble_cfg.k
    );
    let (ensemble, logs) = train_kfold_ensemble(
        &corpus,
        &vocab,
        &encoder_cfg,
        &classifier_cfg,
        &train_cfg,
        &ensemble_cfg,
        None,
    )?;

    println!("\nmember   fold-validation micro-F1 (last epoch)   held-out dialogues");
    for (i, log) in logs.iter().enumerate() {
        println!(
            "{:>6}   {:>38.4}   {:>18}",
            i,
            log.epochs.last().and_then(|e| e.val_micro_f1).unwrap_or(f64::NAN),
            ensemble.fold_validation[i].len()
        );
    }

    // Score members individually and as a voting ensemble on a fresh corpus.
    let gold: Vec<EmotionLabel> = held_out
        .dialogues
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| u.gold_label.expect("synthetic corpora are labeled")))
        .collect();

    let accuracy_of = |preds: &[EmotionLabel]| {
        let hits = gold.iter().zip(preds).filter(|(g, p)| g == p).count();
        hits as f64 / gold.len() as f64
    };

    println!("\nheld-out micro-F1 (all classes evaluated, so identical to accuracy):");
    let mut member_scores = Vec::new();
    for (i, member) in ensemble.members.iter().enumerate() {
        let mut preds = Vec::new();
        for dialogue in &held_out.dialogues {
            for slot in member.predict_dialogue(dialogue, &vocab)? {
                preds.push(slot.map(|p| p.predicted).unwrap_or(EmotionLabel::Neutral));
            }
        }
        member_scores.push(accuracy_of(&preds));
        println!("  member {i}: {:.4}", member_scores[i]);
    }

    let voted: Vec<EmotionLabel> = ensemble
        .predict_corpus(&held_out, &vocab)?
        .into_iter()
        .flatten()
        .map(|p| p.label)
        .collect();
    let mean = member_scores.iter().sum::<f64>() / member_scores.len() as f64;
    println!("  member mean: {mean:.4}");
    println!("  ensemble:    {:.4}", accuracy_of(&voted));
    println!(
        "\nVoting smooths over individual members' mistakes; expect the ensemble \
         at or above the member mean, not necessarily above the luckiest member."
    );

    // Where the vote actually changed something: utterances on which members
    // disagreed but the majority landed on the gold label.
    let mut overruled = 0;
    let mut index = 0;
    for dialogue in &held_out.dialogues {
        let member_views: Vec<Vec<_>> = ensemble
            .members
            .iter()
            .map(|m| m.predict_dialogue(dialogue, &vocab))
            .collect::<Result<_>>()?;
        for ui in 0..dialogue.utterances.len() {
            let labels: Vec<EmotionLabel> = member_views
                .iter()
                .filter_map(|v| v[ui].as_ref().map(|p| p.predicted))
                .collect();
            let disagree = labels.windows(2).any(|w| w[0] != w[1]);
            if disagree && voted[index] == gold[index] && labels.iter().any(|&l| l != gold[index]) {
                overruled += 1;
            }
            index += 1;
        }
    }
    println!(
        "\nutterances where members disagreed and the vote picked the gold label: {overruled}"
    );
    Ok(())
}
