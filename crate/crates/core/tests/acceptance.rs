//! Twelve falsifiable claims about this crate, one test per claim, each
//! printing a `[PASS]` / `[FAIL]` scoreboard line (run with `-- --nocapture`
//! to watch it). Claims 1–7 and 11 check exact or near-exact identities
//! against independently coded oracles; 8–10 train real models on the
//! synthetic generator and together take a few minutes of CPU; 12 reproduces
//! the published corpus statistics and skips when the original data files are
//! not available locally.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dialogue_emotion::classifier::{
    classify, classify_backward, weighted_cross_entropy, ClassWeights, ClassifierConfig,
    ClassifierParams, PredictionDistribution,
};
use dialogue_emotion::corpus::{corpus_stats, load_corpus, ClassCounts, EmotionLabel};
use dialogue_emotion::encoder::pretrain::{
    mlm_loss_backward, mlm_loss_forward, nsp_loss_backward, nsp_loss_forward,
};
use dialogue_emotion::encoder::{
    embed_backward, embed_ids, encode, encode_backward, encode_traced, Activation, EncoderConfig,
    EncoderParams, Phase,
};
use dialogue_emotion::evaluation::{evaluate, EvaluationConfig, F1Definition};
use dialogue_emotion::gradcheck::check_gradients;
use dialogue_emotion::model::Model;
use dialogue_emotion::pooling::{pool_utterances, PoolingMode};
use dialogue_emotion::synthetic::{generate_corpus, synthetic_vocabulary, SyntheticConfig};
use dialogue_emotion::tensors::NamedTensors;
use dialogue_emotion::tokenizer::pack_dialogue;
use dialogue_emotion::tokenizer::PackedDialogue;
use dialogue_emotion::training::{
    cosine_lr, majority_vote, post_train, train, validation_micro_f1, AdamState, PostTrainConfig,
    StepLog, TrainConfig, WeightingMode,
};

/// Collects failure messages during a criterion; `conclude` turns them into
/// the scoreboard line and panics when any survived.
macro_rules! check {
    ($failures:expr, $cond:expr, $($why:tt)+) => {
        if !($cond) {
            $failures.push(format!($($why)+));
        }
    };
}

fn conclude(name: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("[PASS] {name}");
    } else {
        println!("[FAIL] {name}");
        for message in &failures {
            println!("       {message}");
        }
        panic!("criterion failed: {name} ({} violation(s))", failures.len());
    }
}

/// A toy encoder footprint shared by the training criteria: the synthetic
/// generator's 18-token vocabulary, and a window wide enough that no
/// benchmark dialogue is ever truncated.
fn toy_encoder_config() -> EncoderConfig {
    let mut cfg = EncoderConfig::toy(synthetic_vocabulary().len());
    cfg.max_len = 96;
    cfg
}

// --- 1. dynamic pooling vs. exhaustive oracles ------------------------------

#[test]
fn criterion_01_pooling_matches_exhaustive_oracles() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    for case in 0..1000 {
        // Span layout shaped like real packing: utterances start at row 1 and
        // leave one separator row between (and after) consecutive spans.
        let n_spans = rng.gen_range(1..=6);
        let mut spans = Vec::with_capacity(n_spans);
        let mut cursor = 1usize;
        for _ in 0..n_spans {
            let len = rng.gen_range(1..=5);
            spans.push((cursor, cursor + len));
            cursor += len + 1;
        }
        let n_tokens = cursor;
        let d_model = rng.gen_range(1..=16);
        // Every third case snaps values to a coarse grid so max pooling has
        // to break genuine ties.
        let coarse = case % 3 == 0;
        let reps = Array2::from_shape_fn((n_tokens, d_model), |_| {
            let v = rng.gen::<f64>() * 6.0 - 3.0;
            if coarse {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        });
        let packed = PackedDialogue {
            token_ids: vec![0; n_tokens],
            spans: spans.clone(),
            included_utterance_indices: (0..n_spans).collect(),
            n_utterances: n_spans,
        };

        let (maxed, _) = pool_utterances(&reps, &packed, PoolingMode::Max).unwrap();
        let (meaned, _) = pool_utterances(&reps, &packed, PoolingMode::Mean).unwrap();
        for (u, &(start, end)) in spans.iter().enumerate() {
            for j in 0..d_model {
                let mut top = f64::NEG_INFINITY;
                let mut total = 0.0;
                for t in start..end {
                    top = top.max(reps[[t, j]]);
                    total += reps[[t, j]];
                }
                check!(
                    failures,
                    maxed[[u, j]] == top,
                    "case {case}: max[{u},{j}] = {} but the exhaustive scan says {top}",
                    maxed[[u, j]]
                );
                let mean = total / (end - start) as f64;
                check!(
                    failures,
                    (meaned[[u, j]] - mean).abs() <= 1e-12,
                    "case {case}: mean[{u},{j}] = {} vs. oracle {mean}",
                    meaned[[u, j]]
                );
            }
        }
        if failures.len() > 8 {
            break;
        }
    }

    let elapsed = started.elapsed();
    check!(
        failures,
        elapsed.as_secs_f64() < 5.0,
        "1,000 instances took {elapsed:?}; the budget is 5 s"
    );
    conclude("01 dynamic pooling equals the exhaustive per-span oracles", failures);
}

// --- 2. cosine schedule boundary values -------------------------------------

#[test]
fn criterion_02_cosine_schedule_hits_its_boundary_values() {
    let mut failures = Vec::new();
    for &(eta_max, eta_min, total) in &[
        (2e-5, 0.0, 10.0),
        (1.0, 0.1, 7.0),
        (3e-4, 1e-6, 1000.0),
        (0.5, 0.5, 3.0),
    ] {
        let boundary = [
            (0.0, eta_max, "start"),
            (total / 2.0, (eta_max + eta_min) / 2.0, "midpoint"),
            (total, eta_min, "end"),
        ];
        for &(t, expected, stage) in &boundary {
            let got = cosine_lr(eta_max, eta_min, t, total);
            check!(
                failures,
                (got - expected).abs() <= 1e-12,
                "eta in [{eta_min}, {eta_max}], T = {total}: {stage} rate {got:e} != {expected:e}"
            );
        }
    }
    conclude("02 cosine schedule is exact at start, midpoint, and end", failures);
}

// --- 3. inverse-frequency weights balance every class -----------------------

#[test]
fn criterion_03_inverse_frequency_weights_balance_every_class() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    for case in 0..100 {
        let counts: [u64; EmotionLabel::COUNT] =
            std::array::from_fn(|_| rng.gen_range(1..=2000));
        let weights = ClassWeights::inverse_frequency(&ClassCounts::new(counts).unwrap());
        let reference = weights.get(EmotionLabel::Neutral).unwrap() * counts[0] as f64;
        for label in EmotionLabel::ALL {
            let product = weights.get(label).unwrap() * counts[label.index()] as f64;
            check!(
                failures,
                ((product - reference) / reference).abs() <= 1e-9,
                "case {case}: weight x count for {} is {product}, Neutral's is {reference}",
                label.name()
            );
        }
    }

    // Frozen worked example: counts 450/118/34/52/346 over 1,000 utterances.
    let weights = ClassWeights::inverse_frequency(&ClassCounts::new([450, 118, 34, 52, 346]).unwrap());
    let expected = [2.2222, 8.4746, 29.4118, 19.2308, 2.8902];
    for label in EmotionLabel::ALL {
        let got = weights.get(label).unwrap();
        check!(
            failures,
            (got - expected[label.index()]).abs() < 5e-5,
            "{}: weight {got:.6} != {} to four decimals",
            label.name(),
            expected[label.index()]
        );
    }
    conclude("03 inverse-frequency weights equalize every class's mass", failures);
}

// --- 4. unit weights reduce to plain cross-entropy ---------------------------

#[test]
fn criterion_04_unit_weights_reduce_to_plain_cross_entropy() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let uniform = ClassWeights::uniform();

    for case in 0..100 {
        let n = rng.gen_range(1..=12);
        let mut probs =
            Array2::from_shape_fn((n, EmotionLabel::COUNT), |_| rng.gen::<f64>() + 1e-3);
        for mut row in probs.rows_mut() {
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let golds: Vec<EmotionLabel> = (0..n)
            .map(|_| EmotionLabel::from_index(rng.gen_range(0..EmotionLabel::COUNT)))
            .collect();

        let weighted = weighted_cross_entropy(&probs, &golds, &uniform).unwrap();
        let mut plain = 0.0;
        for (i, gold) in golds.iter().enumerate() {
            plain += -probs[[i, gold.index()]].ln();
        }
        plain /= n as f64;
        check!(
            failures,
            (weighted - plain).abs() <= 1e-12,
            "case {case}: unit-weight loss {weighted} != mean cross-entropy {plain}"
        );
    }
    conclude("04 unit-weight loss reduces to the unweighted mean", failures);
}

// --- 5. finite-difference gradient checks ------------------------------------

#[test]
fn criterion_05_losses_pass_finite_difference_gradient_checks() {
    let mut failures = Vec::new();

    // (a) the classification head: pooled input -> hidden linear -> SELU ->
    // output linear -> softmax -> weighted cross-entropy, every coordinate.
    {
        let cfg = ClassifierConfig::for_encoder(8, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut params = ClassifierParams::init(&cfg, &mut rng);
        let pooled = Array2::from_shape_fn((6, 8), |_| rng.gen::<f64>() - 0.5);
        let golds = [
            EmotionLabel::Neutral,
            EmotionLabel::Joy,
            EmotionLabel::Sadness,
            EmotionLabel::Anger,
            EmotionLabel::OutOfDomain,
            EmotionLabel::Joy,
        ];
        let weights = ClassWeights::inverse_frequency(&ClassCounts::new([9, 5, 2, 3, 1]).unwrap());

        let (_, cache) = classify(&pooled, &params, &cfg, &mut Phase::Inference).unwrap();
        let mut grads = ClassifierParams::zeros(&cfg);
        classify_backward(&golds, &weights, &cache, &params, &mut grads).unwrap();

        let report = check_gradients(
            &mut params,
            &grads,
            |p| {
                let (probs, _) = classify(&pooled, p, &cfg, &mut Phase::Inference)?;
                weighted_cross_entropy(&probs, &golds, &weights)
            },
            1e-5,
            1e-4,
            0,
            55,
        )
        .unwrap();
        check!(
            failures,
            report.passed(),
            "head loss: {} of {} coordinates off, worst {:?}",
            report.failures.len(),
            report.checked,
            report.worst
        );
    }

    // (b) the post-training losses through a one-layer encoder: a hand-built
    // sentence pair with two masked positions, both losses summed, gradients
    // pushed all the way back into the embedding tables.
    {
        let vocab = synthetic_vocabulary();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            max_len: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout_rate: 0.0,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-12,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(506);
        let mut encoder = EncoderParams::init(&cfg, &mut rng);

        let word = |w: &str| vocab.id_of(w).unwrap();
        let original = [
            vocab.cls_id,
            word("yay"),
            word("well"),
            vocab.sep_id,
            word("sigh"),
            word("okay"),
            vocab.sep_id,
        ];
        let segments: Vec<u8> = vec![0, 0, 0, 0, 1, 1, 1];
        let mut ids = original.to_vec();
        ids[1] = vocab.mask_id;
        ids[4] = vocab.mask_id;
        let targets = vec![(1usize, original[1]), (4usize, original[4])];
        let is_consecutive = false;

        let embedded = embed_ids(&ids, Some(&segments), &encoder, &cfg).unwrap();
        let (reps, trace) =
            encode_traced(&embedded, None, &encoder, &cfg, &mut Phase::Inference).unwrap();
        let (_, mlm_cache) = mlm_loss_forward(&reps, &targets, &encoder.mlm_head).unwrap();
        let (_, nsp_cache) = nsp_loss_forward(&reps, is_consecutive, &encoder.nsp_head).unwrap();
        let mut grads = EncoderParams::zeros(&cfg);
        let mut dreps = Array2::zeros(reps.raw_dim());
        mlm_loss_backward(&reps, &mlm_cache, &encoder.mlm_head, &mut grads.mlm_head, &mut dreps);
        nsp_loss_backward(&reps, &nsp_cache, &encoder.nsp_head, &mut grads.nsp_head, &mut dreps);
        let d_embedded = encode_backward(&dreps, &trace, &encoder, &mut grads, &cfg);
        embed_backward(&d_embedded, &ids, Some(&segments), &mut grads);

        let report = check_gradients(
            &mut encoder,
            &grads,
            |p| {
                let embedded = embed_ids(&ids, Some(&segments), p, &cfg)?;
                let reps = encode(&embedded, None, p, &cfg, &mut Phase::Inference)?;
                let (mlm, _) = mlm_loss_forward(&reps, &targets, &p.mlm_head)?;
                let (nsp, _) = nsp_loss_forward(&reps, is_consecutive, &p.nsp_head)?;
                Ok(mlm + nsp)
            },
            1e-5,
            1e-4,
            0,
            56,
        )
        .unwrap();
        check!(
            failures,
            report.passed(),
            "post-training losses: {} of {} coordinates off, worst {:?}",
            report.failures.len(),
            report.checked,
            report.worst
        );
    }

    conclude("05 analytic gradients match central finite differences", failures);
}

// --- 6. micro-F1 vs. accuracy identity ---------------------------------------

#[test]
fn criterion_06_micro_f1_equals_accuracy_when_every_class_counts() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let all_classes = EvaluationConfig {
        evaluated: EmotionLabel::ALL.to_vec(),
        definition: F1Definition::HarmonicMean,
    };

    for case in 0..1000 {
        let n = rng.gen_range(5..=60);
        let random_label =
            |rng: &mut ChaCha8Rng| EmotionLabel::from_index(rng.gen_range(0..5));
        let golds: Vec<EmotionLabel> = (0..n).map(|_| random_label(&mut rng)).collect();
        let preds: Vec<EmotionLabel> = golds
            .iter()
            .map(|&g| if rng.gen::<f64>() < 0.6 { g } else { random_label(&mut rng) })
            .collect();

        // With every class evaluated, each scored utterance is either a true
        // positive or a matched false-positive/false-negative pair, so
        // micro-F1 collapses to plain accuracy -- bitwise.
        let report = evaluate(&golds, &preds, &all_classes).unwrap();
        let correct = golds.iter().zip(&preds).filter(|(g, p)| g == p).count();
        let accuracy = correct as f64 / n as f64;
        check!(
            failures,
            report.micro_f1 == accuracy,
            "case {case}: micro-F1 {} != accuracy {accuracy} with all classes scored",
            report.micro_f1
        );

        // A restricted class set, recomputed from scratch: out-of-scope gold
        // labels are skipped; predictions outside the set draw no credit and
        // no false-positive charge.
        let mut evaluated = EmotionLabel::ALL.to_vec();
        evaluated.shuffle(&mut rng);
        evaluated.truncate(rng.gen_range(2..=4));
        let restricted = EvaluationConfig {
            evaluated: evaluated.clone(),
            definition: F1Definition::HarmonicMean,
        };
        let report = evaluate(&golds, &preds, &restricted).unwrap();
        let (mut tp, mut fp, mut fun) = (0u64, 0u64, 0u64);
        for (&gold, &pred) in golds.iter().zip(&preds) {
            if !evaluated.contains(&gold) {
                continue;
            }
            if pred == gold {
                tp += 1;
            } else {
                fun += 1;
                if evaluated.contains(&pred) {
                    fp += 1;
                }
            }
        }
        let denominator = 2 * tp + fp + fun;
        let expected = if denominator == 0 {
            0.0
        } else {
            2.0 * (tp as f64 / denominator as f64)
        };
        check!(
            failures,
            report.micro_f1 == expected,
            "case {case}: restricted micro-F1 {} != brute-force {expected} over {:?}",
            report.micro_f1,
            evaluated
        );
    }
    conclude("06 micro-F1 equals accuracy when every class is scored", failures);
}

// --- 7. packing contract under fuzz ------------------------------------------

#[test]
fn criterion_07_packing_never_overflows_and_growth_is_monotone() {
    let mut failures = Vec::new();
    let vocab = synthetic_vocabulary();
    let ordinary = vocab.non_special_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    for case in 0..10_000 {
        let n_utterances = rng.gen_range(0..=8);
        let utterances: Vec<Vec<u32>> = (0..n_utterances)
            .map(|_| {
                (0..rng.gen_range(1..=12))
                    .map(|_| ordinary[rng.gen_range(0..ordinary.len())])
                    .collect()
            })
            .collect();
        let max_len = rng.gen_range(2..=40);
        let packed = pack_dialogue(&utterances, &vocab, max_len);

        check!(
            failures,
            packed.token_ids.len() <= max_len,
            "case {case}: {} tokens packed into a window of {max_len}",
            packed.token_ids.len()
        );
        check!(failures, packed.token_ids[0] == vocab.cls_id, "case {case}: missing [CLS]");
        check!(
            failures,
            *packed.token_ids.last().unwrap() == vocab.sep_id,
            "case {case}: sequence must end with [SEP]"
        );
        check!(failures, packed.n_utterances == n_utterances, "case {case}: n_utterances");
        check!(
            failures,
            packed.included_utterance_indices.iter().copied().eq(0..packed.spans.len()),
            "case {case}: included utterances must be the dialogue prefix"
        );
        if packed.spans.is_empty() {
            check!(
                failures,
                packed.token_ids == vec![vocab.cls_id, vocab.sep_id],
                "case {case}: empty packing must degenerate to [CLS] [SEP]"
            );
        }

        let mut cursor = 1;
        for (s, &(start, end)) in packed.spans.iter().enumerate() {
            check!(
                failures,
                start == cursor && start < end && end < packed.token_ids.len(),
                "case {case}: span {s} = ({start}, {end}) is out of place (cursor {cursor})"
            );
            check!(
                failures,
                packed.token_ids[start..end] == utterances[s][..],
                "case {case}: span {s} does not reconstruct utterance {s}'s tokens"
            );
            check!(
                failures,
                packed.token_ids[end] == vocab.sep_id,
                "case {case}: span {s} must be followed by [SEP]"
            );
            cursor = end + 1;
        }
        if !packed.spans.is_empty() {
            check!(
                failures,
                cursor == packed.token_ids.len(),
                "case {case}: trailing tokens after the last separator"
            );
        }

        // Widening the window must never drop an utterance that fit before,
        // and must keep the already-placed spans exactly where they were.
        let wider = pack_dialogue(&utterances, &vocab, max_len + rng.gen_range(1..=20));
        check!(
            failures,
            wider.spans.len() >= packed.spans.len(),
            "case {case}: raising max_len dropped an included utterance"
        );
        check!(
            failures,
            wider.spans[..packed.spans.len()] == packed.spans[..],
            "case {case}: widening the window moved existing spans"
        );

        if failures.len() > 8 {
            break;
        }
    }
    conclude("07 packing respects the window and grows monotonically", failures);
}

// --- 8. the stock recipe learns the bundled benchmark ------------------------

#[test]
fn criterion_08_stock_recipe_learns_the_bundled_benchmark() {
    let mut failures = Vec::new();
    let train_corpus = generate_corpus(&SyntheticConfig::benchmark()).unwrap();
    let held_out = generate_corpus(&SyntheticConfig::benchmark_held_out()).unwrap();
    let vocab = synthetic_vocabulary();
    let encoder_cfg = toy_encoder_config();

    // The exact wiring of the `train_synthetic` example: toy encoder, default
    // training recipe, model seed 3.
    let run = || {
        let head_cfg = ClassifierConfig::for_encoder(encoder_cfg.d_model, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model =
            Model::init(encoder_cfg.clone(), head_cfg, PoolingMode::Max, &mut rng).unwrap();
        let mut optimizer = AdamState::new(model.n_parameters());
        train(
            &mut model,
            &mut optimizer,
            &train_corpus,
            None,
            &vocab,
            &TrainConfig::default(),
        )
        .unwrap();
        let on_train =
            validation_micro_f1(&model, &train_corpus, &vocab, EmotionLabel::Neutral).unwrap();
        let on_held =
            validation_micro_f1(&model, &held_out, &vocab, EmotionLabel::Neutral).unwrap();
        (on_train, on_held, model.records())
    };

    let started = Instant::now();
    let (on_train, on_held, records) = run();
    let elapsed = started.elapsed();

    check!(failures, on_train >= 0.95, "training micro-F1 {on_train:.4} < 0.95");
    check!(failures, on_held >= 0.80, "held-out micro-F1 {on_held:.4} < 0.80");
    check!(
        failures,
        elapsed.as_secs_f64() < 600.0,
        "the run took {elapsed:?}; the budget is ten minutes"
    );

    // Same seeds, second run: scores and every parameter byte must agree.
    let (on_train_again, on_held_again, records_again) = run();
    check!(
        failures,
        on_train == on_train_again && on_held == on_held_again,
        "re-run scores diverged: {on_train} vs {on_train_again}, {on_held} vs {on_held_again}"
    );
    check!(
        failures,
        records == records_again,
        "two runs with identical seeds produced different parameters"
    );

    conclude(
        &format!(
            "08 stock recipe learns the benchmark (train {on_train:.4}, held-out {on_held:.4}, \
             {elapsed:.0?}, deterministic)"
        ),
        failures,
    );
}

// --- 9. class weighting lifts minority recall ---------------------------------

#[test]
fn criterion_09_inverse_frequency_weights_lift_minority_recall() {
    let mut failures = Vec::new();
    // A 90/10 neutral/joy blend with heavy filler noise: with uniform weights
    // the majority class dominates the gradient and minority recall suffers.
    let base = SyntheticConfig {
        n_dialogues: 500,
        min_utterances: 4,
        max_utterances: 10,
        theme_weights: [0.9, 0.1, 0.0, 0.0],
        theme_share: 0.9,
        echo_rate: 0.15,
        min_fillers: 2,
        max_fillers: 5,
        ..SyntheticConfig::default()
    };
    let train_corpus = generate_corpus(&SyntheticConfig { seed: 21, ..base.clone() }).unwrap();
    let held_out =
        generate_corpus(&SyntheticConfig { n_dialogues: 100, seed: 1021, ..base }).unwrap();
    let vocab = synthetic_vocabulary();
    let encoder_cfg = toy_encoder_config();
    let minority = EmotionLabel::Joy;

    let minority_recall = |weighting: WeightingMode, seed: u64| {
        let head_cfg = ClassifierConfig::for_encoder(encoder_cfg.d_model, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model =
            Model::init(encoder_cfg.clone(), head_cfg, PoolingMode::Max, &mut rng).unwrap();
        let mut optimizer = AdamState::new(model.n_parameters());
        let cfg = TrainConfig { weighting, seed, ..TrainConfig::default() };
        train(&mut model, &mut optimizer, &train_corpus, None, &vocab, &cfg).unwrap();

        let (mut hit, mut total) = (0usize, 0usize);
        for dialogue in &held_out.dialogues {
            let slots = model.predict_dialogue(dialogue, &vocab).unwrap();
            for (utterance, slot) in dialogue.utterances.iter().zip(slots) {
                if utterance.gold_label == Some(minority) {
                    total += 1;
                    let predicted =
                        slot.map(|p| p.predicted).unwrap_or(EmotionLabel::Neutral);
                    if predicted == minority {
                        hit += 1;
                    }
                }
            }
        }
        hit as f64 / total.max(1) as f64
    };

    const SEEDS: u64 = 5;
    let mut weighted_mean = 0.0;
    let mut uniform_mean = 0.0;
    for seed in 0..SEEDS {
        weighted_mean += minority_recall(WeightingMode::InverseFrequency, seed) / SEEDS as f64;
        uniform_mean += minority_recall(WeightingMode::Uniform, seed) / SEEDS as f64;
    }
    check!(
        failures,
        weighted_mean > uniform_mean,
        "mean minority recall over {SEEDS} seeds: weighted {weighted_mean:.4} <= uniform {uniform_mean:.4}"
    );
    conclude(
        &format!(
            "09 class weighting lifts minority recall ({weighted_mean:.4} vs. {uniform_mean:.4} \
             over {SEEDS} seeds)"
        ),
        failures,
    );
}

// --- 10. post-training reduces masked loss and transfers ----------------------

#[test]
fn criterion_10_post_training_reduces_mlm_loss_and_transfers() {
    let mut failures = Vec::new();
    let vocab = synthetic_vocabulary();
    let encoder_cfg = toy_encoder_config();

    // (a) Masked-token loss must fall to at most 0.8x its starting level
    // within 1,000 steps. The corpus keeps only the emotion markers (no
    // fillers), so masked positions are genuinely predictable from context.
    let bare = SyntheticConfig {
        n_dialogues: 500,
        min_utterances: 4,
        max_utterances: 10,
        theme_share: 0.98,
        echo_rate: 0.15,
        min_fillers: 0,
        max_fillers: 0,
        seed: 900,
        ..SyntheticConfig::default()
    };
    let bare_corpus = generate_corpus(&bare).unwrap();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = EncoderParams::init(&encoder_cfg, &mut rng);
        let mut optimizer = AdamState::new(encoder.n_parameters());
        let cfg = PostTrainConfig { eta_max: 1e-3, seed, ..PostTrainConfig::default() };
        let log =
            post_train(&mut encoder, &encoder_cfg, &mut optimizer, &bare_corpus, &vocab, &cfg)
                .unwrap();

        let window = 50;
        let mean_mlm =
            |steps: &[StepLog]| steps.iter().map(|s| s.mlm_loss).sum::<f64>() / steps.len() as f64;
        let first = mean_mlm(&log[..window]);
        let last = mean_mlm(&log[log.len() - window..]);
        check!(
            failures,
            last <= 0.8 * first,
            "seed {seed}: masked loss went {first:.4} -> {last:.4} ({:.2}x); needed <= 0.80x",
            last / first
        );
    }

    // (b) Transfer: post-train on a large unlabeled draw, fine-tune briefly,
    // and compare against fine-tuning the very same random init from scratch.
    // Judged on the 5-seed mean -- individual seeds are allowed to flip.
    let post_corpus = generate_corpus(&SyntheticConfig {
        n_dialogues: 2000,
        seed: 900,
        ..SyntheticConfig::benchmark()
    })
    .unwrap();
    let train_corpus = generate_corpus(&SyntheticConfig::benchmark()).unwrap();
    let held_out = generate_corpus(&SyntheticConfig::benchmark_held_out()).unwrap();

    const SEEDS: u64 = 5;
    let mut post_mean = 0.0;
    let mut scratch_mean = 0.0;
    for seed in 0..SEEDS {
        let head_cfg = ClassifierConfig::for_encoder(encoder_cfg.d_model, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&encoder_cfg, &mut rng);
        let head = ClassifierParams::init(&head_cfg, &mut rng);
        let mut scratch_model = Model {
            encoder: encoder.clone(),
            classifier: head,
            encoder_config: encoder_cfg.clone(),
            classifier_config: head_cfg,
            pooling: PoolingMode::Max,
        };

        let mut post_model = scratch_model.clone();
        let mut optimizer = AdamState::new(post_model.encoder.n_parameters());
        let cfg = PostTrainConfig { eta_max: 1e-3, seed, ..PostTrainConfig::default() };
        post_train(
            &mut post_model.encoder,
            &encoder_cfg,
            &mut optimizer,
            &post_corpus,
            &vocab,
            &cfg,
        )
        .unwrap();

        let cfg = TrainConfig { epochs: 5, seed, ..TrainConfig::default() };
        for model in [&mut post_model, &mut scratch_model] {
            let mut optimizer = AdamState::new(model.n_parameters());
            train(model, &mut optimizer, &train_corpus, None, &vocab, &cfg).unwrap();
        }
        post_mean +=
            validation_micro_f1(&post_model, &held_out, &vocab, EmotionLabel::Neutral).unwrap()
                / SEEDS as f64;
        scratch_mean +=
            validation_micro_f1(&scratch_model, &held_out, &vocab, EmotionLabel::Neutral).unwrap()
                / SEEDS as f64;
    }
    check!(
        failures,
        post_mean >= scratch_mean,
        "held-out micro-F1 over {SEEDS} seeds: post-trained {post_mean:.4} < from-scratch {scratch_mean:.4}"
    );
    conclude(
        &format!(
            "10 post-training cuts masked loss and transfers ({post_mean:.4} vs. \
             {scratch_mean:.4} over {SEEDS} seeds)"
        ),
        failures,
    );
}

// --- 11. majority vote under fuzz ---------------------------------------------

#[test]
fn criterion_11_majority_vote_honors_strict_majorities_and_tie_breaks() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);

    let shuffled_priority = |rng: &mut ChaCha8Rng| {
        let mut order = EmotionLabel::ALL;
        order.shuffle(rng);
        order
    };
    let random_member = |rng: &mut ChaCha8Rng, quantized: bool| {
        let mut probabilities = [0.0; EmotionLabel::COUNT];
        loop {
            for slot in probabilities.iter_mut() {
                // The coarse grid makes exact summed-probability ties common,
                // exercising the final priority stage.
                *slot = if quantized {
                    rng.gen_range(0..=4) as f64 / 4.0
                } else {
                    rng.gen::<f64>()
                };
            }
            let total: f64 = probabilities.iter().sum();
            if total > 0.0 {
                probabilities.iter_mut().for_each(|p| *p /= total);
                break;
            }
        }
        let argmax = (0..EmotionLabel::COUNT)
            .reduce(|best, c| if probabilities[c] > probabilities[best] { c } else { best })
            .unwrap();
        PredictionDistribution {
            probabilities,
            predicted: EmotionLabel::from_index(argmax),
        }
    };

    for case in 0..10_000 {
        let priority = shuffled_priority(&mut rng);
        let crafted_pair = case % 10 == 0;
        let members: Vec<PredictionDistribution> = if crafted_pair {
            // Two mirrored members: one vote each, equal summed probability on
            // both classes, so only the priority order can decide.
            let first = rng.gen_range(0..EmotionLabel::COUNT);
            let mut second = rng.gen_range(0..EmotionLabel::COUNT);
            while second == first {
                second = rng.gen_range(0..EmotionLabel::COUNT);
            }
            let mirrored = |hi: usize| {
                let mut probabilities = [0.15; EmotionLabel::COUNT];
                probabilities[hi] = 0.4;
                PredictionDistribution {
                    probabilities,
                    predicted: EmotionLabel::from_index(hi),
                }
            };
            vec![mirrored(first), mirrored(second)]
        } else {
            let k = rng.gen_range(1..=9);
            let quantized = case % 3 == 0;
            (0..k).map(|_| random_member(&mut rng, quantized)).collect()
        };

        let got = majority_vote(&members, &priority);

        // Core property: any label holding a strict majority of votes wins,
        // whatever the probabilities say.
        let mut votes = [0usize; EmotionLabel::COUNT];
        for member in &members {
            votes[member.predicted.index()] += 1;
        }
        if let Some(winner) = (0..EmotionLabel::COUNT).find(|&c| 2 * votes[c] > members.len()) {
            check!(
                failures,
                got.index() == winner,
                "case {case}: class {winner} holds a strict majority but {got:?} won"
            );
        }

        // Documented tie-break, recomputed independently: top vote count,
        // then highest summed probability among the tied, then the earliest
        // class in the priority order.
        let top = *votes.iter().max().unwrap();
        let tied: Vec<usize> =
            (0..EmotionLabel::COUNT).filter(|&c| votes[c] == top).collect();
        let expected = if tied.len() == 1 {
            EmotionLabel::from_index(tied[0])
        } else {
            let sums: Vec<f64> = tied
                .iter()
                .map(|&c| members.iter().map(|m| m.probabilities[c]).sum::<f64>())
                .collect();
            let best = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let still: Vec<usize> = tied
                .iter()
                .zip(&sums)
                .filter(|&(_, &s)| s == best)
                .map(|(&c, _)| c)
                .collect();
            *priority.iter().find(|l| still.contains(&l.index())).unwrap()
        };
        check!(
            failures,
            got == expected,
            "case {case}: vote returned {got:?}, the recomputed rule says {expected:?}"
        );
        if crafted_pair {
            let by_priority = *priority
                .iter()
                .find(|l| members.iter().any(|m| m.predicted == **l))
                .unwrap();
            check!(
                failures,
                got == by_priority,
                "case {case}: full tie must fall to the priority order ({by_priority:?}), got {got:?}"
            );
        }

        if failures.len() > 8 {
            break;
        }
    }
    conclude("11 majority vote honors strict majorities and the tie-break", failures);
}

// --- 12. published corpus statistics (optional, data-gated) ------------------

/// Counts and label percentages as published with the original data releases
/// (the 2019 shared-task versions; the Friends training set is the augmented
/// 4,000-dialogue one). Class order: neutral, joy, sadness, anger, other.
struct PublishedSplit {
    file_names: [&'static str; 2],
    n_dialogues: usize,
    n_utterances: usize,
    percent: [f64; EmotionLabel::COUNT],
}

#[test]
fn criterion_12_official_corpus_statistics_match_their_published_values() {
    let Some(dir) = std::env::var_os("DIALOGUE_EMOTION_DATA_DIR") else {
        println!(
            "[SKIP] 12 published-statistics reproduction (set DIALOGUE_EMOTION_DATA_DIR to a \
             directory holding the Friends / EmotionPush JSON files)"
        );
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let table = [
        PublishedSplit {
            file_names: ["friends_train.json", "friends.train.json"],
            n_dialogues: 4000,
            n_utterances: 58_012,
            percent: [45.0, 11.8, 3.4, 5.2, 34.6],
        },
        PublishedSplit {
            file_names: ["friends_test.json", "friends.test.json"],
            n_dialogues: 240,
            n_utterances: 3_296,
            percent: [31.4, 15.3, 3.7, 4.3, 45.3],
        },
        PublishedSplit {
            file_names: ["emotionpush_train.json", "emotionpush.train.json"],
            n_dialogues: 4000,
            n_utterances: 58_968,
            percent: [66.8, 14.2, 3.5, 0.9, 14.6],
        },
        PublishedSplit {
            file_names: ["emotionpush_test.json", "emotionpush.test.json"],
            n_dialogues: 240,
            n_utterances: 3_536,
            percent: [60.7, 17.0, 3.1, 0.8, 18.4],
        },
    ];

    let mut failures = Vec::new();
    let mut found = 0;
    for split in &table {
        let Some(path) = split.file_names.iter().map(|n| dir.join(n)).find(|p| p.exists())
        else {
            println!("       {} not present, skipped", split.file_names[0]);
            continue;
        };
        found += 1;
        let name = split.file_names[0];
        let corpus = match load_corpus(&path, true) {
            Ok(corpus) => corpus,
            Err(error) => {
                failures.push(format!("{name}: failed to load: {error}"));
                continue;
            }
        };
        let stats = match corpus_stats(&corpus) {
            Ok(stats) => stats,
            Err(error) => {
                failures.push(format!("{name}: failed to compute stats: {error}"));
                continue;
            }
        };
        check!(
            failures,
            stats.n_dialogues == split.n_dialogues,
            "{name}: {} dialogues, published count is {}",
            stats.n_dialogues,
            split.n_dialogues
        );
        check!(
            failures,
            stats.n_utterances == split.n_utterances,
            "{name}: {} utterances, published count is {}",
            stats.n_utterances,
            split.n_utterances
        );
        for label in EmotionLabel::ALL {
            let got = stats.label_fractions[label.index()] * 100.0;
            let published = split.percent[label.index()];
            check!(
                failures,
                (got - published).abs() <= 0.1 + 1e-9,
                "{name}: {} at {got:.2}%, published {published:.1}% (tolerance 0.1pp)",
                label.name()
            );
        }
    }

    if found == 0 {
        println!(
            "[SKIP] 12 published-statistics reproduction (no corpus files under {})",
            dir.display()
        );
        return;
    }
    conclude(
        &format!("12 corpus statistics match the published values ({found} split(s) checked)"),
        failures,
    );
}
