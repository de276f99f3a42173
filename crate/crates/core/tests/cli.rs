//! End-to-end tests of the `dialogue-emotion` binary: each subcommand on the
//! bundled fixtures, the documented exit codes (0 success, 1 usage, 2 data,
//! 3 numeric), and the full post-train -> train -> predict -> evaluate
//! pipeline with tiny models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use dialogue_emotion::encoder::EncoderParams;
use dialogue_emotion::model::{load_encoder, save_encoder, Model};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

fn run<const N: usize>(args: [&str; N]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialogue-emotion"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[track_caller]
fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}\nstdout:\n{}\nstderr:\n{}",
        stdout_of(output),
        stderr_of(output)
    );
}

fn json_stdout(output: &Output) -> Value {
    serde_json::from_str(&stdout_of(output)).expect("stdout parses as JSON")
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// `train` on the fixture corpus with an encoder small enough to finish in
/// well under a second; returns the checkpoint and log paths.
fn train_fixture_model(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let model = dir.join("model.ckpt");
    let log = dir.join("train_log.json");
    let output = run([
        "train",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--epochs",
        "1",
        "--seed",
        seed,
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&model),
        "--log",
        path_str(&log),
    ]);
    assert_exit(&output, 0, "train on the fixture corpus");
    (model, log)
}

// --- stats -------------------------------------------------------------------

#[test]
fn stats_reports_the_fixture_distribution_as_json() {
    let output = run(["stats", &fixture("sample_corpus.json")]);
    assert_exit(&output, 0, "stats on the fixture corpus");
    let stats = json_stdout(&output);
    assert_eq!(stats["n_dialogues"], 6);
    assert_eq!(stats["n_utterances"], 15);
    let per_dialogue = stats["avg_utterances_per_dialogue"].as_f64().unwrap();
    assert!((per_dialogue - 2.5).abs() < 1e-12);
    let words = stats["avg_dialogue_length_words"].as_f64().unwrap();
    assert!((words - 9.0).abs() < 1e-12, "54 words over 6 dialogues, got {words}");
    // Hand count: 4 neutral, 2 joy, 3 sadness, 2 anger, 4 out-of-domain.
    let expected = [
        ("neutral", 4.0),
        ("joy", 2.0),
        ("sadness", 3.0),
        ("anger", 2.0),
        ("out-of-domain", 4.0),
    ];
    for (name, count) in expected {
        let got = stats["label_fractions"][name].as_f64().unwrap();
        let want = count / 15.0;
        assert!((got - want).abs() < 1e-12, "fraction {name}: {got} != {want}");
    }
}

#[test]
fn stats_renders_a_table_and_rejects_missing_files() {
    let output = run(["stats", &fixture("sample_corpus.json"), "--format", "table"]);
    assert_exit(&output, 0, "stats --format table");
    let table = stdout_of(&output);
    assert!(table.contains("dialogues"), "{table}");
    assert!(table.contains("fraction joy"), "{table}");

    let output = run(["stats", "/no/such/corpus.json"]);
    assert_exit(&output, 2, "stats on a missing file is a data error");
    assert!(stderr_of(&output).contains("error"), "{}", stderr_of(&output));
}

#[test]
fn stats_reads_the_corpus_path_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        json!({ "corpus": fixture("sample_corpus.json") }).to_string(),
    )
    .unwrap();
    let output = run(["stats", "--config", path_str(&config)]);
    assert_exit(&output, 0, "stats with --config");
    assert_eq!(json_stdout(&output)["n_dialogues"], 6);

    let broken = dir.path().join("broken.json");
    fs::write(&broken, r#"{"corpsu": "x"}"#).unwrap();
    let output = run(["stats", "--config", path_str(&broken)]);
    assert_exit(&output, 2, "misspelled config keys are data errors");
}

// --- post-train ----------------------------------------------------------------

#[test]
fn post_train_writes_a_deterministic_checkpoint_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |tag: &str| {
        let out = dir.path().join(format!("enc_{tag}.ckpt"));
        let curve = dir.path().join(format!("curve_{tag}.csv"));
        let output = run([
            "post-train",
            "--corpus",
            &fixture("sample_corpus.json"),
            "--vocab",
            &fixture("vocab.txt"),
            "--steps",
            "3",
            "--seed",
            "99",
            "--d-model",
            "8",
            "--n-layers",
            "1",
            "--n-heads",
            "2",
            "--d-ff",
            "16",
            "--max-len",
            "32",
            "--out",
            path_str(&out),
            "--curve",
            path_str(&curve),
        ]);
        assert_exit(&output, 0, "post-train 3 steps");
        assert!(stdout_of(&output).contains("post-trained 3 steps"));
        (out, curve)
    };

    let (out_a, curve_a) = run_once("a");
    let rows: Vec<String> = fs::read_to_string(&curve_a)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(rows[0], "step,mlm_loss,nsp_loss,lr");
    assert_eq!(rows.len(), 4, "header plus one row per step");
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 4, "{row}");
        let mlm: f64 = cells[1].parse().unwrap();
        assert!(mlm.is_finite() && mlm > 0.0, "{row}");
    }

    let (out_b, curve_b) = run_once("b");
    assert_eq!(
        fs::read(&out_a).unwrap(),
        fs::read(&out_b).unwrap(),
        "same seed must give a byte-identical checkpoint"
    );
    assert_eq!(fs::read(&curve_a).unwrap(), fs::read(&curve_b).unwrap());
}

#[test]
fn post_train_with_zero_steps_writes_the_fresh_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("enc.ckpt");
    let output = run([
        "post-train",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--steps",
        "0",
        "--seed",
        "99",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&out),
        "--curve",
        path_str(&dir.path().join("curve.csv")),
    ]);
    assert_exit(&output, 0, "post-train --steps 0");

    // The checkpoint must be exactly what seed 99 initializes: rebuild that
    // here and compare the files byte for byte.
    let (_, cfg) = load_encoder(&out).unwrap();
    assert_eq!(
        (cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, cfg.max_len),
        (8, 1, 2, 16, 32),
        "architecture flags must reach the checkpoint header"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let expected = EncoderParams::init(&cfg, &mut rng);
    let reference = dir.path().join("reference.ckpt");
    save_encoder(&reference, &cfg, &expected).unwrap();
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(&reference).unwrap(),
        "zero steps must leave the initialization untouched"
    );
}

// --- train ---------------------------------------------------------------------

#[test]
fn train_writes_a_checkpoint_and_epoch_log_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, log_path) = train_fixture_model(dir.path(), "7");

    let log: Value = serde_json::from_str(&fs::read_to_string(&log_path).unwrap()).unwrap();
    assert_eq!(log["n_dialogues"], 6);
    assert_eq!(log["n_skipped_dialogues"], 0);
    assert_eq!(log["epochs"].as_array().unwrap().len(), 1);
    assert!(log["epochs"][0]["loss"].as_f64().unwrap().is_finite());
    assert!(log["epochs"][0]["lr"].as_f64().unwrap() > 0.0);

    let (model, header) = Model::load(&model_path).unwrap();
    assert_eq!(model.encoder_config.d_model, 8);
    assert_eq!(
        header.class_counts,
        Some([4, 2, 3, 2, 4]),
        "checkpoints carry the gold distribution for downstream tie-breaking"
    );

    let dir_b = tempfile::tempdir().unwrap();
    let (model_again, _) = train_fixture_model(dir_b.path(), "7");
    assert_eq!(
        fs::read(&model_path).unwrap(),
        fs::read(&model_again).unwrap(),
        "same seed must reproduce the checkpoint byte for byte"
    );
}

#[test]
fn train_scores_a_validation_corpus_each_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ckpt");
    let log_path = dir.path().join("log.json");
    let output = run([
        "train",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--validation",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--epochs",
        "1",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&model),
        "--log",
        path_str(&log_path),
    ]);
    assert_exit(&output, 0, "train with --validation");
    let log: Value = serde_json::from_str(&fs::read_to_string(&log_path).unwrap()).unwrap();
    let score = log["epochs"][0]["val_micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score), "{score}");

    let output = run(["train", "--corpus", "/no/such/corpus.json"]);
    assert_exit(&output, 2, "train on a missing corpus is a data error");
}

#[test]
fn train_adopts_the_architecture_of_an_initial_encoder_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let encoder = dir.path().join("enc.ckpt");
    let output = run([
        "post-train",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--steps",
        "0",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&encoder),
        "--curve",
        path_str(&dir.path().join("curve.csv")),
    ]);
    assert_exit(&output, 0, "post-train for --init");

    // No encoder flags here: the configured default is 64-wide, two layers,
    // so the 8-wide result can only come from the checkpoint.
    let model = dir.path().join("model.ckpt");
    let output = run([
        "train",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--epochs",
        "1",
        "--init",
        path_str(&encoder),
        "--out",
        path_str(&model),
        "--log",
        path_str(&dir.path().join("log.json")),
    ]);
    assert_exit(&output, 0, "train --init");
    let (model, _) = Model::load(&model).unwrap();
    assert_eq!(model.encoder_config.d_model, 8);
    assert_eq!(model.encoder_config.n_layers, 1);
}

// --- ensemble --------------------------------------------------------------------

#[test]
fn ensemble_trains_k_members_with_disjoint_validation_folds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ensemble");
    let output = run([
        "ensemble",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--epochs",
        "1",
        "-k",
        "3",
        "--jobs",
        "1",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&out),
    ]);
    assert_exit(&output, 0, "ensemble -k 3");
    assert!(stdout_of(&output).contains("trained 3-member ensemble"));

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(manifest["k"], 3);
    assert_eq!(manifest["class_counts"], json!([4, 2, 3, 2, 4]));
    let members = manifest["members"].as_array().unwrap();
    assert_eq!(members.len(), 3);
    for member in members {
        assert!(out.join(member.as_str().unwrap()).is_file(), "{member}");
    }
    // Every dialogue is held out by exactly one member.
    let mut held_out: Vec<&str> = manifest["fold_validation"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|fold| fold.as_array().unwrap())
        .map(|id| id.as_str().unwrap())
        .collect();
    held_out.sort_unstable();
    let total = held_out.len();
    held_out.dedup();
    assert_eq!((total, held_out.len()), (6, 6));

    let logs: Value =
        serde_json::from_str(&fs::read_to_string(out.join("train_logs.json")).unwrap()).unwrap();
    assert_eq!(logs.as_array().unwrap().len(), 3);
}

#[test]
fn single_fold_ensembles_are_rejected_as_data_errors() {
    let output = run([
        "ensemble",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "-k",
        "1",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
    ]);
    assert_exit(&output, 2, "k = 1 cannot form folds");
    assert!(stderr_of(&output).contains("folds"), "{}", stderr_of(&output));
}

// --- predict and evaluate ----------------------------------------------------------

/// The full pipeline: fine-tune, label the same corpus, score the labels.
#[test]
fn predict_and_evaluate_close_the_loop_on_the_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train_fixture_model(dir.path(), "7");

    let predictions = dir.path().join("predictions.json");
    let output = run([
        "predict",
        "--model",
        path_str(&model),
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--out",
        path_str(&predictions),
    ]);
    assert_exit(&output, 0, "predict with a single checkpoint");
    assert!(stdout_of(&output).contains("predicted 15 utterances (0 excluded-fallback)"));

    let rows: Value = serde_json::from_str(&fs::read_to_string(&predictions).unwrap()).unwrap();
    let dialogues = rows.as_array().unwrap();
    let sizes: Vec<usize> = dialogues.iter().map(|d| d.as_array().unwrap().len()).collect();
    assert_eq!(sizes, [3, 3, 2, 2, 2, 3]);
    let legal = ["neutral", "joy", "sadness", "anger", "non-neutral"];
    for utterance in dialogues.iter().flat_map(|d| d.as_array().unwrap()) {
        let label = utterance["predicted_emotion"].as_str().unwrap();
        assert!(legal.contains(&label), "{label}");
        assert!(utterance["speaker"].is_string());
        assert!(utterance["emotion"].is_string(), "source labels must survive");
    }

    let output = run([
        "evaluate",
        "--predictions",
        path_str(&predictions),
        "--gold",
        &fixture("sample_corpus.json"),
    ]);
    assert_exit(&output, 0, "evaluate the prediction file");
    let report = json_stdout(&output);
    // 4 of the 15 utterances are out-of-domain and skipped by default.
    assert_eq!(report["n_scored"], 11);
    assert_eq!(report["n_skipped"], 4);
    let micro = report["micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&micro), "{micro}");
}

#[test]
fn predict_accepts_an_ensemble_directory_as_its_model() {
    let dir = tempfile::tempdir().unwrap();
    let ensemble = dir.path().join("ensemble");
    let output = run([
        "ensemble",
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--epochs",
        "1",
        "-k",
        "2",
        "--jobs",
        "1",
        "--d-model",
        "8",
        "--n-layers",
        "1",
        "--n-heads",
        "2",
        "--d-ff",
        "16",
        "--max-len",
        "32",
        "--out",
        path_str(&ensemble),
    ]);
    assert_exit(&output, 0, "ensemble -k 2");

    let predictions = dir.path().join("predictions.json");
    let output = run([
        "predict",
        "--model",
        path_str(&ensemble),
        "--corpus",
        &fixture("sample_corpus.json"),
        "--vocab",
        &fixture("vocab.txt"),
        "--out",
        path_str(&predictions),
    ]);
    assert_exit(&output, 0, "predict with an ensemble directory");
    assert!(stdout_of(&output).contains("predicted 15 utterances"));
    let rows: Value = serde_json::from_str(&fs::read_to_string(&predictions).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);
}

#[test]
fn predict_flags_utterances_the_packer_cannot_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train_fixture_model(dir.path(), "7");

    // The opening utterance alone exceeds max_len 32, so packing includes
    // nothing and every utterance falls back to the majority label.
    let corpus = dir.path().join("oversized.json");
    fs::write(
        &corpus,
        json!([[
            { "speaker": "a", "utterance": "word ".repeat(40).trim() },
            { "speaker": "b", "utterance": "fine" },
        ]])
        .to_string(),
    )
    .unwrap();

    let predictions = dir.path().join("predictions.json");
    let output = run([
        "predict",
        "--model",
        path_str(&model),
        "--corpus",
        path_str(&corpus),
        "--vocab",
        &fixture("vocab.txt"),
        "--out",
        path_str(&predictions),
    ]);
    assert_exit(&output, 0, "predict on an oversized dialogue");
    assert!(stdout_of(&output).contains("(2 excluded-fallback)"));

    let rows: Value = serde_json::from_str(&fs::read_to_string(&predictions).unwrap()).unwrap();
    for utterance in rows[0].as_array().unwrap() {
        assert_eq!(utterance["flags"], json!(["excluded_fallback"]));
        // Neutral leads the fixture's gold counts, so the fallback is known.
        assert_eq!(utterance["predicted_emotion"], "neutral");
    }
}

#[test]
fn evaluate_matches_hand_computed_scores() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.json");
    let predictions = dir.path().join("predictions.json");

    // Seven in-domain utterances plus one out-of-domain; one neutral is
    // mispredicted as joy, everything else is right.
    let golds = ["neutral", "neutral", "joy", "joy", "sadness", "anger", "anger", "surprise"];
    let mut preds = golds;
    preds[1] = "joy";
    preds[7] = "neutral";
    let utterance = |emotion: &str, extra: Option<&str>| {
        let mut obj = json!({ "speaker": "a", "utterance": "hm", "emotion": emotion });
        if let Some(predicted) = extra {
            obj["predicted_emotion"] = json!(predicted);
        }
        obj
    };
    let gold_rows: Vec<Value> = golds.iter().map(|g| utterance(g, None)).collect();
    fs::write(&gold, json!([gold_rows]).to_string()).unwrap();
    let pred_rows: Vec<Value> =
        golds.iter().zip(preds).map(|(g, p)| utterance(g, Some(p))).collect();
    fs::write(&predictions, json!([pred_rows]).to_string()).unwrap();

    let output = run([
        "evaluate",
        "--predictions",
        path_str(&predictions),
        "--gold",
        path_str(&gold),
    ]);
    assert_exit(&output, 0, "evaluate the crafted files");
    let report = json_stdout(&output);
    assert_eq!(report["n_scored"], 7);
    assert_eq!(report["n_skipped"], 1);
    // tp 6, fp 1, fn 1 -> micro-F1 = 12/14.
    let micro = report["micro_f1"].as_f64().unwrap();
    assert!((micro - 12.0 / 14.0).abs() < 1e-12, "{micro}");

    // Restricting the scored classes end-to-end: both joy golds are hit.
    let output = run([
        "evaluate",
        "--predictions",
        path_str(&predictions),
        "--gold",
        path_str(&gold),
        "--evaluated-classes",
        "joy",
    ]);
    assert_exit(&output, 0, "evaluate --evaluated-classes joy");
    let report = json_stdout(&output);
    assert_eq!(report["n_scored"], 2);
    assert_eq!(report["micro_f1"], 1.0);

    // Table output carries the summary line.
    let output = run([
        "evaluate",
        "--predictions",
        path_str(&predictions),
        "--gold",
        path_str(&gold),
        "--format",
        "table",
    ]);
    assert_exit(&output, 0, "evaluate --format table");
    assert!(stdout_of(&output).contains("micro F1 0.8571"), "{}", stdout_of(&output));
}

#[test]
fn evaluate_rejects_mismatched_gold_and_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.json");
    let predictions = dir.path().join("predictions.json");
    fs::write(
        &gold,
        json!([
            [{ "speaker": "a", "utterance": "hm", "emotion": "joy" }],
            [{ "speaker": "a", "utterance": "hm", "emotion": "anger" }],
        ])
        .to_string(),
    )
    .unwrap();
    fs::write(
        &predictions,
        json!([[{ "speaker": "a", "utterance": "hm", "predicted_emotion": "joy" }]]).to_string(),
    )
    .unwrap();

    let output = run([
        "evaluate",
        "--predictions",
        path_str(&predictions),
        "--gold",
        path_str(&gold),
    ]);
    assert_exit(&output, 2, "dialogue counts disagree");
    assert!(stderr_of(&output).contains("dialogues"), "{}", stderr_of(&output));
}

// --- exit codes ------------------------------------------------------------------

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_exit(&run(["--help"]), 0, "--help");
    assert_exit(&run(["predict", "--help"]), 0, "predict --help");
    assert_exit(&run(["no-such-command"]), 1, "unknown subcommand");
    assert_exit(&run(["stats", "--bogus-flag"]), 1, "unknown flag");
}
