//! Batch command-line surface tying the crate together: corpus statistics,
//! self-supervised post-training, fine-tuning, k-fold ensembling, prediction,
//! and evaluation.
//!
//! Configuration is layered: built-in defaults, then an optional JSON file
//! (`--config`), then individual flags, later layers winning. The defaults
//! point at the bundled fixture corpus and vocabulary, so every command runs
//! without arguments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/training
//! error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::corpus::{class_counts, corpus_stats, load_corpus, map_label, Corpus, EmotionLabel};
use crate::encoder::params::EncoderParams;
use crate::encoder::{Activation, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationConfig, F1Definition};
use crate::model::{load_encoder, save_encoder, Model};
use crate::pooling::PoolingMode;
use crate::tensors::NamedTensors;
use crate::tokenizer::TokenVocabulary;
use crate::training::{
    load_ensemble, post_train, save_ensemble, train, train_kfold_ensemble, AdamState,
    EnsembleConfig, EnsembleModel, PostTrainConfig, TrainConfig, UtterancePrediction,
    WeightingMode,
};

/// Bundled fixture path, so a bare invocation has something real to chew on.
fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Everything a run needs, aggregated. Loadable from JSON (partial files
/// fill in from defaults) and overridable field-by-field with flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Encoder architecture. `vocab_size` and `max_len` are always derived
    /// from the vocabulary file and `max_len` below, never read from here.
    pub encoder: EncoderConfig,
    /// Dropout rate of the classification head.
    pub classifier_dropout: f64,
    pub train: TrainConfig,
    pub post_train: PostTrainConfig,
    pub ensemble: EnsembleConfig,
    pub evaluation: EvaluationConfig,
    /// Packing budget: maximum tokens per packed dialogue.
    pub max_len: usize,
    /// Vocabulary file, one token per line.
    pub vocab: String,
    /// Default corpus for commands that read one.
    pub corpus: String,
    /// Held-out labeled corpus scored after each training epoch.
    pub validation: Option<String>,
    /// Directory that default output paths live under.
    pub out_dir: String,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            classifier_dropout: 0.0,
            train: TrainConfig::default(),
            post_train: PostTrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            evaluation: EvaluationConfig::default(),
            max_len: 512,
            vocab: fixture("vocab.txt"),
            corpus: fixture("sample_corpus.json"),
            validation: None,
            out_dir: "out".into(),
            seed: 13,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// The architecture actually built: configured shape, with `vocab_size`
    /// taken from the loaded vocabulary and `max_len` from the packing budget.
    pub fn effective_encoder(&self, vocab: &TokenVocabulary) -> Result<EncoderConfig> {
        let mut cfg = self.encoder.clone();
        cfg.vocab_size = vocab.len();
        cfg.max_len = self.max_len;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classifier_config(&self, d_model: usize) -> ClassifierConfig {
        ClassifierConfig::for_encoder(d_model, self.classifier_dropout)
    }
}

// ---------------------------------------------------------------------------
// argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Table,
}

// Flag-value twins of library enums, so clap stays out of the core modules.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Max,
    Mean,
}

impl From<PoolingArg> for PoolingMode {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Max => PoolingMode::Max,
            PoolingArg::Mean => PoolingMode::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightingArg {
    InverseFrequency,
    Uniform,
}

impl From<WeightingArg> for WeightingMode {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::InverseFrequency => WeightingMode::InverseFrequency,
            WeightingArg::Uniform => WeightingMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Gelu,
    Relu,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DefinitionArg {
    HarmonicMean,
    ProductOverSum,
}

impl From<DefinitionArg> for F1Definition {
    fn from(d: DefinitionArg) -> Self {
        match d {
            DefinitionArg::HarmonicMean => F1Definition::HarmonicMean,
            DefinitionArg::ProductOverSum => F1Definition::ProductOverSum,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dialogue-emotion",
    version,
    about = "Contextual emotion classification for multi-party dialogues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus sizes and label distribution.
    Stats(StatsArgs),
    /// Post-train a fresh encoder with masked-token and sentence-pair
    /// objectives; writes an encoder checkpoint and a loss-curve CSV.
    PostTrain(PostTrainArgs),
    /// Fine-tune an emotion classifier; writes a model checkpoint and
    /// train_log.json.
    Train(TrainArgs),
    /// Train a k-fold majority-vote ensemble into a checkpoint directory.
    Ensemble(EnsembleArgs),
    /// Label a corpus with a model checkpoint or ensemble directory.
    Predict(PredictArgs),
    /// Score a prediction file against gold labels.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run-configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed: sets parameter init (config: seed) plus the train,
    /// post-train, and ensemble seeds.
    #[arg(long)]
    seed: Option<u64>,
}

/// Encoder-architecture overrides (config: encoder.*).
#[derive(Args)]
struct EncoderArgs {
    /// Model width (config: encoder.d_model).
    #[arg(long)]
    d_model: Option<usize>,
    /// Encoder depth (config: encoder.n_layers).
    #[arg(long)]
    n_layers: Option<usize>,
    /// Attention heads; must divide d_model (config: encoder.n_heads).
    #[arg(long)]
    n_heads: Option<usize>,
    /// Feed-forward width (config: encoder.d_ff).
    #[arg(long)]
    d_ff: Option<usize>,
    /// Encoder dropout rate (config: encoder.dropout_rate).
    #[arg(long)]
    dropout: Option<f64>,
    /// Feed-forward nonlinearity (config: encoder.activation).
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    /// Layer-norm denominator epsilon (config: encoder.layer_norm_eps).
    #[arg(long)]
    layer_norm_eps: Option<f64>,
}

impl EncoderArgs {
    fn apply(&self, cfg: &mut EncoderConfig) {
        if let Some(v) = self.d_model {
            cfg.d_model = v;
        }
        if let Some(v) = self.n_layers {
            cfg.n_layers = v;
        }
        if let Some(v) = self.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = self.d_ff {
            cfg.d_ff = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_rate = v;
        }
        if let Some(v) = self.activation {
            cfg.activation = v.into();
        }
        if let Some(v) = self.layer_norm_eps {
            cfg.layer_norm_eps = v;
        }
    }
}

/// Optimization overrides shared by the training commands.
#[derive(Args)]
struct OptimArgs {
    /// Peak learning rate of the cosine schedule.
    #[arg(long)]
    eta_max: Option<f64>,
    /// Floor learning rate of the cosine schedule.
    #[arg(long)]
    eta_min: Option<f64>,
    /// Global gradient-norm ceiling.
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus file to summarize (config: corpus).
    #[arg(value_name = "CORPUS")]
    corpus: Option<PathBuf>,
    /// Output as machine-readable JSON or a plain-text table.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
}

#[derive(Args)]
struct PostTrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus to post-train on; labels are not required (config: corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary file (config: vocab).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Packing budget in tokens (config: max_len).
    #[arg(long)]
    max_len: Option<usize>,
    /// Optimizer steps; 0 writes the freshly initialized encoder
    /// (config: post_train.steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Fraction of tokens corrupted per step (config: post_train.mask_rate).
    #[arg(long)]
    mask_rate: Option<f64>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Output encoder checkpoint (default: <out_dir>/post_trained.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output loss-curve CSV (default: <out_dir>/post_train_curve.csv).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled training corpus (config: corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Labeled held-out corpus scored each epoch (config: validation).
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Vocabulary file (config: vocab).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Packing budget in tokens (config: max_len).
    #[arg(long)]
    max_len: Option<usize>,
    /// Post-trained encoder checkpoint to start from; its architecture
    /// replaces the configured one.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Passes over the corpus (config: train.epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// Dialogues per optimizer step (config: train.batch_size_dialogues).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Gold-class weighting of the loss (config: train.weighting).
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    /// Utterance-vector pooling (config: train.pooling).
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// Dropout rate of the classification head (config: classifier_dropout).
    #[arg(long)]
    classifier_dropout: Option<f64>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Output model checkpoint (default: <out_dir>/model.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output epoch log (default: <out_dir>/train_log.json).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled training corpus, split into folds (config: corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary file (config: vocab).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Packing budget in tokens (config: max_len).
    #[arg(long)]
    max_len: Option<usize>,
    /// Post-trained encoder checkpoint every member starts from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Number of folds and ensemble members (config: ensemble.k).
    #[arg(short, long)]
    k: Option<usize>,
    /// Worker threads for member training; 0 means one per core
    /// (config: ensemble.jobs).
    #[arg(long)]
    jobs: Option<usize>,
    /// Passes over each member's folds (config: train.epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// Dialogues per optimizer step (config: train.batch_size_dialogues).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Gold-class weighting of the loss (config: train.weighting).
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    /// Utterance-vector pooling (config: train.pooling).
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// Dropout rate of the classification head (config: classifier_dropout).
    #[arg(long)]
    classifier_dropout: Option<f64>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Output directory for member checkpoints and the manifest
    /// (default: <out_dir>/ensemble).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model checkpoint file or ensemble directory
    /// (default: <out_dir>/model.ckpt).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus to label; gold labels are not required (config: corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary file; must be the one the model was trained with
    /// (config: vocab).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output prediction file (default: <out_dir>/predictions.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Prediction file from `predict`
    /// (default: <out_dir>/predictions.json).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Gold-labeled corpus the predictions are scored against
    /// (config: corpus).
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Comma-separated classes to score, e.g. "neutral,joy"; gold labels
    /// outside the set are skipped (config: evaluation.evaluated).
    #[arg(long)]
    evaluated_classes: Option<String>,
    /// How micro precision and recall combine into F1
    /// (config: evaluation.definition).
    #[arg(long, value_enum)]
    definition: Option<DefinitionArg>,
    /// Output as machine-readable JSON or a plain-text table.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
}

// ---------------------------------------------------------------------------
// configuration assembly
// ---------------------------------------------------------------------------

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.post_train.seed = seed;
        cfg.ensemble.seed = seed;
    }
    Ok(cfg)
}

fn set_path(target: &mut String, value: &Option<PathBuf>) {
    if let Some(p) = value {
        *target = p.display().to_string();
    }
}

fn apply_optim(cfg: &mut RunConfig, optim: &OptimArgs, post: bool) {
    let (eta_max, eta_min, clip_norm) = if post {
        (
            &mut cfg.post_train.eta_max,
            &mut cfg.post_train.eta_min,
            &mut cfg.post_train.clip_norm,
        )
    } else {
        (
            &mut cfg.train.eta_max,
            &mut cfg.train.eta_min,
            &mut cfg.train.clip_norm,
        )
    };
    if let Some(v) = optim.eta_max {
        *eta_max = v;
    }
    if let Some(v) = optim.eta_min {
        *eta_min = v;
    }
    if let Some(v) = optim.clip_norm {
        *clip_norm = v;
    }
}

fn apply_train_flags(
    cfg: &mut RunConfig,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    weighting: Option<WeightingArg>,
    pooling: Option<PoolingArg>,
    classifier_dropout: Option<f64>,
) {
    if let Some(v) = epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = batch_size {
        cfg.train.batch_size_dialogues = v;
    }
    if let Some(v) = weighting {
        cfg.train.weighting = v.into();
    }
    if let Some(v) = pooling {
        cfg.train.pooling = v.into();
    }
    if let Some(v) = classifier_dropout {
        cfg.classifier_dropout = v;
    }
}

/// Comma-separated class list. Accepts the corpus label spellings plus
/// `out-of-domain`; duplicates collapse, order is preserved.
fn parse_classes(list: &str) -> Result<Vec<EmotionLabel>> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let label = if part.eq_ignore_ascii_case("out-of-domain") {
            EmotionLabel::OutOfDomain
        } else {
            map_label(part)?
        };
        if !out.contains(&label) {
            out.push(label);
        }
    }
    if out.is_empty() {
        return Err(Error::Config {
            message: "evaluated class list is empty".into(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Print to stdout without panicking when the reader closes the pipe early
/// (`... | head` must not look like a crash).
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn out_path(cfg: &RunConfig, flag: &Option<PathBuf>, default_name: &str) -> PathBuf {
    flag.clone()
        .unwrap_or_else(|| Path::new(&cfg.out_dir).join(default_name))
}

/// Build the model to fine-tune: fresh parameters from `cfg.seed`, with the
/// encoder optionally replaced by a post-trained checkpoint (whose
/// architecture then wins).
fn build_model(cfg: &RunConfig, vocab: &TokenVocabulary, init: &Option<PathBuf>) -> Result<Model> {
    let (init_params, encoder_cfg) = match init {
        Some(path) => {
            let (params, enc_cfg) = load_encoder(path)?;
            (Some(params), enc_cfg)
        }
        None => (None, cfg.effective_encoder(vocab)?),
    };
    if encoder_cfg.vocab_size != vocab.len() {
        return Err(Error::Config {
            message: format!(
                "vocabulary has {} tokens but the encoder expects {}",
                vocab.len(),
                encoder_cfg.vocab_size
            ),
        });
    }
    let classifier_cfg = cfg.classifier_config(encoder_cfg.d_model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(encoder_cfg, classifier_cfg, cfg.train.pooling, &mut rng)?;
    if let Some(params) = init_params {
        model.encoder = params;
    }
    Ok(model)
}

/// Mirror of the corpus JSON with `predicted_emotion` (and, for utterances
/// the packer had to exclude, a `flags` marker) added per utterance.
pub fn predictions_to_json(corpus: &Corpus, predictions: &[Vec<UtterancePrediction>]) -> String {
    let rows: Vec<Vec<serde_json::Value>> = corpus
        .dialogues
        .iter()
        .zip(predictions)
        .map(|(dialogue, preds)| {
            dialogue
                .utterances
                .iter()
                .zip(preds)
                .map(|(utt, pred)| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("speaker".into(), utt.speaker.clone().into());
                    obj.insert("utterance".into(), utt.text.clone().into());
                    if let Some(raw) = &utt.raw_label {
                        obj.insert("emotion".into(), raw.clone().into());
                    }
                    obj.insert("predicted_emotion".into(), pred.label.file_label().into());
                    if pred.excluded_fallback {
                        obj.insert("flags".into(), vec!["excluded_fallback"].into());
                    }
                    serde_json::Value::Object(obj)
                })
                .collect()
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("prediction serialization cannot fail")
}

/// Read the labels back out of a prediction file.
pub fn load_predictions(path: &Path) -> Result<Vec<Vec<EmotionLabel>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let root: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = path.display().to_string();
    let dialogues = root.as_array().ok_or_else(|| Error::Schema {
        location: format!("{name}: root"),
        message: "expected a JSON array of dialogues".into(),
    })?;
    let mut out = Vec::with_capacity(dialogues.len());
    for (di, dialogue) in dialogues.iter().enumerate() {
        let utts = dialogue.as_array().ok_or_else(|| Error::Schema {
            location: format!("{name}: dialogue {di}"),
            message: "expected an array of utterance objects".into(),
        })?;
        let mut labels = Vec::with_capacity(utts.len());
        for (ui, utt) in utts.iter().enumerate() {
            let location = format!("{name}: dialogue {di}, utterance {ui}");
            let raw = utt
                .get("predicted_emotion")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Schema {
                    location: location.clone(),
                    message: "missing or non-string \"predicted_emotion\" key".into(),
                })?;
            labels.push(map_label(raw)?);
        }
        out.push(labels);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.corpus);
    let corpus = load_corpus(Path::new(&cfg.corpus), true)?;
    let stats = corpus_stats(&corpus)?;
    match args.format {
        OutputFormat::Json => emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(&stats).expect("stats serialize")
        )),
        OutputFormat::Table => emit(&stats.table()),
    }
}

fn cmd_post_train(args: &PostTrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.corpus);
    set_path(&mut cfg.vocab, &args.vocab);
    if let Some(v) = args.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = args.steps {
        cfg.post_train.steps = v;
    }
    if let Some(v) = args.mask_rate {
        cfg.post_train.mask_rate = v;
    }
    apply_optim(&mut cfg, &args.optim, true);
    args.encoder.apply(&mut cfg.encoder);

    let vocab = TokenVocabulary::load(Path::new(&cfg.vocab))?;
    let encoder_cfg = cfg.effective_encoder(&vocab)?;
    let corpus = load_corpus(Path::new(&cfg.corpus), false)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = EncoderParams::init(&encoder_cfg, &mut rng);
    let mut adam = AdamState::new(encoder.n_parameters());
    let logs = post_train(
        &mut encoder,
        &encoder_cfg,
        &mut adam,
        &corpus,
        &vocab,
        &cfg.post_train,
    )?;

    let out = out_path(&cfg, &args.out, "post_trained.ckpt");
    let curve = out_path(&cfg, &args.curve, "post_train_curve.csv");
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    save_encoder(&out, &encoder_cfg, &encoder)?;
    let mut csv = String::from("step,mlm_loss,nsp_loss,lr\n");
    for log in &logs {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            log.step, log.mlm_loss, log.nsp_loss, log.lr
        ));
    }
    write_text(&curve, &csv)?;
    emit(&format!(
        "post-trained {} steps on {:?} -> {} (curve: {})\n",
        logs.len(),
        corpus.name,
        out.display(),
        curve.display()
    ))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.corpus);
    set_path(&mut cfg.vocab, &args.vocab);
    if let Some(v) = &args.validation {
        cfg.validation = Some(v.display().to_string());
    }
    if let Some(v) = args.max_len {
        cfg.max_len = v;
    }
    apply_train_flags(
        &mut cfg,
        args.epochs,
        args.batch_size,
        args.weighting,
        args.pooling,
        args.classifier_dropout,
    );
    apply_optim(&mut cfg, &args.optim, false);
    args.encoder.apply(&mut cfg.encoder);

    let vocab = TokenVocabulary::load(Path::new(&cfg.vocab))?;
    let corpus = load_corpus(Path::new(&cfg.corpus), true)?;
    let validation = cfg
        .validation
        .as_ref()
        .map(|p| load_corpus(Path::new(p), true))
        .transpose()?;

    let mut model = build_model(&cfg, &vocab, &args.init)?;
    let mut adam = AdamState::new(model.n_parameters());
    let log = train(
        &mut model,
        &mut adam,
        &corpus,
        validation.as_ref(),
        &vocab,
        &cfg.train,
    )?;

    let out = out_path(&cfg, &args.out, "model.ckpt");
    let log_path = out_path(&cfg, &args.log, "train_log.json");
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    model.save(&out, Some(class_counts(&corpus)?.counts))?;
    write_text(
        &log_path,
        &serde_json::to_string_pretty(&log).expect("train log serialize"),
    )?;

    let last = log.epochs.last();
    emit(&format!(
        "trained {} epochs on {} dialogues (final loss {}) -> {} (log: {})\n",
        log.epochs.len(),
        log.n_dialogues,
        last.map(|e| format!("{:.4}", e.loss)).unwrap_or_else(|| "-".into()),
        out.display(),
        log_path.display()
    ))
}

fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.corpus);
    set_path(&mut cfg.vocab, &args.vocab);
    if let Some(v) = args.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = args.k {
        cfg.ensemble.k = v;
    }
    if let Some(v) = args.jobs {
        cfg.ensemble.jobs = v;
    }
    apply_train_flags(
        &mut cfg,
        args.epochs,
        args.batch_size,
        args.weighting,
        args.pooling,
        args.classifier_dropout,
    );
    apply_optim(&mut cfg, &args.optim, false);
    args.encoder.apply(&mut cfg.encoder);

    let vocab = TokenVocabulary::load(Path::new(&cfg.vocab))?;
    let corpus = load_corpus(Path::new(&cfg.corpus), true)?;

    let (init_params, encoder_cfg) = match &args.init {
        Some(path) => {
            let (params, enc_cfg) = load_encoder(path)?;
            (Some(params), enc_cfg)
        }
        None => (None, cfg.effective_encoder(&vocab)?),
    };
    if encoder_cfg.vocab_size != vocab.len() {
        return Err(Error::Config {
            message: format!(
                "vocabulary has {} tokens but the encoder expects {}",
                vocab.len(),
                encoder_cfg.vocab_size
            ),
        });
    }
    let classifier_cfg = cfg.classifier_config(encoder_cfg.d_model);
    let (ensemble, logs) = train_kfold_ensemble(
        &corpus,
        &vocab,
        &encoder_cfg,
        &classifier_cfg,
        &cfg.train,
        &cfg.ensemble,
        init_params.as_ref(),
    )?;

    let out = out_path(&cfg, &args.out, "ensemble");
    save_ensemble(&out, &ensemble)?;
    write_text(
        &out.join("train_logs.json"),
        &serde_json::to_string_pretty(&logs).expect("train logs serialize"),
    )?;
    emit(&format!(
        "trained {}-member ensemble on {} dialogues -> {}\n",
        ensemble.members.len(),
        corpus.dialogues.len(),
        out.display()
    ))
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.corpus);
    set_path(&mut cfg.vocab, &args.vocab);
    let model_path = out_path(&cfg, &args.model, "model.ckpt");

    let ensemble = if model_path.is_dir() {
        load_ensemble(&model_path)?
    } else {
        let (model, header) = Model::load(&model_path)?;
        EnsembleModel::from_single(model, header.class_counts)
    };
    let vocab = TokenVocabulary::load(Path::new(&cfg.vocab))?;
    let expected = ensemble.members[0].encoder_config.vocab_size;
    if vocab.len() != expected {
        return Err(Error::Config {
            message: format!(
                "vocabulary has {} tokens but the model was built for {expected}",
                vocab.len()
            ),
        });
    }
    let corpus = load_corpus(Path::new(&cfg.corpus), false)?;
    let predictions = ensemble.predict_corpus(&corpus, &vocab)?;

    let out = out_path(&cfg, &args.out, "predictions.json");
    write_text(&out, &predictions_to_json(&corpus, &predictions))?;
    let fallbacks: usize = predictions
        .iter()
        .flatten()
        .filter(|p| p.excluded_fallback)
        .count();
    emit(&format!(
        "predicted {} utterances ({} excluded-fallback) -> {}\n",
        corpus.n_utterances(),
        fallbacks,
        out.display()
    ))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set_path(&mut cfg.corpus, &args.gold);
    if let Some(list) = &args.evaluated_classes {
        cfg.evaluation.evaluated = parse_classes(list)?;
    }
    if let Some(d) = args.definition {
        cfg.evaluation.definition = d.into();
    }
    let predictions_path = out_path(&cfg, &args.predictions, "predictions.json");

    let gold = load_corpus(Path::new(&cfg.corpus), true)?;
    let predicted = load_predictions(&predictions_path)?;
    if gold.dialogues.len() != predicted.len() {
        return Err(Error::Evaluation {
            message: format!(
                "gold corpus has {} dialogues, prediction file has {}",
                gold.dialogues.len(),
                predicted.len()
            ),
        });
    }
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for (di, (dialogue, labels)) in gold.dialogues.iter().zip(&predicted).enumerate() {
        if dialogue.utterances.len() != labels.len() {
            return Err(Error::Evaluation {
                message: format!(
                    "dialogue {di}: gold has {} utterances, predictions have {}",
                    dialogue.utterances.len(),
                    labels.len()
                ),
            });
        }
        for (utt, &label) in dialogue.utterances.iter().zip(labels) {
            golds.push(utt.gold_label.expect("labeled load guarantees labels"));
            preds.push(label);
        }
    }

    let report = evaluate(&golds, &preds, &cfg.evaluation)?;
    match args.format {
        OutputFormat::Json => emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("report serialize")
        )),
        OutputFormat::Table => emit(&report.table()),
    }
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Parse `args` and run the requested command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Stats(args) => cmd_stats(args),
        Command::PostTrain(args) => cmd_post_train(args),
        Command::Train(args) => cmd_train(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// [`run_from`] on the process arguments.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}
