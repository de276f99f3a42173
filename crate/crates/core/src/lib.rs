//! Contextual emotion classification for multi-party dialogues.
//!
//! A dialogue is packed into one token sequence (`[CLS]` up front, `[SEP]`
//! after every utterance) so that self-attention can read the whole
//! conversation at once. Per-utterance vectors are then recovered with
//! dynamic pooling over each utterance's token span and classified into five
//! emotion classes with a class-weighted cross-entropy head. Optional
//! masked-token / next-sentence post-training adapts the encoder to
//! conversational text before fine-tuning, and k-fold ensembling with
//! majority voting squeezes out the remaining variance.
//!
//! Everything runs at desk scale: the math is plain `f64` + [`ndarray`], all
//! gradients are hand-derived and verified against finite differences (see
//! [`gradcheck`]), and training a toy encoder on the bundled synthetic corpus
//! takes seconds, not GPU-hours.
//!
//! # Where to start
//!
//! The `examples/` directory is the guided tour; each file is runnable on
//! bundled fixtures:
//!
//! ```text
//! cargo run --example corpus_stats          corpus loading + label statistics
//! cargo run --example tokenize_dialogue     subword vocab + dialogue packing
//! cargo run --example encode_and_pool       encoder forward pass + span pooling
//! cargo run --example gradient_check        analytic vs numerical gradients
//! cargo run --example post_train_mlm_nsp    masked-token / next-sentence loop
//! cargo run --example train_synthetic       end-to-end fine-tuning run
//! cargo run --example kfold_ensemble        k-fold training + majority vote
//! cargo run --example evaluate_predictions  micro-F1 evaluation
//! ```
//!
//! The same capabilities are exposed as subcommands on the thin
//! `dialogue-emotion` binary (`stats`, `post-train`, `train`, `ensemble`,
//! `predict`, `evaluate`) for scripted use.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod pooling;
pub mod synthetic;
pub mod tensors;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
