//! Training: optimization primitives, unsupervised post-training of the
//! encoder, supervised fine-tuning, and k-fold ensembling.

pub mod ensemble;
pub mod finetune;
pub mod optimizer;
pub mod post_train;

pub use ensemble::{
    load_ensemble, majority_vote, save_ensemble, train_kfold_ensemble, EnsembleConfig,
    EnsembleModel, UtterancePrediction,
};
pub use finetune::{train, validation_micro_f1, EpochLog, TrainConfig, TrainLog, WeightingMode};
pub use optimizer::{clip_gradients, cosine_lr, global_grad_norm, AdamState};
pub use post_train::{post_train, PostTrainConfig, StepLog};
