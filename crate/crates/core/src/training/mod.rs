//! Losses, forecast pretraining, target fine-tuning, checkpoints, and the
//! repeated-runs experiment harness.

mod checkpoint;
mod examples;
mod experiment;
mod loss;
mod trainer;

pub use checkpoint::{
    file_sha256, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, ManifestEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use examples::{
    batch_gradients, forecast_error_by_variable, mean_loss, predict, prepare_forecast,
    prepare_target, Example, ForecastExample, TargetExample,
};
pub use experiment::{
    prepare_experiment, run_experiment, run_experiment_with, ExperimentConfig, ExperimentReport,
    ModelVariant, PreparedData, RunReport, SsMode,
};
pub use loss::{
    cross_entropy, cross_entropy_from_logits, cross_entropy_loss, masked_mse, masked_mse_loss,
};
pub use trainer::{
    evaluate, finetune, finetune_with, init_finetune_model, pretrain, pretrain_with, EarlyStopping,
    EpochRecord, FinetuneInit, History, TrainConfig,
};
