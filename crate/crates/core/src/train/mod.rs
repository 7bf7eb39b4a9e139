//! Optimization, training loops, evaluation metrics and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod optimizer;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use metrics::{
    evaluate, evaluate_spans, evaluate_tokens, predict_all, span_scores, token_accuracy, DevMetric, EvalReport,
    SpanScores,
};
pub use optimizer::{Optimizer, OptimizerKind, OptimizerSettings};
pub use trainer::{
    batches_per_epoch, pretrain_seed, train, train_with, warm_start_train, EpochRecord, Phase, RngState, TrainConfig,
    TrainData, TrainOutcome, WarmStartOutcome,
};
