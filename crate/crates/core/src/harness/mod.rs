//! Training loops, evaluation, logit files and the experiment grid.

mod grid;
mod logits;
mod metrics;
mod pipeline;
mod train;

pub use grid::{aggregate, config_hash, read_results, run_grid, AggregateRow, GridCell, GridConfig, ResultRow};
pub use logits::{export_logits, LogitTable};
pub use metrics::{
    detect_nonconvergence, evaluate, evaluate_text, full_intent_error, student_logits, text_logits_for,
    ErrorRates, CONVERGENCE_ACCURACY,
};
pub use pipeline::pipeline_baseline;
pub use train::{
    distill, train_teacher, BatchRecord, DistillConfig, EpochRecord, GammaMode, RunResult, Sources,
    TextShape, TrainConfig,
};
