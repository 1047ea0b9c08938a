//! Training, evaluation and experiment orchestration.

pub mod config;
pub mod lodo;
pub mod metrics;
pub mod outputs;
pub mod train;

pub use config::{TrainConfig, Variant};
pub use lodo::{ablate, lodo_run, AblationTable, LodoTable, VariantSummary};
pub use metrics::{aggregate_seeds, ConfusionMatrix, MeanCi};
pub use train::{train, EvalResult, RunResult, TrainedModel};
