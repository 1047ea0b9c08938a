//! Minimal differentiable core: layer kernels, a gradient tape, Adam, and
//! finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_difference_check, finite_difference_check_kinked, GradCheckReport};
pub use graph::{Graph, PairMeasure, Var};
pub use param::{ParamId, ParamStore, Parameter};
