//! Causality-inspired domain generalization for sensor-based activity
//! recognition.

pub mod data;
pub mod error;
pub mod hsic;
pub mod ids;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Compiles and runs the guide's listings as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/results.md")]
    mod results {}
}
