//! Windowed datasets: storage, segmentation, splits, synthetic data and
//! importers for public recordings.

pub mod cwd;
pub mod dataset;
pub mod import;
pub mod mat;
pub mod split;
pub mod synth;
pub mod window;

pub use cwd::{load_cwd, save_cwd};
pub use dataset::{DatasetMeta, Standardizer, WindowedDataset};
pub use import::{import_dataset, import_with_summary, DatasetKind, ImportSummary, Setting, SplitSpec};
pub use split::{lodo_partition, source_target_partition, Partition};
pub use synth::{synth_generate, SynthConfig};
pub use window::{sliding_window, window_count, window_stride};
