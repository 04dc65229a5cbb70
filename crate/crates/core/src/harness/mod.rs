//! Persistence, evaluation metrics, index statistics and layered
//! configuration.

pub mod config;
pub mod metrics;
pub mod persist;
pub mod stats;

pub use config::Settings;
pub use metrics::{choice_accuracy, evaluate, rouge_l_f1, EvalReport};
pub use persist::{load_index, save_index, IndexManifest};
pub use stats::{index_stats, IndexStats, LayerStats};
