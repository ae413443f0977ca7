//! Dataset generation, training, evaluation and reporting.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod report;
pub mod train;

pub use checkpoint::{Checkpoint, EpochLog, Stage, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use commands::{cmd_evaluate, cmd_gen_data, cmd_report, cmd_train_separator, cmd_train_vme};
pub use config::{Config, MaskSource, Preset, ALPHA_SWEEP};
pub use dataset::{generate_dataset, load_split, read_manifest, Example, ManifestEntry, Split};
pub use evaluate::{MetricRow, SummaryRow, System};
pub use report::Report;
