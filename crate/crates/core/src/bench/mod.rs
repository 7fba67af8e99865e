//! Experiment harness: synthetic scenes, metrics, previews and the full
//! train, degrade, adapt, evaluate pipeline.

mod experiment;
mod files;
mod metrics;
mod preview;
mod synthetic;

pub use experiment::{
    read_report, render_csv, render_markdown, run_experiment, write_report_files, DatasetSource,
    DegradationResult, ExperimentPlan, ExperimentReport, RepeatSummary, Scores, SplitAudit,
};
pub use files::{
    read_dataset, read_predictions, read_split, write_dataset, write_predictions, Dataset,
    CUBE_FILE, LABELS_FILE, SPLIT_FILE,
};
pub use metrics::{evaluate, ConfusionMatrix, Evaluation};
pub use preview::{export_preview, preview_bytes};
pub use synthetic::{gen_synthetic, SyntheticSpec};
