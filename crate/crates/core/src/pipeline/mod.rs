//! Splits, cross-validation, the repeated two-stage run and accuracy
//! metrics.

pub mod cv;
pub mod metrics;
pub mod run;
pub mod split;

pub use cv::{cross_validate, grid, CvReport, CvScore, GridPoint, DEFAULT_FOLDS};
pub use metrics::{
    classify_argmax, compute_metrics, metrics_from_confusion, misclassification_heatmap, Heatmap, MetricsReport,
};
pub use run::{metrics_csv, run_once, run_two_stage, MeanStd, RunArtifacts, RunConfig, RunSummary, SplitSource, TwoStageReport};
pub use split::{stratified_split, training_counts, SplitRule};
