//! Training, evaluation, baselines, sweeps, synthetic data and reports.

mod baselines;
mod metrics;
mod report;
mod runs;
mod synth;
mod train;

pub use baselines::{baseline_predict, evaluate_baseline};
pub use metrics::{pct, ClassMetrics, MetricsReport};
pub use report::{
    comparison_csv, comparison_markdown, histogram_csv, input_marks, params_vs_ba_csv, recall_vs_ba_csv, runs_csv,
    sha256_file, summary_csv, ComparisonRow, Manifest, RUNS_CSV_HEADER,
};
pub use runs::{grid_sweep, mean_std, multi_run, summarise, MetricSummary, MultiRun};
pub use synth::{block_a_len, generate, planted_rule, SynthConfig, SynthMode};
pub use train::{
    class_weights, evaluate, evaluate_indices, predict_proba, resolve_graph, stream_rng, train, Checkpoint, EpochLog,
    RunRecord, StopReason, TrainOutput, CHECKPOINT_FORMAT,
};
