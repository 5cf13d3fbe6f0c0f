//! Config-driven experiments: grid runs over (learning rate, damping, eta),
//! heatmaps, stability sweeps, and their CSV and gnuplot artifacts.

mod config;
mod experiment;
mod report;
mod sweep;

pub use config::{Config, OneOrMany};
pub use experiment::{
    run_experiment, run_single, DataSpec, EpochRecord, ExperimentData, ExperimentSpec, GridCell,
    ModelChoice, RunMetrics, OVERLAP_TOP,
};
pub use report::{
    emit_csv, emit_heatmap_csv, emit_heatmap_matrix, emit_heatmap_script, emit_plot_script,
    emit_probe_csv, emit_rmt_csv, heatmap_deltas, parse_csv, read_metrics_csv, write_heatmap_csv,
    write_heatmap_matrix, write_heatmap_script, write_metrics_csv, write_plot_script,
    write_probe_csv, write_rmt_csv, HeatmapCell, ParsedRun, TRAIN_HEADER,
};
pub use sweep::{stability_sweep, StabilitySpec, SweepResult};
