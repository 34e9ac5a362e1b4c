//! Evaluation measures: reconstruction accuracy, controllability,
//! consistency/scalability, disentanglement and reaching quality, plus a
//! multi-seed suite runner and its reports.

mod config;
mod measures;
mod report;
mod suite;

pub use config::{ConsistencyConfig, ControllabilityConfig, MeasureKind, MetricConfig, MetricToggles, PairScope};
pub use measures::{
    accuracy, consistency_scalability, controllability, disentanglement_angle, greedy_drive, latent_grid, mean_sd,
    r_squared, reach_quality, sample_goals, sample_state_pairs, sample_states, states_along_trajectory, Accuracy,
    AxisConsistency, Controllability, Disentanglement, GreedyOutcome, ReachQuality,
};
pub use report::{svg_paths, svg_scatter, EvalReport, PlotData, ReportRow, SummaryRow, CSV_COLUMNS};
pub use suite::run_suite;
