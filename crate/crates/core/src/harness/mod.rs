//! Metrics, experiment matrices and CSV output.

pub mod matrix;
pub mod metrics;

pub use matrix::{
    check_history, csv_string, gnuplot_table, run_checked, run_matrix, write_csv, MatrixConfig,
    MatrixError, Violation, ViolationKind,
};
pub use metrics::{compute_abort_rate, compute_waiting_time, percentile, RunMetrics, CSV_HEADER};

use crate::sim::SimConfig;

/// Base configuration for desk-scale experiments: 50 clients and short
/// transactions, so that 100 and 1000 items give high and low contention.
pub fn desk_scale() -> SimConfig {
    SimConfig {
        n_clients: 50,
        n_items: 100,
        n_txns: 200,
        mean_len: 5.0,
        sd_len: 1.0,
        disconnect_prob: 0.02,
        ..SimConfig::default()
    }
}
