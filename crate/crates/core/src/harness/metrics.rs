use serde::Serialize;

use crate::error::ConfigError;
use crate::model::Millis;
use crate::sim::{ProtocolKind, SimConfig, SimOutcome, TxnTiming};

/// CSV column order.
pub const CSV_HEADER: &str = "protocol,seed,n_txns,n_items,committed,aborted,abort_rate,mean_wait_ms,p95_wait_ms,mean_messages_per_txn";

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub n_txns: usize,
    pub n_items: usize,
    pub committed: usize,
    pub aborted: usize,
    pub abort_rate: f64,
    pub mean_wait_ms: f64,
    pub p95_wait_ms: f64,
    pub mean_messages_per_txn: f64,
}

pub fn compute_abort_rate(aborted: usize, total: usize) -> Result<f64, ConfigError> {
    if total == 0 {
        return Err(ConfigError::invalid("total", "no transactions"));
    }
    if aborted > total {
        return Err(ConfigError::invalid(
            "aborted",
            format!("{aborted} aborts out of {total} transactions"),
        ));
    }
    Ok(aborted as f64 / total as f64)
}

/// Elapsed time minus the transaction's own service time, never negative.
pub fn compute_waiting_time(t: &TxnTiming) -> Millis {
    t.terminal
        .saturating_sub(t.submit)
        .saturating_sub(t.service_ms)
}

/// Nearest-rank percentile of unsorted samples; `p` in (0, 100].
pub fn percentile(samples: &[Millis], p: f64) -> Option<Millis> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl RunMetrics {
    pub fn from_outcome(cfg: &SimConfig, out: &SimOutcome) -> Self {
        let n = out.timings.len();
        let waits: Vec<Millis> = out.timings.iter().map(compute_waiting_time).collect();
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        RunMetrics {
            protocol: cfg.protocol,
            seed: cfg.seed,
            n_txns: cfg.n_txns,
            n_items: cfg.n_items,
            committed: out.committed(),
            aborted: out.aborted(),
            abort_rate: compute_abort_rate(out.aborted(), n).unwrap_or(0.0),
            mean_wait_ms: mean(waits.iter().sum::<Millis>() as f64),
            p95_wait_ms: percentile(&waits, 95.0).unwrap_or(0) as f64,
            mean_messages_per_txn: mean(out.messages() as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Outcome, TxnId};

    fn timing(submit: Millis, terminal: Millis, service_ms: Millis) -> TxnTiming {
        TxnTiming {
            txn: TxnId(0),
            client: 0,
            submit,
            terminal,
            service_ms,
            data_ops: 1,
            outcome: Outcome::Committed,
            attempts: 1,
            messages: 2,
        }
    }

    #[test]
    fn abort_rate() {
        assert_eq!(compute_abort_rate(0, 100), Ok(0.0));
        assert_eq!(compute_abort_rate(200, 200), Ok(1.0));
        assert!(compute_abort_rate(0, 0).is_err());
        assert!(compute_abort_rate(3, 2).is_err());
    }

    #[test]
    fn waiting_time() {
        assert_eq!(compute_waiting_time(&timing(0, 500, 500)), 0);
        assert_eq!(compute_waiting_time(&timing(0, 620, 500)), 120);
        assert_eq!(compute_waiting_time(&timing(100, 400, 500)), 0);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<Millis> = (1..=20).rev().collect();
        assert_eq!(percentile(&v, 95.0), Some(19));
        assert_eq!(percentile(&v, 100.0), Some(20));
        assert_eq!(percentile(&v, 1.0), Some(1));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
