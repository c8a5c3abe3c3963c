//! Optimistic execution with relative operator timestamps, validated at the
//! server by commitment ordering.
//!
//! A transaction runs entirely on the mobile client. Each operator is logged
//! with the time elapsed since the previous operator ([`client_record_op`]), so
//! the client's own clock offset never leaks into the log. At commit the server
//! anchors the last record at its receipt instant and walks backwards to
//! recover absolute instants ([`rebase_to_server_time`]), then scans the log
//! against the per-item last-read / last-write instants ([`validate_commit`]).
//!
//! The scan accepts a read of `X` at `t` only if no committed write of `X` is
//! later than `t`, and a write only if no committed read or write of `X` is
//! later. Every conflict with an already committed transaction therefore points
//! from the earlier committer to the later one, which is commitment ordering.

use std::collections::BTreeMap;

use crate::error::ProtocolError;
use crate::model::{
    AbsoluteLog, AbsoluteOp, History, ItemId, ItemRegistry, Millis, OperationKind, OperatorLog,
    Outcome, TimestampedOp,
};

/// Appends `op` to a client log and returns the new previous-operator instant.
///
/// The relative timestamp is `now - prev_op_instant`; a Begin record is always
/// anchored at 0.
pub fn client_record_op(
    log: &mut OperatorLog,
    op: OperationKind,
    now: Millis,
    prev_op_instant: Millis,
) -> Result<Millis, ProtocolError> {
    use crate::model::LogViolation;

    if log.is_closed() {
        return Err(ProtocolError::LogClosed { txn: log.txn_id });
    }
    if now < prev_op_instant {
        return Err(ProtocolError::ClockRegression {
            now,
            prev: prev_op_instant,
        });
    }
    let rel_ts = match (op, log.records.is_empty()) {
        (OperationKind::Begin, true) => 0,
        (OperationKind::Begin, false) => {
            return Err(LogViolation::InteriorBegin(log.records.len()).into())
        }
        (other, true) => return Err(LogViolation::MissingBegin(other).into()),
        (_, false) => now - prev_op_instant,
    };
    log.records.push(TimestampedOp { op, rel_ts });
    Ok(now)
}

/// Client-side logging state of one running transaction.
#[derive(Debug, Clone)]
pub struct ClientSession {
    log: OperatorLog,
    prev: Millis,
}

impl ClientSession {
    pub fn begin(txn: crate::model::TxnId, now: Millis) -> Self {
        let mut log = OperatorLog::new(txn);
        log.records.push(TimestampedOp::new(OperationKind::Begin, 0));
        ClientSession { log, prev: now }
    }

    pub fn record(&mut self, op: OperationKind, now: Millis) -> Result<(), ProtocolError> {
        self.prev = client_record_op(&mut self.log, op, now, self.prev)?;
        Ok(())
    }

    /// Appends the Commit record and hands the finished log over for sending.
    pub fn finish(mut self, now: Millis) -> Result<OperatorLog, ProtocolError> {
        self.record(OperationKind::Commit, now)?;
        Ok(self.log)
    }

    pub fn log(&self) -> &OperatorLog {
        &self.log
    }
}

/// Rebases a relative log onto the server clock: the last record lands on
/// `receipt` and each earlier record sits `rel_ts` of its successor before it.
pub fn rebase_to_server_time(
    log: &OperatorLog,
    receipt: Millis,
) -> Result<AbsoluteLog, ProtocolError> {
    log.validate()?;
    let span = log.span();
    if receipt < span {
        return Err(ProtocolError::RebaseUnderflow { receipt, span });
    }
    let n = log.records.len();
    let mut instants = vec![0; n];
    instants[n - 1] = receipt;
    for k in (0..n - 1).rev() {
        instants[k] = instants[k + 1] - log.records[k + 1].rel_ts;
    }
    let records = log
        .records
        .iter()
        .zip(instants)
        .map(|(rec, abs_ts)| AbsoluteOp { op: rec.op, abs_ts })
        .collect();
    Ok(AbsoluteLog {
        txn_id: log.txn_id,
        records,
    })
}

/// How an accepted read moves the item's last-read instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampRule {
    /// `T_R <- max(T_R, t)`. Timestamps never move backwards.
    #[default]
    Monotone,
    /// `T_R <- t`, as the pseudocode states it. An older read can pull `T_R`
    /// back and admit a write that precedes a committed read; kept only so
    /// the two rules can be compared.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryUpdate {
    pub item: ItemId,
    pub t_read: Millis,
    pub t_write: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// A read precedes a committed write of the same item.
    ReadBeforeCommittedWrite { t_write: Millis },
    /// A write precedes a committed write of the same item.
    WriteBeforeCommittedWrite { t_write: Millis },
    /// A write precedes a committed read of the same item.
    WriteBeforeCommittedRead { t_read: Millis },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitDecision {
    Committed {
        updates: Vec<RegistryUpdate>,
    },
    Aborted {
        index: usize,
        record: AbsoluteOp,
        reason: AbortReason,
    },
}

impl CommitDecision {
    pub fn is_committed(&self) -> bool {
        matches!(self, CommitDecision::Committed { .. })
    }

    pub fn outcome(&self) -> Outcome {
        if self.is_committed() {
            Outcome::Committed
        } else {
            Outcome::Aborted
        }
    }
}

/// Scans a rebased log against the registry. Nothing is written to the
/// registry here; accepted records stage their timestamp updates, which later
/// records of the same log see.
pub fn validate_commit(
    registry: &ItemRegistry,
    abs_log: &AbsoluteLog,
    rule: TimestampRule,
) -> Result<CommitDecision, ProtocolError> {
    // item -> (t_read, t_write), in first-touch order via `order`
    let mut staged: BTreeMap<ItemId, (Millis, Millis)> = BTreeMap::new();
    let mut order: Vec<ItemId> = Vec::new();

    for (index, rec) in abs_log.records.iter().enumerate() {
        let Some(item) = rec.op.item() else { continue };
        let base = registry.get(item).ok_or(ProtocolError::UnknownItem(item))?;
        let (t_read, t_write) = *staged.entry(item).or_insert_with(|| {
            order.push(item);
            (base.t_read, base.t_write)
        });
        let t = rec.abs_ts;
        let verdict = match rec.op {
            OperationKind::Read(_) if t < t_write => {
                Err(AbortReason::ReadBeforeCommittedWrite { t_write })
            }
            OperationKind::Read(_) => {
                let next_read = match rule {
                    TimestampRule::Monotone => t_read.max(t),
                    TimestampRule::Literal => t,
                };
                Ok((next_read, t_write))
            }
            OperationKind::Write(_) if t < t_write => {
                Err(AbortReason::WriteBeforeCommittedWrite { t_write })
            }
            OperationKind::Write(_) if t < t_read => {
                Err(AbortReason::WriteBeforeCommittedRead { t_read })
            }
            OperationKind::Write(_) => Ok((t_read, t)),
            OperationKind::Begin | OperationKind::Commit => unreachable!("data ops only"),
        };
        match verdict {
            Ok(next) => {
                staged.insert(item, next);
            }
            Err(reason) => {
                return Ok(CommitDecision::Aborted {
                    index,
                    record: *rec,
                    reason,
                })
            }
        }
    }

    let updates = order
        .into_iter()
        .map(|item| {
            let (t_read, t_write) = staged[&item];
            RegistryUpdate {
                item,
                t_read,
                t_write,
            }
        })
        .collect();
    Ok(CommitDecision::Committed { updates })
}

/// Written values buffered by the client, keyed by item.
pub type WriteBuffer = BTreeMap<ItemId, Vec<u8>>;

/// Result of a full server-side commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReport {
    pub decision: CommitDecision,
    pub abs_log: AbsoluteLog,
}

/// Rebases, validates and, on success, applies the staged timestamps and the
/// buffered writes. An aborted transaction leaves the registry untouched.
///
/// The caller must hold the registry exclusively for the whole call; the
/// `&mut` borrow is that critical section.
pub fn commit_transaction(
    registry: &mut ItemRegistry,
    log: &OperatorLog,
    receipt: Millis,
    writes: &WriteBuffer,
    rule: TimestampRule,
) -> Result<CommitReport, ProtocolError> {
    let abs_log = rebase_to_server_time(log, receipt)?;
    let decision = validate_commit(registry, &abs_log, rule)?;
    if let CommitDecision::Committed { updates } = &decision {
        for u in updates {
            match rule {
                TimestampRule::Monotone => registry.raise(u.item, u.t_read, u.t_write),
                TimestampRule::Literal => registry.overwrite(u.item, u.t_read, u.t_write),
            }
        }
        for op in log.data_ops().filter(|op| op.is_write()) {
            let item = op.item().expect("write carries an item");
            if let Some(value) = writes.get(&item) {
                registry.set_value(item, value.clone());
            }
        }
    }
    Ok(CommitReport { decision, abs_log })
}

/// The OPCOT server: item registry plus the history it feeds.
#[derive(Debug, Clone)]
pub struct OpcotServer {
    registry: ItemRegistry,
    rule: TimestampRule,
}

impl OpcotServer {
    pub fn new(registry: ItemRegistry) -> Self {
        Self::with_rule(registry, TimestampRule::default())
    }

    pub fn with_rule(registry: ItemRegistry, rule: TimestampRule) -> Self {
        OpcotServer { registry, rule }
    }

    pub fn registry(&self) -> &ItemRegistry {
        &self.registry
    }

    /// Commits `log` received at `receipt` and appends the rebased operations
    /// and the terminal event to `history`.
    pub fn commit(
        &mut self,
        log: &OperatorLog,
        receipt: Millis,
        writes: &WriteBuffer,
        history: &mut History,
    ) -> Result<CommitDecision, ProtocolError> {
        let report = commit_transaction(&mut self.registry, log, receipt, writes, self.rule)?;
        for rec in &report.abs_log.records {
            history.push_op(log.txn_id, rec.op, rec.abs_ts);
        }
        history.push_terminal(log.txn_id, report.decision.outcome(), receipt);
        Ok(report.decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{registry_new, TxnId};

    const X: ItemId = ItemId(0);

    fn abs(records: &[(OperationKind, Millis)]) -> AbsoluteLog {
        AbsoluteLog {
            txn_id: TxnId(1),
            records: records
                .iter()
                .map(|&(op, abs_ts)| AbsoluteOp { op, abs_ts })
                .collect(),
        }
    }

    fn rel(txn: u32, records: &[(OperationKind, Millis)]) -> OperatorLog {
        OperatorLog::from_records(
            TxnId(txn),
            records
                .iter()
                .map(|&(op, ts)| TimestampedOp::new(op, ts))
                .collect(),
        )
    }

    fn registry_with(t_read: Millis, t_write: Millis) -> ItemRegistry {
        let mut reg = registry_new(2).unwrap();
        reg.overwrite(X, t_read, t_write);
        reg
    }

    use OperationKind::{Begin, Commit, Read, Write};

    #[test]
    fn client_logging_uses_elapsed_time() {
        let mut log = OperatorLog::new(TxnId(1));
        let prev = client_record_op(&mut log, Begin, 500, 500).unwrap();
        assert_eq!(log.records, vec![TimestampedOp::new(Begin, 0)]);
        let prev = client_record_op(&mut log, Read(X), 540, prev).unwrap();
        assert_eq!(log.records[1], TimestampedOp::new(Read(X), 40));
        let prev = client_record_op(&mut log, Write(X), 552, prev).unwrap();
        assert_eq!(prev, 552);
        assert_eq!(log.records[2], TimestampedOp::new(Write(X), 12));
    }

    #[test]
    fn client_logging_rejects_regression_and_closed_logs() {
        let mut log = OperatorLog::new(TxnId(1));
        client_record_op(&mut log, Begin, 10, 10).unwrap();
        assert_eq!(
            client_record_op(&mut log, Read(X), 9, 10),
            Err(ProtocolError::ClockRegression { now: 9, prev: 10 })
        );
        client_record_op(&mut log, Commit, 12, 10).unwrap();
        assert!(matches!(
            client_record_op(&mut log, Read(X), 13, 12),
            Err(ProtocolError::LogClosed { .. })
        ));
        let mut fresh = OperatorLog::new(TxnId(2));
        assert!(matches!(
            client_record_op(&mut fresh, Read(X), 1, 0),
            Err(ProtocolError::MalformedLog(_))
        ));
    }

    #[test]
    fn session_builds_a_valid_log() {
        let mut s = ClientSession::begin(TxnId(3), 1_000);
        s.record(Read(X), 1_010).unwrap();
        s.record(Write(X), 1_030).unwrap();
        let log = s.finish(1_031).unwrap();
        assert_eq!(log.validate(), Ok(()));
        assert_eq!(log.span(), 31);
    }

    #[test]
    fn rebase_examples() {
        let single = OperatorLog::from_records(TxnId(1), vec![TimestampedOp::new(Begin, 0)]);
        // a lone Begin is not a complete log
        assert!(rebase_to_server_time(&single, 42).is_err());

        let log = rel(1, &[(Begin, 0), (Read(X), 2), (Write(X), 3), (Commit, 5)]);
        let got = rebase_to_server_time(&log, 100).unwrap();
        let instants: Vec<_> = got.records.iter().map(|r| r.abs_ts).collect();
        assert_eq!(instants, vec![90, 92, 95, 100]);

        let flat = rel(1, &[(Begin, 0), (Read(X), 0), (Commit, 0)]);
        let got = rebase_to_server_time(&flat, 7).unwrap();
        assert!(got.records.iter().all(|r| r.abs_ts == 7));

        assert_eq!(
            rebase_to_server_time(&log, 9),
            Err(ProtocolError::RebaseUnderflow {
                receipt: 9,
                span: 10
            })
        );
    }

    #[test]
    fn read_after_committed_write_commits_with_max_rule() {
        let reg = registry_with(60, 50);
        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 52), (Read(X), 55), (Commit, 70)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert_eq!(
            d,
            CommitDecision::Committed {
                updates: vec![RegistryUpdate {
                    item: X,
                    t_read: 60,
                    t_write: 50
                }]
            }
        );
        // the literal rule pulls T_R back to 55
        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 52), (Read(X), 55), (Commit, 70)]),
            TimestampRule::Literal,
        )
        .unwrap();
        let CommitDecision::Committed { updates } = d else { panic!() };
        assert_eq!(updates[0].t_read, 55);
    }

    #[test]
    fn read_before_committed_write_aborts() {
        let reg = registry_with(0, 50);
        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 30), (Read(X), 40), (Commit, 45)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert_eq!(
            d,
            CommitDecision::Aborted {
                index: 1,
                record: AbsoluteOp {
                    op: Read(X),
                    abs_ts: 40
                },
                reason: AbortReason::ReadBeforeCommittedWrite { t_write: 50 }
            }
        );
    }

    #[test]
    fn write_rules() {
        let reg = registry_with(60, 50);
        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 52), (Write(X), 55), (Commit, 70)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert!(matches!(
            d,
            CommitDecision::Aborted {
                reason: AbortReason::WriteBeforeCommittedRead { t_read: 60 },
                ..
            }
        ));

        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 52), (Write(X), 70), (Commit, 75)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert_eq!(
            d,
            CommitDecision::Committed {
                updates: vec![RegistryUpdate {
                    item: X,
                    t_read: 60,
                    t_write: 70
                }]
            }
        );

        let d = validate_commit(
            &registry_with(0, 50),
            &abs(&[(Begin, 1), (Write(X), 49), (Commit, 75)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert!(matches!(
            d,
            CommitDecision::Aborted {
                reason: AbortReason::WriteBeforeCommittedWrite { t_write: 50 },
                ..
            }
        ));
    }

    #[test]
    fn ties_pass() {
        let reg = registry_with(60, 50);
        let d = validate_commit(
            &reg,
            &abs(&[(Begin, 50), (Read(X), 50), (Write(X), 60), (Commit, 60)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        assert!(d.is_committed());
    }

    #[test]
    fn empty_log_and_unknown_items() {
        let reg = registry_with(60, 50);
        let d = validate_commit(&reg, &abs(&[(Begin, 5), (Commit, 6)]), TimestampRule::Monotone)
            .unwrap();
        assert_eq!(d, CommitDecision::Committed { updates: vec![] });

        let err = validate_commit(
            &reg,
            &abs(&[(Begin, 5), (Read(ItemId(7)), 6), (Commit, 6)]),
            TimestampRule::Monotone,
        );
        assert_eq!(err, Err(ProtocolError::UnknownItem(ItemId(7))));
    }

    #[test]
    fn staged_updates_are_visible_within_a_log() {
        // the write at 80 stages T_W = 80; the read at 85 is checked against it
        let reg = registry_with(0, 0);
        let ok = validate_commit(
            &reg,
            &abs(&[(Begin, 70), (Write(X), 80), (Read(X), 85), (Commit, 90)]),
            TimestampRule::Monotone,
        )
        .unwrap();
        let CommitDecision::Committed { updates } = ok else { panic!() };
        assert_eq!(
            updates,
            vec![RegistryUpdate {
                item: X,
                t_read: 85,
                t_write: 80
            }]
        );
    }

    #[test]
    fn commit_applies_or_leaves_registry_alone() {
        let mut reg = registry_new(2).unwrap();
        let writer = rel(1, &[(Begin, 0), (Write(X), 2), (Commit, 2)]);
        let mut buf = WriteBuffer::new();
        buf.insert(X, b"v1".to_vec());
        let report =
            commit_transaction(&mut reg, &writer, 12, &buf, TimestampRule::Monotone).unwrap();
        assert!(report.decision.is_committed());
        assert_eq!(reg.get(X).unwrap().value, b"v1".to_vec());
        assert_eq!(reg.get(X).unwrap().t_write, 10);

        let before = reg.clone();
        // read at abs 9 precedes the committed write at 10
        let stale = rel(2, &[(Begin, 0), (Read(X), 1), (Write(X), 1), (Commit, 1)]);
        let mut buf2 = WriteBuffer::new();
        buf2.insert(X, b"v2".to_vec());
        let report =
            commit_transaction(&mut reg, &stale, 10, &buf2, TimestampRule::Monotone).unwrap();
        assert!(!report.decision.is_committed());
        assert_eq!(reg, before);
    }

    #[test]
    fn fresh_registry_commits_anything() {
        let mut reg = registry_new(3).unwrap();
        let log = rel(
            1,
            &[
                (Begin, 0),
                (Read(ItemId(2)), 5),
                (Write(ItemId(1)), 5),
                (Write(ItemId(2)), 5),
                (Commit, 5),
            ],
        );
        let report =
            commit_transaction(&mut reg, &log, 20, &WriteBuffer::new(), TimestampRule::Monotone)
                .unwrap();
        assert!(report.decision.is_committed());
    }

    #[test]
    fn server_records_history() {
        let mut server = OpcotServer::new(registry_new(1).unwrap());
        let mut h = History::new();
        // T_I writes X at 10; T_J reads it at 11: conflict order matches commit order
        let ti = rel(1, &[(Begin, 0), (Write(X), 2), (Commit, 2)]);
        let tj = rel(2, &[(Begin, 0), (Read(X), 2), (Commit, 3)]);
        assert!(server.commit(&ti, 12, &WriteBuffer::new(), &mut h).unwrap().is_committed());
        assert!(server.commit(&tj, 14, &WriteBuffer::new(), &mut h).unwrap().is_committed());
        assert_eq!(h.committed(), vec![TxnId(1), TxnId(2)]);
        assert_eq!(h.validate(), Ok(()));

        // the same reader with its read rebased to 9 is too old
        let late = rel(3, &[(Begin, 0), (Read(X), 0), (Commit, 5)]);
        assert!(!server.commit(&late, 14, &WriteBuffer::new(), &mut h).unwrap().is_committed());
    }
}
