//! Comparison protocols and the scheduler interface all three protocols share.
//!
//! The [`Scheduler`] trait is a single-clock view of a protocol: one instant
//! per call, no network in between. Scenario fixtures drive it directly; the
//! simulator uses the underlying pieces so it can put latency and clock skew
//! between client and server.

pub mod occ;
pub mod s2pl;

use std::collections::BTreeMap;

use crate::error::ProtocolError;
use crate::model::{History, ItemRegistry, Millis, OperationKind, Outcome, TxnId};
use crate::opcot::{ClientSession, OpcotServer, TimestampRule, WriteBuffer};

pub use occ::{occ_validate, OccBook, OccDecision, OccServer};
pub use s2pl::{AcquireOutcome, Grant, LockMode, LockTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerEvent {
    /// The operation took effect.
    Executed {
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    },
    /// The operation is waiting for a lock.
    Blocked { txn: TxnId, op: OperationKind },
    Committed { txn: TxnId, at: Millis },
    Aborted { txn: TxnId, at: Millis },
}

pub trait Scheduler {
    fn begin(&mut self, txn: TxnId, at: Millis) -> Result<Vec<SchedulerEvent>, ProtocolError>;

    fn on_op(
        &mut self,
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError>;

    fn on_commit_request(
        &mut self,
        txn: TxnId,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError>;

    fn history(&self) -> &History;

    /// Terminal outcome of `txn`, once known.
    fn outcome(&self, txn: TxnId) -> Option<Outcome> {
        self.history().outcome_of(txn)
    }
}

fn terminal_event(txn: TxnId, committed: bool, at: Millis) -> SchedulerEvent {
    if committed {
        SchedulerEvent::Committed { txn, at }
    } else {
        SchedulerEvent::Aborted { txn, at }
    }
}

/// OPCOT with client logging folded in: operations are logged locally and the
/// server only hears about the transaction at commit.
#[derive(Debug, Clone)]
pub struct OpcotScheduler {
    server: OpcotServer,
    sessions: BTreeMap<TxnId, ClientSession>,
    history: History,
}

impl OpcotScheduler {
    pub fn new(registry: ItemRegistry) -> Self {
        Self::with_rule(registry, TimestampRule::default())
    }

    pub fn with_rule(registry: ItemRegistry, rule: TimestampRule) -> Self {
        OpcotScheduler {
            server: OpcotServer::with_rule(registry, rule),
            sessions: BTreeMap::new(),
            history: History::new(),
        }
    }

    pub fn registry(&self) -> &ItemRegistry {
        self.server.registry()
    }
}

impl Scheduler for OpcotScheduler {
    fn begin(&mut self, txn: TxnId, at: Millis) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        self.sessions.insert(txn, ClientSession::begin(txn, at));
        Ok(vec![])
    }

    fn on_op(
        &mut self,
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        let session = self
            .sessions
            .get_mut(&txn)
            .ok_or(ProtocolError::UnknownTxn(txn))?;
        session.record(op, at)?;
        Ok(vec![])
    }

    fn on_commit_request(
        &mut self,
        txn: TxnId,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        let session = self
            .sessions
            .remove(&txn)
            .ok_or(ProtocolError::UnknownTxn(txn))?;
        let log = session.finish(at)?;
        let decision = self
            .server
            .commit(&log, at, &WriteBuffer::new(), &mut self.history)?;
        Ok(vec![terminal_event(txn, decision.is_committed(), at)])
    }

    fn history(&self) -> &History {
        &self.history
    }
}

#[derive(Debug, Clone, Default)]
pub struct OccScheduler {
    server: OccServer,
    sessions: BTreeMap<TxnId, ClientSession>,
    history: History,
}

impl OccScheduler {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for OccScheduler {
    fn begin(&mut self, txn: TxnId, at: Millis) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        self.sessions.insert(txn, ClientSession::begin(txn, at));
        Ok(vec![])
    }

    fn on_op(
        &mut self,
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        let session = self
            .sessions
            .get_mut(&txn)
            .ok_or(ProtocolError::UnknownTxn(txn))?;
        session.record(op, at)?;
        Ok(vec![])
    }

    fn on_commit_request(
        &mut self,
        txn: TxnId,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        let session = self
            .sessions
            .remove(&txn)
            .ok_or(ProtocolError::UnknownTxn(txn))?;
        let log = session.finish(at)?;
        let decision = self.server.commit(&log, at, &mut self.history)?;
        let end = match decision {
            OccDecision::Committed { at } => at,
            OccDecision::Aborted { .. } => at,
        };
        Ok(vec![terminal_event(txn, decision.is_committed(), end)])
    }

    fn history(&self) -> &History {
        &self.history
    }
}

/// Strict 2PL. A blocked operation stays pending until a release grants it;
/// callers must not issue further operations for a blocked transaction.
#[derive(Debug, Clone, Default)]
pub struct S2plScheduler {
    locks: LockTable,
    pending: BTreeMap<TxnId, OperationKind>,
    history: History,
}

impl S2plScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn locks(&self) -> &LockTable {
        &self.locks
    }

    pub fn is_blocked(&self, txn: TxnId) -> bool {
        self.pending.contains_key(&txn)
    }

    fn deliver_grants(&mut self, grants: Vec<Grant>, at: Millis, events: &mut Vec<SchedulerEvent>) {
        for g in grants {
            if let Some(op) = self.pending.remove(&g.txn) {
                self.history.push_op(g.txn, op, at);
                events.push(SchedulerEvent::Executed { txn: g.txn, op, at });
            }
        }
    }

    fn abort(&mut self, txn: TxnId, at: Millis, events: &mut Vec<SchedulerEvent>) {
        self.pending.remove(&txn);
        self.history.push_terminal(txn, Outcome::Aborted, at);
        events.push(SchedulerEvent::Aborted { txn, at });
        let grants = self.locks.release_all(txn);
        self.deliver_grants(grants, at, events);
    }
}

pub(crate) fn lock_mode_for(op: OperationKind) -> Option<LockMode> {
    match op {
        OperationKind::Read(_) => Some(LockMode::Shared),
        OperationKind::Write(_) => Some(LockMode::Exclusive),
        OperationKind::Begin | OperationKind::Commit => None,
    }
}

impl Scheduler for S2plScheduler {
    fn begin(&mut self, txn: TxnId, at: Millis) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        self.locks.register(txn, at);
        self.history.push_op(txn, OperationKind::Begin, at);
        Ok(vec![])
    }

    fn on_op(
        &mut self,
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        if !self.locks.is_registered(txn) {
            return Err(ProtocolError::UnknownTxn(txn));
        }
        let (Some(item), Some(mode)) = (op.item(), lock_mode_for(op)) else {
            return Ok(vec![]);
        };
        let mut events = Vec::new();
        match self.locks.acquire(txn, item, mode) {
            AcquireOutcome::Granted => {
                self.history.push_op(txn, op, at);
                events.push(SchedulerEvent::Executed { txn, op, at });
            }
            AcquireOutcome::Queued => {
                self.pending.insert(txn, op);
                events.push(SchedulerEvent::Blocked { txn, op });
            }
            AcquireOutcome::DeadlockVictim(victim) => {
                self.pending.insert(txn, op);
                events.push(SchedulerEvent::Blocked { txn, op });
                self.abort(victim, at, &mut events);
                while self.locks.is_waiting(txn) {
                    match self.locks.detect_deadlock(txn) {
                        Some(v) => self.abort(v, at, &mut events),
                        None => break,
                    }
                }
            }
        }
        Ok(events)
    }

    fn on_commit_request(
        &mut self,
        txn: TxnId,
        at: Millis,
    ) -> Result<Vec<SchedulerEvent>, ProtocolError> {
        if !self.locks.is_registered(txn) {
            return Err(ProtocolError::UnknownTxn(txn));
        }
        let mut events = vec![];
        self.history.push_op(txn, OperationKind::Commit, at);
        self.history.push_terminal(txn, Outcome::Committed, at);
        events.push(SchedulerEvent::Committed { txn, at });
        let grants = self.locks.release_all(txn);
        self.deliver_grants(grants, at, &mut events);
        Ok(events)
    }

    fn history(&self) -> &History {
        &self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{registry_new, ItemId};
    use OperationKind::{Read, Write};

    const X: ItemId = ItemId(0);
    const Y: ItemId = ItemId(1);

    #[test]
    fn s2pl_blocked_reader_runs_after_writer_commits() {
        let mut s = S2plScheduler::new();
        let (ti, tj) = (TxnId(1), TxnId(2));
        s.begin(ti, 8).unwrap();
        s.begin(tj, 9).unwrap();
        s.on_op(ti, Write(X), 10).unwrap();
        let ev = s.on_op(tj, Read(X), 11).unwrap();
        assert_eq!(ev, vec![SchedulerEvent::Blocked { txn: tj, op: Read(X) }]);
        let ev = s.on_commit_request(ti, 12).unwrap();
        assert!(ev.contains(&SchedulerEvent::Executed {
            txn: tj,
            op: Read(X),
            at: 12
        }));
        s.on_commit_request(tj, 14).unwrap();
        assert_eq!(s.history().committed(), vec![ti, tj]);
    }

    #[test]
    fn s2pl_deadlock_aborts_youngest_and_unblocks() {
        let mut s = S2plScheduler::new();
        let (t1, t2) = (TxnId(1), TxnId(2));
        s.begin(t1, 0).unwrap();
        s.begin(t2, 1).unwrap();
        s.on_op(t1, Write(X), 2).unwrap();
        s.on_op(t2, Write(Y), 3).unwrap();
        s.on_op(t1, Write(Y), 4).unwrap();
        let ev = s.on_op(t2, Write(X), 5).unwrap();
        assert!(ev.contains(&SchedulerEvent::Aborted { txn: t2, at: 5 }));
        assert!(ev.contains(&SchedulerEvent::Executed {
            txn: t1,
            op: Write(Y),
            at: 5
        }));
        assert!(!s.is_blocked(t2));
        assert_eq!(s.outcome(t2), Some(Outcome::Aborted));
    }

    #[test]
    fn optimistic_schedulers_report_at_commit_only() {
        let mut o = OpcotScheduler::new(registry_new(2).unwrap());
        o.begin(TxnId(1), 0).unwrap();
        assert!(o.on_op(TxnId(1), Read(X), 1).unwrap().is_empty());
        let ev = o.on_commit_request(TxnId(1), 2).unwrap();
        assert_eq!(ev, vec![SchedulerEvent::Committed { txn: TxnId(1), at: 2 }]);

        let mut c = OccScheduler::new();
        c.begin(TxnId(1), 0).unwrap();
        c.on_op(TxnId(1), Write(X), 1).unwrap();
        let ev = c.on_commit_request(TxnId(1), 2).unwrap();
        assert_eq!(ev, vec![SchedulerEvent::Committed { txn: TxnId(1), at: 2 }]);
        assert!(c.on_commit_request(TxnId(9), 3).is_err());
    }
}
