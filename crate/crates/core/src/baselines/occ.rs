//! Classic optimistic concurrency control with backward validation.
//!
//! A validating transaction fails if any transaction that committed after it
//! started wrote an item it read. Validation runs one transaction at a time.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::ProtocolError;
use crate::model::{History, ItemId, Millis, OperationKind, OperatorLog, Outcome, TxnId};
use crate::opcot::rebase_to_server_time;

#[derive(Debug, Clone, PartialEq, Eq)]
struct ActiveTxn {
    start: Millis,
    reads: BTreeSet<ItemId>,
    writes: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CommittedTxn {
    txn: TxnId,
    at: Millis,
    writes: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccDecision {
    Committed { at: Millis },
    Aborted { conflict_with: TxnId, item: ItemId },
}

impl OccDecision {
    pub fn is_committed(&self) -> bool {
        matches!(self, OccDecision::Committed { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct OccBook {
    active: BTreeMap<TxnId, ActiveTxn>,
    committed: Vec<CommittedTxn>,
}

impl OccBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        txn: TxnId,
        start: Millis,
        reads: impl IntoIterator<Item = ItemId>,
        writes: impl IntoIterator<Item = ItemId>,
    ) {
        self.active.insert(
            txn,
            ActiveTxn {
                start,
                reads: reads.into_iter().collect(),
                writes: writes.into_iter().collect(),
            },
        );
    }

    pub fn last_commit(&self) -> Option<Millis> {
        self.committed.last().map(|c| c.at)
    }

    /// Validates `txn` at server instant `now`. On success the write set is
    /// recorded at a commit instant strictly after every earlier commit.
    pub fn validate(&mut self, txn: TxnId, now: Millis) -> Result<OccDecision, ProtocolError> {
        let me = self
            .active
            .remove(&txn)
            .ok_or(ProtocolError::UnknownTxn(txn))?;
        let first_overlap = self.committed.partition_point(|c| c.at <= me.start);
        for other in &self.committed[first_overlap..] {
            if let Some(&item) = other.writes.intersection(&me.reads).next() {
                return Ok(OccDecision::Aborted {
                    conflict_with: other.txn,
                    item,
                });
            }
        }
        let at = match self.last_commit() {
            Some(last) if last >= now => last + 1,
            _ => now,
        };
        self.committed.push(CommittedTxn {
            txn,
            at,
            writes: me.writes,
        });
        Ok(OccDecision::Committed { at })
    }
}

/// Convenience for [`OccBook::validate`].
pub fn occ_validate(
    book: &mut OccBook,
    txn: TxnId,
    now: Millis,
) -> Result<OccDecision, ProtocolError> {
    book.validate(txn, now)
}

/// Server side of optimistic CC for mobile clients. The client sends its log
/// once, at commit; the start instant is recovered from the log's relative
/// span the same way OPCOT rebases.
#[derive(Debug, Clone, Default)]
pub struct OccServer {
    book: OccBook,
}

impl OccServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn book(&self) -> &OccBook {
        &self.book
    }

    /// Validates a finished log received at `receipt` and records it in
    /// `history`: reads take effect at the start instant (the client read its
    /// local copy), writes and Commit at the commit instant.
    pub fn commit(
        &mut self,
        log: &OperatorLog,
        receipt: Millis,
        history: &mut History,
    ) -> Result<OccDecision, ProtocolError> {
        let abs = rebase_to_server_time(log, receipt)?;
        let start = abs.first_instant().expect("validated log is non-empty");
        let reads = log
            .data_ops()
            .filter(|op| !op.is_write())
            .filter_map(|op| op.item());
        let writes = log.data_ops().filter(|op| op.is_write()).filter_map(|op| op.item());
        self.book.register(log.txn_id, start, reads, writes);
        let decision = self.book.validate(log.txn_id, receipt)?;
        let (end, outcome) = match decision {
            OccDecision::Committed { at } => (at, Outcome::Committed),
            OccDecision::Aborted { .. } => (receipt, Outcome::Aborted),
        };
        for rec in &log.records {
            let at = match rec.op {
                OperationKind::Begin | OperationKind::Read(_) => start,
                OperationKind::Write(_) | OperationKind::Commit => end,
            };
            history.push_op(log.txn_id, rec.op, at);
        }
        history.push_terminal(log.txn_id, outcome, end);
        Ok(decision)
    }
}
