//! Domain types shared by every protocol: operations, relative and absolute
//! operator logs, the server's item registry and the global history.
//!
//! Time is integer milliseconds on a logical simulation clock. Nothing in this
//! crate reads a wall clock.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ConfigError, ParseError};

/// Milliseconds, either an instant on some clock or a duration.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxnId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    Begin,
    Read(ItemId),
    Write(ItemId),
    Commit,
}

impl OperationKind {
    pub fn item(&self) -> Option<ItemId> {
        match *self {
            OperationKind::Read(x) | OperationKind::Write(x) => Some(x),
            OperationKind::Begin | OperationKind::Commit => None,
        }
    }

    pub fn is_data(&self) -> bool {
        self.item().is_some()
    }

    pub fn is_write(&self) -> bool {
        matches!(self, OperationKind::Write(_))
    }

    /// Two operations conflict when they touch the same item and at least one writes.
    pub fn conflicts_with(&self, other: &OperationKind) -> bool {
        match (self.item(), other.item()) {
            (Some(a), Some(b)) => a == b && (self.is_write() || other.is_write()),
            _ => false,
        }
    }

    fn text_fields(&self) -> (&'static str, String) {
        match *self {
            OperationKind::Begin => ("BEGIN", "-".into()),
            OperationKind::Read(x) => ("R", x.0.to_string()),
            OperationKind::Write(x) => ("W", x.0.to_string()),
            OperationKind::Commit => ("COMMIT", "-".into()),
        }
    }

    fn from_text_fields(kind: &str, item: &str, line: usize) -> Result<Self, ParseError> {
        let parse_item = || {
            item.parse::<u32>()
                .map(ItemId)
                .map_err(|_| ParseError::new(line, format!("bad item id `{item}`")))
        };
        let no_item = |op: OperationKind| {
            if item == "-" {
                Ok(op)
            } else {
                Err(ParseError::new(line, format!("{kind} takes no item, got `{item}`")))
            }
        };
        match kind {
            "BEGIN" => no_item(OperationKind::Begin),
            "COMMIT" => no_item(OperationKind::Commit),
            "R" => Ok(OperationKind::Read(parse_item()?)),
            "W" => Ok(OperationKind::Write(parse_item()?)),
            other => Err(ParseError::new(line, format!("unknown operation `{other}`"))),
        }
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperationKind::Begin => f.write_str("Begin"),
            OperationKind::Read(x) => write!(f, "R({x})"),
            OperationKind::Write(x) => write!(f, "W({x})"),
            OperationKind::Commit => f.write_str("Commit"),
        }
    }
}

/// One client-side log record: the operation and the time elapsed since the
/// previous operator executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampedOp {
    pub op: OperationKind,
    pub rel_ts: Millis,
}

impl TimestampedOp {
    pub fn new(op: OperationKind, rel_ts: Millis) -> Self {
        TimestampedOp { op, rel_ts }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogViolation {
    #[error("log is empty")]
    Empty,
    #[error("missing Begin: first record is {0}")]
    MissingBegin(OperationKind),
    #[error("Begin record has relative timestamp {0}, expected 0")]
    BeginNotAnchored(Millis),
    #[error("Begin at interior position {0}")]
    InteriorBegin(usize),
    #[error("Commit not last: found at position {0}")]
    CommitNotLast(usize),
    #[error("missing Commit: last record is {0}")]
    MissingCommit(OperationKind),
}

/// Operators of one transaction with relative timestamps, as built on the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorLog {
    pub txn_id: TxnId,
    pub records: Vec<TimestampedOp>,
}

impl OperatorLog {
    pub fn new(txn_id: TxnId) -> Self {
        OperatorLog {
            txn_id,
            records: Vec::new(),
        }
    }

    pub fn from_records(txn_id: TxnId, records: Vec<TimestampedOp>) -> Self {
        OperatorLog { txn_id, records }
    }

    /// Checks the log shape: Begin first (anchored at 0), Commit last, neither
    /// anywhere else. Reports the first violation found.
    pub fn validate(&self) -> Result<(), LogViolation> {
        let (first, last) = match (self.records.first(), self.records.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(LogViolation::Empty),
        };
        if first.op != OperationKind::Begin {
            return Err(LogViolation::MissingBegin(first.op));
        }
        if first.rel_ts != 0 {
            return Err(LogViolation::BeginNotAnchored(first.rel_ts));
        }
        let n = self.records.len();
        for (i, rec) in self.records.iter().enumerate().skip(1) {
            match rec.op {
                OperationKind::Begin => return Err(LogViolation::InteriorBegin(i)),
                OperationKind::Commit if i + 1 != n => return Err(LogViolation::CommitNotLast(i)),
                _ => {}
            }
        }
        if last.op != OperationKind::Commit || n < 2 {
            return Err(LogViolation::MissingCommit(last.op));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.records.last(), Some(r) if r.op == OperationKind::Commit)
    }

    /// Sum of all relative timestamps: the client-side duration from Begin to Commit.
    pub fn span(&self) -> Millis {
        self.records.iter().map(|r| r.rel_ts).sum()
    }

    pub fn data_ops(&self) -> impl Iterator<Item = OperationKind> + '_ {
        self.records.iter().map(|r| r.op).filter(|op| op.is_data())
    }

    /// Line-oriented text form, one `<OP> <item|-> <rel_ts>` record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            let (kind, item) = rec.op.text_fields();
            out.push_str(&format!("{kind} {item} {}\n", rec.rel_ts));
        }
        out
    }

    /// Parses the text form. Blank lines and `#` comments are skipped. The
    /// result is not shape-checked; call [`OperatorLog::validate`] for that.
    pub fn parse_text(txn_id: TxnId, text: &str) -> Result<Self, ParseError> {
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let [kind, item, ts] = fields[..] else {
                return Err(ParseError::new(line, "expected `<OP> <item|-> <rel_ts_ms>`"));
            };
            let op = OperationKind::from_text_fields(kind, item, line)?;
            let rel_ts = ts
                .parse::<Millis>()
                .map_err(|_| ParseError::new(line, format!("bad timestamp `{ts}`")))?;
            records.push(TimestampedOp { op, rel_ts });
        }
        Ok(OperatorLog { txn_id, records })
    }
}

/// Convenience for [`OperatorLog::validate`].
pub fn log_validate(log: &OperatorLog) -> Result<(), LogViolation> {
    log.validate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsoluteOp {
    pub op: OperationKind,
    pub abs_ts: Millis,
}

/// An operator log rebased onto the server clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsoluteLog {
    pub txn_id: TxnId,
    pub records: Vec<AbsoluteOp>,
}

impl AbsoluteLog {
    pub fn first_instant(&self) -> Option<Millis> {
        self.records.first().map(|r| r.abs_ts)
    }

    pub fn last_instant(&self) -> Option<Millis> {
        self.records.last().map(|r| r.abs_ts)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[0].abs_ts <= w[1].abs_ts)
    }
}

/// Server-side state of one data item: an opaque value plus the last committed
/// read and write instants.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemState {
    pub value: Vec<u8>,
    pub t_read: Millis,
    pub t_write: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRegistry {
    items: Vec<ItemState>,
}

impl ItemRegistry {
    /// Creates `n_items` items, ids `0..n_items`, with both timestamps at 0.
    pub fn new(n_items: usize) -> Result<Self, ConfigError> {
        if n_items == 0 {
            return Err(ConfigError::invalid("n_items", "must be at least 1"));
        }
        if n_items > u32::MAX as usize {
            return Err(ConfigError::invalid("n_items", "exceeds the item id space"));
        }
        Ok(ItemRegistry {
            items: vec![ItemState::default(); n_items],
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Option<&ItemState> {
        self.items.get(item.0 as usize)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        (item.0 as usize) < self.items.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &ItemState)> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, s)| (ItemId(i as u32), s))
    }

    /// Raises the item's timestamps to at least the given instants. Timestamps
    /// never move backwards.
    pub(crate) fn raise(&mut self, item: ItemId, t_read: Millis, t_write: Millis) {
        let state = &mut self.items[item.0 as usize];
        state.t_read = state.t_read.max(t_read);
        state.t_write = state.t_write.max(t_write);
    }

    /// Overwrites timestamps as given, with no monotonicity guard.
    pub(crate) fn overwrite(&mut self, item: ItemId, t_read: Millis, t_write: Millis) {
        let state = &mut self.items[item.0 as usize];
        state.t_read = t_read;
        state.t_write = t_write;
    }

    pub(crate) fn set_value(&mut self, item: ItemId, value: Vec<u8>) {
        self.items[item.0 as usize].value = value;
    }
}

/// Convenience for [`ItemRegistry::new`].
pub fn registry_new(n_items: usize) -> Result<ItemRegistry, ConfigError> {
    ItemRegistry::new(n_items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryEvent {
    /// An operation took effect at the given server instant.
    Op {
        txn: TxnId,
        op: OperationKind,
        at: Millis,
    },
    Terminal {
        txn: TxnId,
        outcome: Outcome,
        at: Millis,
    },
}

impl HistoryEvent {
    pub fn txn(&self) -> TxnId {
        match *self {
            HistoryEvent::Op { txn, .. } | HistoryEvent::Terminal { txn, .. } => txn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("{0} has no terminal event")]
    Unterminated(TxnId),
    #[error("{0} has more than one terminal event")]
    DoubleTerminal(TxnId),
    #[error("{0} executes an operation after its terminal event")]
    OpAfterTerminal(TxnId),
}

/// Global record of operation and commit/abort events, in the order the server
/// learned of them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct History {
    events: Vec<HistoryEvent>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_op(&mut self, txn: TxnId, op: OperationKind, at: Millis) {
        self.events.push(HistoryEvent::Op { txn, op, at });
    }

    pub fn push_terminal(&mut self, txn: TxnId, outcome: Outcome, at: Millis) {
        self.events.push(HistoryEvent::Terminal { txn, outcome, at });
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Every transaction has exactly one terminal event, after all its operations.
    pub fn validate(&self) -> Result<(), HistoryError> {
        let mut terminated: HashMap<TxnId, bool> = HashMap::new();
        for ev in &self.events {
            match *ev {
                HistoryEvent::Op { txn, .. } => {
                    if terminated.get(&txn) == Some(&true) {
                        return Err(HistoryError::OpAfterTerminal(txn));
                    }
                    terminated.entry(txn).or_insert(false);
                }
                HistoryEvent::Terminal { txn, .. } => {
                    if terminated.insert(txn, true) == Some(true) {
                        return Err(HistoryError::DoubleTerminal(txn));
                    }
                }
            }
        }
        let mut open: Vec<TxnId> = terminated
            .into_iter()
            .filter(|(_, done)| !done)
            .map(|(t, _)| t)
            .collect();
        open.sort();
        match open.first() {
            Some(&t) => Err(HistoryError::Unterminated(t)),
            None => Ok(()),
        }
    }

    /// Committed transactions in commit order (position of their terminal event).
    pub fn committed(&self) -> Vec<TxnId> {
        self.events
            .iter()
            .filter_map(|ev| match *ev {
                HistoryEvent::Terminal {
                    txn,
                    outcome: Outcome::Committed,
                    ..
                } => Some(txn),
                _ => None,
            })
            .collect()
    }

    pub fn outcome_of(&self, txn: TxnId) -> Option<Outcome> {
        self.events.iter().find_map(|ev| match *ev {
            HistoryEvent::Terminal { txn: t, outcome, .. } if t == txn => Some(outcome),
            _ => None,
        })
    }

    /// One event per line:
    ///
    /// ```text
    /// OP <txn> <BEGIN|R|W|COMMIT> <item|-> <at>
    /// END <txn> <COMMITTED|ABORTED> <at>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("# ccarena history v1\n");
        for ev in &self.events {
            match *ev {
                HistoryEvent::Op { txn, op, at } => {
                    let (kind, item) = op.text_fields();
                    out.push_str(&format!("OP {} {kind} {item} {at}\n", txn.0));
                }
                HistoryEvent::Terminal { txn, outcome, at } => {
                    let word = match outcome {
                        Outcome::Committed => "COMMITTED",
                        Outcome::Aborted => "ABORTED",
                    };
                    out.push_str(&format!("END {} {word} {at}\n", txn.0));
                }
            }
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, ParseError> {
        let mut history = History::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let num = |s: &str, what: &str| -> Result<u64, ParseError> {
                s.parse::<u64>()
                    .map_err(|_| ParseError::new(line, format!("bad {what} `{s}`")))
            };
            let txn_of = |s: &str| -> Result<TxnId, ParseError> {
                s.parse::<u32>()
                    .map(TxnId)
                    .map_err(|_| ParseError::new(line, format!("bad txn id `{s}`")))
            };
            match fields[..] {
                ["OP", txn, kind, item, at] => {
                    let op = OperationKind::from_text_fields(kind, item, line)?;
                    history.push_op(txn_of(txn)?, op, num(at, "instant")?);
                }
                ["END", txn, word, at] => {
                    let outcome = match word {
                        "COMMITTED" => Outcome::Committed,
                        "ABORTED" => Outcome::Aborted,
                        other => {
                            return Err(ParseError::new(line, format!("unknown outcome `{other}`")))
                        }
                    };
                    history.push_terminal(txn_of(txn)?, outcome, num(at, "instant")?);
                }
                _ => return Err(ParseError::new(line, "expected an OP or END record")),
            }
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(op: OperationKind, ts: Millis) -> TimestampedOp {
        TimestampedOp::new(op, ts)
    }

    const X: ItemId = ItemId(0);

    #[test]
    fn registry_starts_zeroed() {
        let reg = registry_new(3).unwrap();
        assert_eq!(reg.len(), 3);
        for (id, state) in reg.iter() {
            assert!(id.0 < 3);
            assert_eq!((state.t_read, state.t_write), (0, 0));
        }
        assert_eq!(registry_new(1000).unwrap().len(), 1000);
        assert_eq!(registry_new(10000).unwrap().len(), 10000);
        assert!(matches!(registry_new(0), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn registry_raise_is_monotone() {
        let mut reg = registry_new(1).unwrap();
        reg.raise(X, 60, 50);
        reg.raise(X, 40, 55);
        let s = reg.get(X).unwrap();
        assert_eq!((s.t_read, s.t_write), (60, 55));
    }

    #[test]
    fn well_formed_log_passes() {
        let log = OperatorLog::from_records(
            TxnId(1),
            vec![
                rec(OperationKind::Begin, 0),
                rec(OperationKind::Read(X), 3),
                rec(OperationKind::Write(X), 4),
                rec(OperationKind::Commit, 5),
            ],
        );
        assert_eq!(log_validate(&log), Ok(()));
        assert_eq!(log.span(), 12);
    }

    #[test]
    fn log_shape_violations() {
        let missing_begin = OperatorLog::from_records(
            TxnId(1),
            vec![rec(OperationKind::Read(X), 0), rec(OperationKind::Commit, 5)],
        );
        assert_eq!(
            missing_begin.validate(),
            Err(LogViolation::MissingBegin(OperationKind::Read(X)))
        );

        let commit_not_last = OperatorLog::from_records(
            TxnId(1),
            vec![
                rec(OperationKind::Begin, 0),
                rec(OperationKind::Commit, 0),
                rec(OperationKind::Read(X), 1),
            ],
        );
        assert_eq!(commit_not_last.validate(), Err(LogViolation::CommitNotLast(1)));

        let no_commit =
            OperatorLog::from_records(TxnId(1), vec![rec(OperationKind::Begin, 0)]);
        assert_eq!(
            no_commit.validate(),
            Err(LogViolation::MissingCommit(OperationKind::Begin))
        );
        assert_eq!(OperatorLog::new(TxnId(1)).validate(), Err(LogViolation::Empty));

        let unanchored = OperatorLog::from_records(
            TxnId(1),
            vec![rec(OperationKind::Begin, 4), rec(OperationKind::Commit, 0)],
        );
        assert_eq!(unanchored.validate(), Err(LogViolation::BeginNotAnchored(4)));

        let interior = OperatorLog::from_records(
            TxnId(1),
            vec![
                rec(OperationKind::Begin, 0),
                rec(OperationKind::Begin, 1),
                rec(OperationKind::Commit, 1),
            ],
        );
        assert_eq!(interior.validate(), Err(LogViolation::InteriorBegin(1)));
    }

    #[test]
    fn log_text_form() {
        let text = "BEGIN - 0\nR 17 40\nW 17 12\nCOMMIT - 3\n";
        let log = OperatorLog::parse_text(TxnId(9), text).unwrap();
        assert_eq!(log.records[1], rec(OperationKind::Read(ItemId(17)), 40));
        assert_eq!(log.to_text(), text);

        let err = OperatorLog::parse_text(TxnId(9), "BEGIN - 0\nR x 4\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(OperatorLog::parse_text(TxnId(9), "BEGIN 3 0\n").is_err());
        assert!(OperatorLog::parse_text(TxnId(9), "R 1\n").is_err());
    }

    #[test]
    fn history_shape() {
        let mut h = History::new();
        h.push_op(TxnId(1), OperationKind::Write(X), 10);
        h.push_op(TxnId(2), OperationKind::Read(X), 11);
        h.push_terminal(TxnId(1), Outcome::Committed, 12);
        assert_eq!(h.validate(), Err(HistoryError::Unterminated(TxnId(2))));
        h.push_terminal(TxnId(2), Outcome::Aborted, 13);
        assert_eq!(h.validate(), Ok(()));
        assert_eq!(h.committed(), vec![TxnId(1)]);

        let mut late = h.clone();
        late.push_op(TxnId(1), OperationKind::Read(X), 20);
        assert_eq!(late.validate(), Err(HistoryError::OpAfterTerminal(TxnId(1))));
        let mut twice = h.clone();
        twice.push_terminal(TxnId(2), Outcome::Aborted, 14);
        assert_eq!(twice.validate(), Err(HistoryError::DoubleTerminal(TxnId(2))));

        let parsed = History::parse_text(&h.to_text()).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn conflicts() {
        let r = OperationKind::Read(X);
        let w = OperationKind::Write(X);
        let wy = OperationKind::Write(ItemId(1));
        assert!(r.conflicts_with(&w) && w.conflicts_with(&r) && w.conflicts_with(&w));
        assert!(!r.conflicts_with(&r));
        assert!(!w.conflicts_with(&wy));
        assert!(!OperationKind::Begin.conflicts_with(&w));
    }
}
