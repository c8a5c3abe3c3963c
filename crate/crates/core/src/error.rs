use thiserror::Error;

use crate::model::{ItemId, Millis, TxnId};

/// Rejected configuration: registry sizes, simulation knobs, matrix files.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Malformed line in one of the text fixture formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, reason: impl Into<String>) -> Self {
        ParseError {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("client clock went backwards: now {now} < previous operator at {prev}")]
    ClockRegression { now: Millis, prev: Millis },
    #[error("log of {txn} already ends with Commit")]
    LogClosed { txn: TxnId },
    #[error("receipt instant {receipt} is earlier than the log's relative span {span}")]
    RebaseUnderflow { receipt: Millis, span: Millis },
    #[error("malformed operator log: {0}")]
    MalformedLog(#[from] crate::model::LogViolation),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("unknown transaction {0}")]
    UnknownTxn(TxnId),
}
