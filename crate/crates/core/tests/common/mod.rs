#![allow(dead_code)]

use std::path::PathBuf;

use ccarena::model::{History, ItemId, Millis, OperationKind, OperatorLog, Outcome, TxnId};
use ccarena::sim::SimRng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Reads a `.scenario` fixture: blocks headed `== txn <id> receipt <at>`,
/// each followed by an operator log.
pub fn load_scenario(name: &str) -> Vec<(OperatorLog, Millis)> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut out = Vec::new();
    for block in text.split("== ").skip(1) {
        let (header, body) = block.split_once('\n').unwrap();
        let words: Vec<&str> = header.split_whitespace().collect();
        let ["txn", id, "receipt", at] = words[..] else {
            panic!("bad header `{header}`")
        };
        let log = OperatorLog::parse_text(TxnId(id.parse().unwrap()), body).unwrap();
        out.push((log, at.parse().unwrap()));
    }
    out
}

/// Random well-formed history: `n_txns` transactions with up to `max_ops`
/// data ops over `n_items` items, interleaved, instants drawn from a small
/// range so ties occur. About one in five transactions aborts.
pub fn random_history(rng: &mut SimRng, n_txns: u32, n_items: u64, max_ops: u64) -> History {
    let mut scripts: Vec<(TxnId, Vec<OperationKind>, Outcome)> = (0..n_txns)
        .map(|t| {
            let n = rng.between(1, max_ops);
            let ops = (0..n)
                .map(|_| {
                    let item = ItemId(rng.below(n_items) as u32);
                    if rng.bernoulli(0.5) {
                        OperationKind::Read(item)
                    } else {
                        OperationKind::Write(item)
                    }
                })
                .collect();
            let outcome = if rng.bernoulli(0.2) {
                Outcome::Aborted
            } else {
                Outcome::Committed
            };
            (TxnId(t), ops, outcome)
        })
        .collect();
    for s in &mut scripts {
        s.1.reverse();
    }
    let mut h = History::new();
    let mut live: Vec<usize> = (0..scripts.len()).collect();
    while !live.is_empty() {
        let pick = rng.below(live.len() as u64) as usize;
        let idx = live[pick];
        let at = rng.below(30);
        let (txn, ops, outcome) = &mut scripts[idx];
        match ops.pop() {
            Some(op) => h.push_op(*txn, op, at),
            None => {
                h.push_terminal(*txn, *outcome, at);
                live.swap_remove(pick);
            }
        }
    }
    h
}
