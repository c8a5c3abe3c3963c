//! Ground-truth checks over a [`History`]: serialization graph, cycle search,
//! commitment ordering and an exhaustive serializability decision for small
//! histories.
//!
//! Only committed transactions take part. Two operations of different
//! transactions conflict when they touch the same item and at least one is a
//! write; the earlier one (by the instant recorded in the history) points at
//! the later one. Equal instants are ordered by commit order, which is the
//! order of the transactions' terminal events in the history.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use itertools::Itertools;
use thiserror::Error;

use crate::model::{History, HistoryEvent, ItemId, Millis, OperationKind, TxnId};

/// Largest history [`brute_force_serializable`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConflictEdge {
    pub from: TxnId,
    pub to: TxnId,
    pub item: ItemId,
    pub from_op: OperationKind,
    pub to_op: OperationKind,
    pub from_at: Millis,
    pub to_at: Millis,
    /// The two operations share an instant; direction came from commit order.
    pub tie: bool,
}

/// Data operation of a committed transaction, with its commit rank.
#[derive(Debug, Clone, Copy)]
struct CommittedOp {
    txn: TxnId,
    rank: usize,
    op: OperationKind,
    at: Millis,
}

fn committed_ops(history: &History) -> (Vec<TxnId>, Vec<CommittedOp>) {
    let order = history.committed();
    let rank: HashMap<TxnId, usize> = order.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let ops = history
        .events()
        .iter()
        .filter_map(|ev| match *ev {
            HistoryEvent::Op { txn, op, at } if op.is_data() => rank
                .get(&txn)
                .map(|&rank| CommittedOp { txn, rank, op, at }),
            _ => None,
        })
        .collect();
    (order, ops)
}

fn edge_between(a: &CommittedOp, b: &CommittedOp) -> ConflictEdge {
    let (first, second) = if (a.at, a.rank) <= (b.at, b.rank) {
        (a, b)
    } else {
        (b, a)
    };
    ConflictEdge {
        from: first.txn,
        to: second.txn,
        item: first.op.item().expect("data op"),
        from_op: first.op,
        to_op: second.op,
        from_at: first.at,
        to_at: second.at,
        tie: first.at == second.at,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SerializationGraph {
    nodes: Vec<TxnId>,
    commit_rank: HashMap<TxnId, usize>,
    edges: BTreeMap<(TxnId, TxnId), ConflictEdge>,
}

impl SerializationGraph {
    fn with_nodes(nodes: Vec<TxnId>) -> Self {
        let commit_rank = nodes.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        SerializationGraph {
            nodes,
            commit_rank,
            edges: BTreeMap::new(),
        }
    }

    fn add(&mut self, e: ConflictEdge) {
        if e.from != e.to {
            self.edges.entry((e.from, e.to)).or_insert(e);
        }
    }

    /// Committed transactions in commit order.
    pub fn nodes(&self) -> &[TxnId] {
        &self.nodes
    }

    /// One edge per ordered transaction pair, labelled with the first
    /// conflict found between them.
    pub fn edges(&self) -> impl Iterator<Item = &ConflictEdge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: TxnId, to: TxnId) -> bool {
        self.edges.contains_key(&(from, to))
    }

    pub fn ties(&self) -> usize {
        self.edges.values().filter(|e| e.tie).count()
    }

    pub fn commit_rank(&self, txn: TxnId) -> Option<usize> {
        self.commit_rank.get(&txn).copied()
    }

    fn successors(&self) -> BTreeMap<TxnId, Vec<TxnId>> {
        let mut adj: BTreeMap<TxnId, Vec<TxnId>> = BTreeMap::new();
        for &(from, to) in self.edges.keys() {
            adj.entry(from).or_default().push(to);
        }
        adj
    }

    /// Serialization graph with every conflicting pair of operations
    /// considered: quadratic in the operations per item.
    pub fn build(history: &History) -> Self {
        let (order, ops) = committed_ops(history);
        let mut g = SerializationGraph::with_nodes(order);
        let mut by_item: BTreeMap<ItemId, Vec<&CommittedOp>> = BTreeMap::new();
        for op in &ops {
            by_item.entry(op.op.item().unwrap()).or_default().push(op);
        }
        for list in by_item.values() {
            for (i, a) in list.iter().enumerate() {
                for b in &list[i + 1..] {
                    if a.txn != b.txn && a.op.conflicts_with(&b.op) {
                        g.add(edge_between(a, b));
                    }
                }
            }
        }
        g
    }

    /// A sparser graph with the same reachability between transactions:
    /// per item, operations are walked in order and each one is linked only
    /// to its nearest conflicting predecessors (the last write, or for a
    /// write, the reads since the last write). Every edge is a real conflict.
    /// Linear-ish in history size; use it for large histories.
    pub fn build_reduced(history: &History) -> Self {
        let (order, ops) = committed_ops(history);
        let mut g = SerializationGraph::with_nodes(order);
        let mut by_item: BTreeMap<ItemId, Vec<&CommittedOp>> = BTreeMap::new();
        for op in &ops {
            by_item.entry(op.op.item().unwrap()).or_default().push(op);
        }
        for list in by_item.values_mut() {
            list.sort_by_key(|o| (o.at, o.rank));
            let mut last_write: Option<&CommittedOp> = None;
            let mut reads_since: Vec<&CommittedOp> = Vec::new();
            for &op in list.iter() {
                if op.op.is_write() {
                    if let Some(w) = last_write {
                        g.add(edge_between(w, op));
                    }
                    for r in reads_since.drain(..) {
                        g.add(edge_between(r, op));
                    }
                    last_write = Some(op);
                } else {
                    if let Some(w) = last_write {
                        g.add(edge_between(w, op));
                    }
                    reads_since.push(op);
                }
            }
        }
        g
    }
}

/// Convenience for [`SerializationGraph::build`].
pub fn build_serialization_graph(history: &History) -> SerializationGraph {
    SerializationGraph::build(history)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Acyclicity {
    Acyclic,
    /// A directed cycle, each transaction pointing at the next and the last
    /// back at the first.
    Cyclic(Vec<TxnId>),
}

impl Acyclicity {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, Acyclicity::Acyclic)
    }
}

pub fn is_acyclic(g: &SerializationGraph) -> Acyclicity {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        OnPath,
        Done,
    }
    let adj = g.successors();
    let mut mark: HashMap<TxnId, Mark> = g.nodes.iter().map(|&t| (t, Mark::Fresh)).collect();
    let empty = Vec::new();
    for &root in &g.nodes {
        if mark[&root] != Mark::Fresh {
            continue;
        }
        let mut path: Vec<TxnId> = vec![root];
        let mut cursor: Vec<usize> = vec![0];
        mark.insert(root, Mark::OnPath);
        while let Some(&node) = path.last() {
            let succ = adj.get(&node).unwrap_or(&empty);
            let pos = cursor.last_mut().unwrap();
            if let Some(&next) = succ.get(*pos) {
                *pos += 1;
                match mark.get(&next).copied().unwrap_or(Mark::Done) {
                    Mark::Fresh => {
                        mark.insert(next, Mark::OnPath);
                        path.push(next);
                        cursor.push(0);
                    }
                    Mark::OnPath => {
                        let start = path.iter().position(|&t| t == next).unwrap();
                        return Acyclicity::Cyclic(path[start..].to_vec());
                    }
                    Mark::Done => {}
                }
            } else {
                mark.insert(node, Mark::Done);
                path.pop();
                cursor.pop();
            }
        }
    }
    Acyclicity::Acyclic
}

/// A conflict whose direction disagrees with commit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{} conflicts before {} on {} ({} at {} vs {} at {}) but commits after it",
        .edge.from, .edge.to, .edge.item, .edge.from_op, .edge.from_at, .edge.to_op, .edge.to_at)]
pub struct CoViolation {
    pub edge: ConflictEdge,
}

/// Every conflict edge must point from the earlier committer to the later one.
pub fn check_commitment_ordering(history: &History) -> Result<(), CoViolation> {
    // Reduced edges suffice: a full-graph edge against commit order implies
    // some edge on its reduced path goes against commit order too.
    let g = SerializationGraph::build_reduced(history);
    check_commitment_ordering_on(&g)
}

pub fn check_commitment_ordering_on(g: &SerializationGraph) -> Result<(), CoViolation> {
    for e in g.edges() {
        let (from, to) = (g.commit_rank[&e.from], g.commit_rank[&e.to]);
        if from >= to {
            return Err(CoViolation { edge: *e });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("{0} committed transactions exceed the exhaustive-search limit of {BRUTE_FORCE_LIMIT}")]
    TooManyTransactions(usize),
}

/// Decides conflict serializability by trying every total order of the
/// committed transactions. Refuses histories with more than
/// [`BRUTE_FORCE_LIMIT`] committed transactions.
pub fn brute_force_serializable(history: &History) -> Result<bool, OracleError> {
    let order = history.committed();
    if order.len() > BRUTE_FORCE_LIMIT {
        return Err(OracleError::TooManyTransactions(order.len()));
    }
    let index: HashMap<TxnId, usize> = order.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let ops: Vec<(usize, OperationKind, Millis)> = history
        .events()
        .iter()
        .filter_map(|ev| match *ev {
            HistoryEvent::Op { txn, op, at } if op.is_data() => {
                index.get(&txn).map(|&i| (i, op, at))
            }
            _ => None,
        })
        .collect();

    // pairs (earlier txn, later txn) forced by some conflicting operation pair
    let mut required: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (a, b) in ops.iter().tuple_combinations() {
        let (ta, opa, ata) = *a;
        let (tb, opb, atb) = *b;
        if ta == tb || opa.item() != opb.item() || !(opa.is_write() || opb.is_write()) {
            continue;
        }
        let a_first = ata < atb || (ata == atb && ta < tb);
        required.insert(if a_first { (ta, tb) } else { (tb, ta) });
    }

    let n = order.len();
    Ok((0..n).permutations(n).any(|perm| {
        let mut pos = vec![0; n];
        for (p, &t) in perm.iter().enumerate() {
            pos[t] = p;
        }
        required.iter().all(|&(a, b)| pos[a] < pos[b])
    }))
}
