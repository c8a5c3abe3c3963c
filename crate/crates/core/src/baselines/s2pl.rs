//! Strict two-phase locking with shared/exclusive modes.
//!
//! Locks are requested per operation and released only at the transaction's
//! terminal event. A request that conflicts with a granted holder waits in a
//! FIFO queue on the item; after every enqueue the waits-for graph is searched
//! for a cycle through the requester, and the youngest member of the cycle is
//! reported as the victim.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::model::{ItemId, Millis, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockMode {
    Shared,
    Exclusive,
}

impl LockMode {
    pub fn compatible(self, other: LockMode) -> bool {
        matches!((self, other), (LockMode::Shared, LockMode::Shared))
    }

    /// True if holding `self` already satisfies a request for `wanted`.
    pub fn covers(self, wanted: LockMode) -> bool {
        self == LockMode::Exclusive || wanted == LockMode::Shared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquireOutcome {
    Granted,
    Queued,
    DeadlockVictim(TxnId),
}

/// A queued request that became granted during a release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Grant {
    pub txn: TxnId,
    pub item: ItemId,
    pub mode: LockMode,
}

impl PartialOrd for LockMode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LockMode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self == LockMode::Exclusive).cmp(&(*other == LockMode::Exclusive))
    }
}

#[derive(Debug, Clone, Default)]
struct ItemLocks {
    granted: Vec<(TxnId, LockMode)>,
    queue: VecDeque<(TxnId, LockMode)>,
}

impl ItemLocks {
    fn held_by(&self, txn: TxnId) -> Option<LockMode> {
        self.granted
            .iter()
            .find(|(t, _)| *t == txn)
            .map(|&(_, m)| m)
    }

    fn compatible_with_holders(&self, txn: TxnId, mode: LockMode) -> bool {
        self.granted
            .iter()
            .all(|&(t, m)| t == txn || m.compatible(mode))
    }

    fn grant(&mut self, txn: TxnId, mode: LockMode) {
        match self.granted.iter_mut().find(|(t, _)| *t == txn) {
            Some(entry) => entry.1 = entry.1.max(mode),
            None => self.granted.push((txn, mode)),
        }
    }

    fn is_idle(&self) -> bool {
        self.granted.is_empty() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LockTable {
    items: BTreeMap<ItemId, ItemLocks>,
    begins: BTreeMap<TxnId, Millis>,
    held: BTreeMap<TxnId, BTreeSet<ItemId>>,
    waiting: BTreeMap<TxnId, ItemId>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the begin instant used to pick deadlock victims. Unregistered
    /// transactions count as oldest.
    pub fn register(&mut self, txn: TxnId, begin: Millis) {
        self.begins.entry(txn).or_insert(begin);
    }

    pub fn is_registered(&self, txn: TxnId) -> bool {
        self.begins.contains_key(&txn)
    }

    pub fn is_waiting(&self, txn: TxnId) -> bool {
        self.waiting.contains_key(&txn)
    }

    pub fn holders(&self, item: ItemId) -> Vec<(TxnId, LockMode)> {
        self.items
            .get(&item)
            .map(|l| l.granted.clone())
            .unwrap_or_default()
    }

    pub fn queued(&self, item: ItemId) -> Vec<(TxnId, LockMode)> {
        self.items
            .get(&item)
            .map(|l| l.queue.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn held_by(&self, txn: TxnId) -> Vec<ItemId> {
        self.held
            .get(&txn)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Requests `mode` on `item` for `txn`.
    ///
    /// Granted when compatible with every other holder (re-requesting a lock
    /// already covered is a no-op grant, and a sole shared holder upgrades in
    /// place). Otherwise the request is queued and, if that closes a cycle in
    /// the waits-for graph, the youngest transaction in the cycle is returned.
    /// The caller aborts the victim with [`LockTable::release_all`] and should
    /// call [`LockTable::detect_deadlock`] again, since the requester may sit
    /// on more than one cycle.
    pub fn acquire(&mut self, txn: TxnId, item: ItemId, mode: LockMode) -> AcquireOutcome {
        debug_assert!(!self.is_waiting(txn), "{txn} already has a queued request");
        let locks = self.items.entry(item).or_default();
        if locks.held_by(txn).is_some_and(|held| held.covers(mode)) {
            return AcquireOutcome::Granted;
        }
        if locks.compatible_with_holders(txn, mode) {
            locks.grant(txn, mode);
            self.held.entry(txn).or_default().insert(item);
            return AcquireOutcome::Granted;
        }
        locks.queue.push_back((txn, mode));
        self.waiting.insert(txn, item);
        match self.detect_deadlock(txn) {
            Some(victim) => AcquireOutcome::DeadlockVictim(victim),
            None => AcquireOutcome::Queued,
        }
    }

    /// Drops every granted and queued entry of `txn` and grants queued
    /// requests that became compatible, scanning each queue in FIFO order and
    /// stopping at the first request that still conflicts.
    pub fn release_all(&mut self, txn: TxnId) -> Vec<Grant> {
        let mut touched: BTreeSet<ItemId> = self.held.remove(&txn).unwrap_or_default();
        if let Some(item) = self.waiting.remove(&txn) {
            touched.insert(item);
        }
        self.begins.remove(&txn);

        let mut grants = Vec::new();
        for item in touched {
            let Some(locks) = self.items.get_mut(&item) else { continue };
            locks.granted.retain(|(t, _)| *t != txn);
            locks.queue.retain(|(t, _)| *t != txn);
            while let Some(&(head, mode)) = locks.queue.front() {
                if !locks.compatible_with_holders(head, mode) {
                    break;
                }
                locks.queue.pop_front();
                locks.grant(head, mode);
                self.held.entry(head).or_default().insert(item);
                self.waiting.remove(&head);
                grants.push(Grant {
                    txn: head,
                    item,
                    mode,
                });
            }
            if locks.is_idle() {
                self.items.remove(&item);
            }
        }
        grants
    }

    /// Waits-for graph: a waiter points at every holder whose lock conflicts
    /// with its request and at every earlier conflicting request in the same
    /// queue.
    pub fn waits_for(&self) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
        let mut graph: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
        for locks in self.items.values() {
            for (pos, &(waiter, wanted)) in locks.queue.iter().enumerate() {
                let out = graph.entry(waiter).or_default();
                for &(holder, held) in &locks.granted {
                    if holder != waiter && !held.compatible(wanted) {
                        out.insert(holder);
                    }
                }
                for &(earlier, mode) in locks.queue.iter().take(pos) {
                    if earlier != waiter && !mode.compatible(wanted) {
                        out.insert(earlier);
                    }
                }
            }
        }
        graph
    }

    /// A cycle in the waits-for graph passing through `txn`, if any.
    pub fn cycle_through(&self, txn: TxnId) -> Option<Vec<TxnId>> {
        let graph = self.waits_for();
        // iterative DFS keeping the current path
        let mut path = vec![txn];
        let mut iters = vec![graph.get(&txn).map(|s| s.iter()).into_iter().flatten()];
        let mut seen: BTreeSet<TxnId> = BTreeSet::from([txn]);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(&next) if next == txn => return Some(path),
                Some(&next) => {
                    if seen.insert(next) {
                        path.push(next);
                        iters.push(graph.get(&next).map(|s| s.iter()).into_iter().flatten());
                    }
                }
                None => {
                    iters.pop();
                    path.pop();
                }
            }
        }
        None
    }

    /// Youngest member (latest begin, then highest id) of a cycle through `txn`.
    pub fn detect_deadlock(&self, txn: TxnId) -> Option<TxnId> {
        let cycle = self.cycle_through(txn)?;
        cycle
            .into_iter()
            .max_by_key(|t| (self.begins.get(t).copied().unwrap_or(0), *t))
    }

    /// True when no item has two conflicting granted entries and no
    /// transaction is granted twice on one item.
    pub fn is_safe(&self) -> bool {
        self.items.values().all(|locks| {
            let g = &locks.granted;
            g.iter().enumerate().all(|(i, &(a, ma))| {
                g.iter()
                    .skip(i + 1)
                    .all(|&(b, mb)| a != b && ma.compatible(mb))
            })
        })
    }

    pub fn is_deadlock_free(&self) -> bool {
        let graph = self.waits_for();
        graph.keys().all(|&t| self.cycle_through(t).is_none())
    }
}
