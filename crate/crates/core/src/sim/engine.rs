use std::collections::VecDeque;

use crate::baselines::lock_mode_for;
use crate::baselines::occ::OccServer;
use crate::baselines::s2pl::{AcquireOutcome, Grant, LockTable};
use crate::error::ConfigError;
use crate::model::{History, ItemRegistry, Millis, OperationKind, OperatorLog, Outcome, TxnId};
use crate::opcot::{ClientSession, OpcotServer, WriteBuffer};
use crate::sim::config::{DelayRange, ProtocolKind, SimConfig};
use crate::sim::queue::EventQueue;
use crate::sim::rng::{stream, SimRng};
use crate::sim::workload::{gen_workload, TxnSpec};

/// Per-transaction timing as the client sees it. A transaction that was
/// resubmitted after aborts reports its final attempt's outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnTiming {
    /// Workload id; history ids of later attempts differ.
    pub txn: TxnId,
    pub client: usize,
    pub submit: Millis,
    /// Instant the client learned the final outcome.
    pub terminal: Millis,
    /// Sum of operation service times for one pass over the transaction.
    pub service_ms: Millis,
    pub data_ops: usize,
    pub outcome: Outcome,
    pub attempts: u32,
    pub messages: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub history: History,
    pub timings: Vec<TxnTiming>,
    /// Instant of the last handled event.
    pub end: Millis,
    pub events_handled: u64,
}

impl SimOutcome {
    pub fn committed(&self) -> usize {
        self.timings
            .iter()
            .filter(|t| t.outcome == Outcome::Committed)
            .count()
    }

    pub fn aborted(&self) -> usize {
        self.timings.len() - self.committed()
    }

    pub fn messages(&self) -> u64 {
        self.timings.iter().map(|t| t.messages).sum()
    }
}

#[derive(Debug)]
enum Event {
    Arrival(usize),
    /// Server receives an optimistic client's finished log.
    LogReceipt(usize),
    LockRequest(usize),
    /// Client receives the grant for its pending operation.
    LockGranted(usize),
    CommitRequest(usize),
    /// Client receives the server's verdict.
    Decision { attempt: usize, committed: bool },
}

struct Attempt {
    spec: usize,
    txn: TxnId,
    /// Index of the data operation currently requested (locking only).
    next_op: usize,
    log: Option<OperatorLog>,
    writes: WriteBuffer,
    closed: bool,
}

struct Client {
    backlog: VecDeque<usize>,
    busy: bool,
    skew: Millis,
    disconnected_until: Millis,
}

struct Logical {
    submit: Millis,
    attempts: u32,
    messages: u64,
    done: Option<(Millis, Outcome)>,
}

enum Server {
    Opcot(OpcotServer),
    Occ(OccServer),
    Locking(LockTable),
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    specs: Vec<TxnSpec>,
    queue: EventQueue<Event>,
    net: SimRng,
    history: History,
    server: Server,
    clients: Vec<Client>,
    logical: Vec<Logical>,
    attempts: Vec<Attempt>,
    events_handled: u64,
}

fn sample(rng: &mut SimRng, range: DelayRange) -> Millis {
    rng.between(range.min, range.max)
}

/// Runs one configuration to completion.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutcome, ConfigError> {
    cfg.validate()?;
    let specs = gen_workload(cfg, &mut SimRng::new(cfg.seed, stream::WORKLOAD));

    let mut clock_rng = SimRng::new(cfg.seed, stream::CLOCKS);
    let clients = (0..cfg.n_clients)
        .map(|_| Client {
            backlog: VecDeque::new(),
            busy: false,
            skew: clock_rng.between(0, 2 * cfg.client_clock_skew_ms),
            disconnected_until: 0,
        })
        .collect();

    let mut queue = EventQueue::new();
    let mut arrivals = SimRng::new(cfg.seed, stream::ARRIVALS);
    let mean_gap = cfg.interarrival_mean();
    let mut clock = 0.0f64;
    for k in 0..specs.len() {
        clock += arrivals.exponential(mean_gap);
        queue.push(clock.floor() as Millis, Event::Arrival(k));
    }

    let server = match cfg.protocol {
        ProtocolKind::Opcot => Server::Opcot(OpcotServer::with_rule(
            ItemRegistry::new(cfg.n_items)?,
            cfg.timestamp_rule,
        )),
        ProtocolKind::Occ => Server::Occ(OccServer::new()),
        ProtocolKind::S2pl => Server::Locking(LockTable::new()),
    };

    let mut engine = Engine {
        cfg,
        logical: specs
            .iter()
            .map(|_| Logical {
                submit: 0,
                attempts: 0,
                messages: 0,
                done: None,
            })
            .collect(),
        specs,
        queue,
        net: SimRng::new(cfg.seed, stream::NETWORK),
        history: History::new(),
        server,
        clients,
        attempts: Vec::new(),
        events_handled: 0,
    };
    engine.run();
    Ok(engine.finish())
}

impl Engine<'_> {
    fn run(&mut self) {
        while let Some((now, event)) = self.queue.pop() {
            self.events_handled += 1;
            match event {
                Event::Arrival(k) => self.on_arrival(k, now),
                Event::LogReceipt(a) => self.on_log_receipt(a, now),
                Event::LockRequest(a) => self.on_lock_request(a, now),
                Event::LockGranted(a) => self.on_lock_granted(a, now),
                Event::CommitRequest(a) => self.on_commit_request(a, now),
                Event::Decision { attempt, committed } => self.on_decision(attempt, committed, now),
            }
        }
    }

    fn finish(self) -> SimOutcome {
        let service = self.cfg.op_service_ms;
        let timings = self
            .specs
            .iter()
            .zip(&self.logical)
            .map(|(spec, l)| {
                let (terminal, outcome) = l.done.expect("every transaction terminates");
                TxnTiming {
                    txn: spec.txn_id,
                    client: spec.client_id,
                    submit: l.submit,
                    terminal,
                    service_ms: spec.data_len() as Millis * service,
                    data_ops: spec.data_len(),
                    outcome,
                    attempts: l.attempts,
                    messages: l.messages,
                }
            })
            .collect();
        SimOutcome {
            history: self.history,
            timings,
            end: self.queue.now(),
            events_handled: self.events_handled,
        }
    }

    fn count_message(&mut self, attempt: usize) {
        let spec = self.attempts[attempt].spec;
        self.logical[spec].messages += 1;
    }

    /// Possibly drops the client off the network after an operation ends.
    fn maybe_disconnect(&mut self, client: usize, at: Millis) {
        if self.net.bernoulli(self.cfg.disconnect_prob) {
            let back = at + sample(&mut self.net, self.cfg.reconnect_delay_ms);
            let c = &mut self.clients[client];
            c.disconnected_until = c.disconnected_until.max(back);
        }
    }

    /// Server arrival instant of a message the client wants to send at `at`.
    fn uplink(&mut self, client: usize, at: Millis) -> Millis {
        let depart = at.max(self.clients[client].disconnected_until);
        depart + sample(&mut self.net, self.cfg.uplink_latency_ms)
    }

    fn downlink(&mut self, at: Millis) -> Millis {
        at + sample(&mut self.net, self.cfg.downlink_latency_ms)
    }

    fn on_arrival(&mut self, k: usize, now: Millis) {
        self.logical[k].submit = now;
        let client = self.specs[k].client_id;
        self.clients[client].backlog.push_back(k);
        if !self.clients[client].busy {
            self.start_next(client, now);
        }
    }

    fn start_next(&mut self, client: usize, now: Millis) {
        match self.clients[client].backlog.pop_front() {
            Some(k) => {
                self.clients[client].busy = true;
                self.start_attempt(k, now);
            }
            None => self.clients[client].busy = false,
        }
    }

    fn start_attempt(&mut self, k: usize, now: Millis) {
        let a = self.attempts.len();
        self.attempts.push(Attempt {
            spec: k,
            txn: TxnId(a as u32),
            next_op: 0,
            log: None,
            writes: WriteBuffer::new(),
            closed: false,
        });
        self.logical[k].attempts += 1;
        match self.cfg.protocol {
            ProtocolKind::Opcot | ProtocolKind::Occ => self.run_optimistic(a, now),
            ProtocolKind::S2pl => {
                let client = self.specs[k].client_id;
                let at = self.uplink(client, now);
                self.count_message(a);
                self.queue.push(at, Event::LockRequest(a));
            }
        }
    }

    /// Executes the whole transaction on the client and ships its log.
    fn run_optimistic(&mut self, a: usize, start: Millis) {
        let k = self.attempts[a].spec;
        let txn = self.attempts[a].txn;
        let client = self.specs[k].client_id;
        let skew = self.clients[client].skew;
        let ops: Vec<OperationKind> = self.specs[k].data_ops().collect();

        let mut session = ClientSession::begin(txn, start + skew);
        let mut writes = WriteBuffer::new();
        let mut t = start;
        for op in ops {
            if self.cfg.fresh_reads
                && !op.is_write()
                && t >= self.clients[client].disconnected_until
            {
                t += sample(&mut self.net, self.cfg.uplink_latency_ms);
                t += sample(&mut self.net, self.cfg.downlink_latency_ms);
                self.logical[k].messages += 2;
            }
            session
                .record(op, t + skew)
                .expect("client clock is monotone");
            if let OperationKind::Write(item) = op {
                writes.insert(item, txn.0.to_le_bytes().to_vec());
            }
            t += self.cfg.op_service_ms;
            self.maybe_disconnect(client, t);
        }
        let log = session.finish(t + skew).expect("client clock is monotone");
        let receipt = self.uplink(client, t);
        self.count_message(a);
        self.attempts[a].log = Some(log);
        self.attempts[a].writes = writes;
        self.queue.push(receipt, Event::LogReceipt(a));
    }

    fn on_log_receipt(&mut self, a: usize, now: Millis) {
        let attempt = &self.attempts[a];
        let log = attempt.log.as_ref().expect("optimistic attempt carries a log");
        let committed = match &mut self.server {
            Server::Opcot(server) => server
                .commit(log, now, &attempt.writes, &mut self.history)
                .expect("simulated log is well formed")
                .is_committed(),
            Server::Occ(server) => server
                .commit(log, now, &mut self.history)
                .expect("simulated log is well formed")
                .is_committed(),
            Server::Locking(_) => unreachable!("locking clients do not ship logs"),
        };
        self.send_decision(a, committed, now);
    }

    fn send_decision(&mut self, a: usize, committed: bool, now: Millis) {
        self.attempts[a].closed = true;
        let at = self.downlink(now);
        self.count_message(a);
        self.queue.push(at, Event::Decision { attempt: a, committed });
    }

    fn on_decision(&mut self, a: usize, committed: bool, now: Millis) {
        let k = self.attempts[a].spec;
        let client = self.specs[k].client_id;
        if !committed && self.logical[k].attempts <= self.cfg.retries {
            self.start_attempt(k, now);
            return;
        }
        let outcome = if committed {
            Outcome::Committed
        } else {
            Outcome::Aborted
        };
        self.logical[k].done = Some((now, outcome));
        self.start_next(client, now);
    }

    fn locks(&mut self) -> &mut LockTable {
        match &mut self.server {
            Server::Locking(t) => t,
            _ => unreachable!("lock traffic under an optimistic protocol"),
        }
    }

    fn data_op(&self, a: usize) -> OperationKind {
        let attempt = &self.attempts[a];
        self.specs[attempt.spec].ops[attempt.next_op + 1]
    }

    fn on_lock_request(&mut self, a: usize, now: Millis) {
        debug_assert!(!self.attempts[a].closed);
        let txn = self.attempts[a].txn;
        if !self.locks().is_registered(txn) {
            self.locks().register(txn, now);
            self.history.push_op(txn, OperationKind::Begin, now);
        }
        let op = self.data_op(a);
        let item = op.item().expect("data operation");
        let mode = lock_mode_for(op).expect("data operation");
        match self.locks().acquire(txn, item, mode) {
            AcquireOutcome::Granted => self.grant(a, now),
            AcquireOutcome::Queued => {}
            AcquireOutcome::DeadlockVictim(victim) => {
                self.abort_victim(victim, now);
                while self.locks().is_waiting(txn) {
                    match self.locks().detect_deadlock(txn) {
                        Some(v) => self.abort_victim(v, now),
                        None => break,
                    }
                }
            }
        }
    }

    fn grant(&mut self, a: usize, now: Millis) {
        let txn = self.attempts[a].txn;
        let op = self.data_op(a);
        self.history.push_op(txn, op, now);
        let at = self.downlink(now);
        self.count_message(a);
        self.queue.push(at, Event::LockGranted(a));
    }

    fn deliver(&mut self, grants: Vec<Grant>, now: Millis) {
        for g in grants {
            self.grant(g.txn.0 as usize, now);
        }
    }

    fn abort_victim(&mut self, victim: TxnId, now: Millis) {
        let a = victim.0 as usize;
        self.history.push_terminal(victim, Outcome::Aborted, now);
        let grants = self.locks().release_all(victim);
        self.send_decision(a, false, now);
        self.deliver(grants, now);
    }

    fn on_lock_granted(&mut self, a: usize, now: Millis) {
        let k = self.attempts[a].spec;
        let client = self.specs[k].client_id;
        let done = now + self.cfg.op_service_ms;
        self.maybe_disconnect(client, done);
        let at = self.uplink(client, done);
        self.count_message(a);
        self.attempts[a].next_op += 1;
        if self.attempts[a].next_op < self.specs[k].data_len() {
            self.queue.push(at, Event::LockRequest(a));
        } else {
            self.queue.push(at, Event::CommitRequest(a));
        }
    }

    fn on_commit_request(&mut self, a: usize, now: Millis) {
        let txn = self.attempts[a].txn;
        self.history.push_op(txn, OperationKind::Commit, now);
        self.history.push_terminal(txn, Outcome::Committed, now);
        let grants = self.locks().release_all(txn);
        self.send_decision(a, true, now);
        self.deliver(grants, now);
    }
}
