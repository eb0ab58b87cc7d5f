//! The deterministic discrete-event network simulator.
//!
//! One strictly ordered queue of (time, sequence) events drives everything:
//! interval ticks, message deliveries, external submissions, and service
//! wakeups. Per-link latency is drawn from a seeded PRNG in event order, so
//! a (config, scenario) pair replays to the identical transcript. Partition
//! rules drop messages at send time. After the configured duration no new
//! ticks or wakeups are scheduled and the queue drains, which lets in-flight
//! commits land so fault-free runs end with identical chains everywhere.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use trellis_contracts::{Host, TxReceipt};
use trellis_ledger::encoding::Value;
use trellis_ledger::{Address, Block, Chain, KeyPair, StateMachine, Transaction};

use crate::node::{NetMessage, NodeState, Recipient};
use crate::transcript::Transcript;
use crate::NodeKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("scenario refers to unknown node {0}")]
    ScenarioRefersToUnknownNode(Address),
    #[error("no key available for node {0}")]
    MissingKey(Address),
    #[error("latency range minimum exceeds maximum")]
    BadLatencyRange,
    #[error("genesis registry has no validators")]
    EmptyValidatorSet,
}

/// Timed link-down rule: traffic between the isolated set and everyone else
/// is dropped while `start_s <= send_time < end_s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionRule {
    pub start_s: u64,
    pub end_s: u64,
    pub isolated: std::collections::BTreeSet<Address>,
}

impl PartitionRule {
    fn cuts(&self, from: &Address, to: &Address, now_ms: u64) -> bool {
        let now_s = now_ms / 1000;
        now_s >= self.start_s
            && now_s < self.end_s
            && self.isolated.contains(from) != self.isolated.contains(to)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub nodes: Vec<(Address, NodeKind)>,
    pub latency_ms: (u64, u64),
    pub block_interval_s: u64,
    pub duration_s: u64,
    pub partitions: Vec<PartitionRule>,
}

#[derive(Debug, Clone)]
pub enum ExternalEvent {
    SubmitTx { node: Address, tx: Transaction },
    ServiceEvent { service: usize, payload: Value },
}

#[derive(Debug, Clone)]
pub struct TimedEvent {
    pub at_s: u64,
    pub event: ExternalEvent,
}

/// Context handed to services; lets them submit transactions and request
/// future wakeups. Wakeups past the configured duration are discarded so
/// the event queue always drains.
pub struct ServiceCtx {
    pub now_ms: u64,
    submissions: Vec<(Address, Transaction)>,
    wakeups: Vec<u64>,
}

impl ServiceCtx {
    fn new(now_ms: u64) -> ServiceCtx {
        ServiceCtx { now_ms, submissions: Vec::new(), wakeups: Vec::new() }
    }

    pub fn now_s(&self) -> u64 {
        self.now_ms / 1000
    }

    pub fn submit_tx(&mut self, node: Address, tx: Transaction) {
        self.submissions.push((node, tx));
    }

    pub fn schedule_wakeup_s(&mut self, at_s: u64) {
        self.wakeups.push(at_s * 1000);
    }
}

/// A background service stepped by the simulator: telemetry ingest,
/// anchoring, scenario driving. Commits are observed on one designated node.
pub trait SimService {
    fn node(&self) -> Address;
    fn on_start(&mut self, _ctx: &mut ServiceCtx) {}
    fn on_commit(&mut self, _ctx: &mut ServiceCtx, _block: &Block, _receipts: &[TxReceipt]) {}
    fn on_event(&mut self, _ctx: &mut ServiceCtx, _payload: &Value) {}
    fn on_wakeup(&mut self, _ctx: &mut ServiceCtx) {}
}

pub struct SimOutcome {
    pub transcript: Transcript,
    pub nodes: BTreeMap<Address, NodeState>,
}

enum QueueItem {
    Tick,
    Deliver(NetMessage, Address),
    External(ExternalEvent),
    Wakeup(usize),
}

/// Runs a full simulation. `keys` must cover every configured node; all
/// nodes start from clones of the same genesis chain.
pub fn run_sim(
    config: &SimConfig,
    keys: &BTreeMap<Address, KeyPair>,
    genesis: &Chain<Host>,
    events: Vec<TimedEvent>,
    services: &mut [&mut dyn SimService],
) -> Result<SimOutcome, SimError> {
    Simulation::new(config, keys, genesis, events, services)?.run()
}

struct Simulation<'a, 'b> {
    config: &'a SimConfig,
    nodes: BTreeMap<Address, NodeState>,
    queue: BTreeMap<(u64, u64), QueueItem>,
    seq: u64,
    rng: ChaCha20Rng,
    transcript: Transcript,
    services: &'a mut [&'b mut dyn SimService],
    last_heights: BTreeMap<Address, u64>,
    end_ms: u64,
}

impl<'a, 'b> Simulation<'a, 'b> {
    fn new(
        config: &'a SimConfig,
        keys: &BTreeMap<Address, KeyPair>,
        genesis: &Chain<Host>,
        events: Vec<TimedEvent>,
        services: &'a mut [&'b mut dyn SimService],
    ) -> Result<Simulation<'a, 'b>, SimError> {
        if config.latency_ms.0 > config.latency_ms.1 {
            return Err(SimError::BadLatencyRange);
        }
        if genesis.state().validator_set().is_empty() {
            return Err(SimError::EmptyValidatorSet);
        }
        let mut nodes = BTreeMap::new();
        for (addr, _) in &config.nodes {
            let key = keys.get(addr).ok_or(SimError::MissingKey(*addr))?.clone();
            nodes.insert(*addr, NodeState::new(key, genesis.clone()));
        }
        for svc in services.iter() {
            if !nodes.contains_key(&svc.node()) {
                return Err(SimError::ScenarioRefersToUnknownNode(svc.node()));
            }
        }
        let mut sim = Simulation {
            config,
            nodes,
            queue: BTreeMap::new(),
            seq: 0,
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            transcript: Transcript::default(),
            services,
            last_heights: BTreeMap::new(),
            end_ms: config.duration_s * 1000,
        };
        for (addr, _) in &config.nodes {
            sim.last_heights.insert(*addr, 0);
        }
        for timed in events {
            if let ExternalEvent::SubmitTx { node, .. } = &timed.event {
                if !sim.nodes.contains_key(node) {
                    return Err(SimError::ScenarioRefersToUnknownNode(*node));
                }
            }
            sim.push_at(timed.at_s * 1000, QueueItem::External(timed.event));
        }
        if config.block_interval_s > 0 && config.block_interval_s * 1000 <= sim.end_ms {
            sim.push_at(config.block_interval_s * 1000, QueueItem::Tick);
        }
        Ok(sim)
    }

    fn push_at(&mut self, t_ms: u64, item: QueueItem) {
        let key = (t_ms, self.seq);
        self.seq += 1;
        self.queue.insert(key, item);
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        // service start hooks run at t=0
        for i in 0..self.services.len() {
            let mut ctx = ServiceCtx::new(0);
            self.services[i].on_start(&mut ctx);
            self.drain_ctx(i, ctx, 0);
        }
        while let Some((&(t_ms, seq), _)) = self.queue.iter().next() {
            let item = self.queue.remove(&(t_ms, seq)).expect("key just observed");
            match item {
                QueueItem::Tick => self.on_tick(t_ms),
                QueueItem::Deliver(msg, to) => self.on_deliver(t_ms, msg, to),
                QueueItem::External(event) => self.on_external(t_ms, event),
                QueueItem::Wakeup(i) => {
                    let mut ctx = ServiceCtx::new(t_ms);
                    self.services[i].on_wakeup(&mut ctx);
                    self.drain_ctx(i, ctx, t_ms);
                }
            }
        }
        let addrs: Vec<Address> = self.nodes.keys().copied().collect();
        for addr in addrs {
            let node = &self.nodes[&addr];
            let event = Value::map([
                ("event", "final".into()),
                ("head", node.chain.latest().digest().value()),
                ("height", node.chain.height().into()),
                ("node", addr.value()),
            ]);
            self.transcript.push(event);
        }
        Ok(SimOutcome { transcript: self.transcript, nodes: self.nodes })
    }

    fn on_tick(&mut self, t_ms: u64) {
        let addrs: Vec<Address> = self.nodes.keys().copied().collect();
        for addr in addrs {
            let outbox = self
                .nodes
                .get_mut(&addr)
                .expect("known node")
                .handle_tick(t_ms / 1000);
            self.route(t_ms, outbox);
            self.note_commits(t_ms, addr);
        }
        let next = t_ms + self.config.block_interval_s * 1000;
        if next <= self.end_ms {
            self.push_at(next, QueueItem::Tick);
        }
    }

    fn on_deliver(&mut self, t_ms: u64, msg: NetMessage, to: Address) {
        self.transcript.push(Value::map([
            ("event", "deliver".into()),
            ("from", msg.from.value()),
            ("kind", msg.payload.kind().into()),
            ("t", t_ms.into()),
            ("to", to.value()),
        ]));
        let outbox = self
            .nodes
            .get_mut(&to)
            .expect("validated at send")
            .handle_message(&msg, t_ms);
        self.route(t_ms, outbox);
        self.note_commits(t_ms, to);
    }

    fn on_external(&mut self, t_ms: u64, event: ExternalEvent) {
        match event {
            ExternalEvent::SubmitTx { node, tx } => {
                self.transcript.push(Value::map([
                    ("event", "submit_tx".into()),
                    ("node", node.value()),
                    ("t", t_ms.into()),
                    ("tx", tx.id.value()),
                ]));
                let outbox = self
                    .nodes
                    .get_mut(&node)
                    .expect("validated in new()")
                    .submit_tx(tx, t_ms);
                self.route(t_ms, outbox);
                self.note_commits(t_ms, node);
            }
            ExternalEvent::ServiceEvent { service, payload } => {
                if service >= self.services.len() {
                    return;
                }
                let mut ctx = ServiceCtx::new(t_ms);
                self.services[service].on_event(&mut ctx, &payload);
                self.drain_ctx(service, ctx, t_ms);
            }
        }
    }

    fn drain_ctx(&mut self, _service: usize, ctx: ServiceCtx, t_ms: u64) {
        for (node, tx) in ctx.submissions {
            self.push_at(t_ms, QueueItem::External(ExternalEvent::SubmitTx { node, tx }));
        }
        for wake_ms in ctx.wakeups {
            if wake_ms <= self.end_ms {
                self.push_at(wake_ms.max(t_ms), QueueItem::Wakeup(_service));
            }
        }
    }

    /// Fans a node's outbox into the queue, applying partition rules at send
    /// time and drawing one latency per (message, destination).
    fn route(&mut self, t_ms: u64, outbox: Vec<NetMessage>) {
        for msg in outbox {
            let targets: Vec<Address> = match msg.to {
                Recipient::Broadcast => self
                    .nodes
                    .keys()
                    .copied()
                    .filter(|a| *a != msg.from)
                    .collect(),
                Recipient::Node(addr) => {
                    if self.nodes.contains_key(&addr) {
                        vec![addr]
                    } else {
                        self.transcript.push(Value::map([
                            ("event", "drop".into()),
                            ("from", msg.from.value()),
                            ("kind", msg.payload.kind().into()),
                            ("reason", "unknown_node".into()),
                            ("t", t_ms.into()),
                            ("to", addr.value()),
                        ]));
                        vec![]
                    }
                }
            };
            for to in targets {
                if self
                    .config
                    .partitions
                    .iter()
                    .any(|rule| rule.cuts(&msg.from, &to, t_ms))
                {
                    self.transcript.push(Value::map([
                        ("event", "drop".into()),
                        ("from", msg.from.value()),
                        ("kind", msg.payload.kind().into()),
                        ("reason", "partition".into()),
                        ("t", t_ms.into()),
                        ("to", to.value()),
                    ]));
                    continue;
                }
                let (lo, hi) = self.config.latency_ms;
                let latency = if lo == hi { lo } else { self.rng.gen_range(lo..=hi) };
                self.push_at(t_ms + latency, QueueItem::Deliver(msg.clone(), to));
            }
        }
    }

    /// Records any blocks the node committed since last observed and feeds
    /// them to services attached to that node.
    fn note_commits(&mut self, t_ms: u64, addr: Address) {
        let head = self.nodes[&addr].chain.height();
        let seen = self.last_heights[&addr];
        if head == seen {
            return;
        }
        for h in (seen + 1)..=head {
            let (digest, block, receipts) = {
                let node = &self.nodes[&addr];
                let block = node.chain.block_at(h).expect("committed").clone();
                let receipts = node.chain.receipts_at(h).expect("committed").to_vec();
                (block.digest(), block, receipts)
            };
            self.transcript.push_commit(t_ms, addr, h, digest);
            for i in 0..self.services.len() {
                if self.services[i].node() == addr {
                    let mut ctx = ServiceCtx::new(t_ms);
                    self.services[i].on_commit(&mut ctx, &block, &receipts);
                    self.drain_ctx(i, ctx, t_ms);
                }
            }
        }
        self.last_heights.insert(addr, head);
    }
}
