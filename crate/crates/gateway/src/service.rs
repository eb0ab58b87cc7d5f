//! The gateway service stepped by the simulator: telemetry ingest with
//! checkpoint cadence, interval and event anchoring, and the scenario
//! driver that signs contract calls at event time.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use trellis_anchor::{anchor_block_ref, AnchorPolicy, AnchorRecord, PublicChainStub};
use trellis_consensus::{ServiceCtx, SimService};
use trellis_contracts::{AnchorReason, TxReceipt};
use trellis_ledger::encoding::Value;
use trellis_ledger::{Address, Block, Digest, KeyPair, Transaction};
use trellis_tangle::{summarize_batch, CertifiedBatch, IngestRecord, Tangle};

use crate::config::NetworkConfig;
use crate::scenario::build_call_args;

/// Everything the gateway accumulated during a run; consumed by the report.
pub struct GatewayOutcome {
    pub tangle: Tangle,
    pub stub: PublicChainStub,
    pub anchors: Vec<AnchorRecord>,
    pub batches: Vec<(Digest /* checkpoint id */, CertifiedBatch)>,
    pub accepted_txs: Vec<Digest>,
    pub accepted_messages: Vec<Digest>,
    pub driver_errors: Vec<String>,
}

pub struct GatewayService {
    config: NetworkConfig,
    gateway_node: Address,
    coordinator: KeyPair,
    tangle: Tangle,
    tip_rng: ChaCha20Rng,
    since_checkpoint: usize,
    last_checkpoint_s: u64,
    stub: PublicChainStub,
    policy: AnchorPolicy,
    next_interval_anchor_s: u64,
    next_tangle_wakeup_s: u64,
    last_seen: Option<(u64, Digest)>,
    anchors: Vec<AnchorRecord>,
    batches: Vec<(Digest, CertifiedBatch)>,
    nonces: BTreeMap<Address, u64>,
    accepted_txs: Vec<Digest>,
    accepted_messages: Vec<Digest>,
    driver_errors: Vec<String>,
}

impl GatewayService {
    pub fn new(config: &NetworkConfig) -> GatewayService {
        let coordinator = config.key(&config.coordinator);
        let anchor_key = config.key(&config.anchor_key_name);
        let stub = PublicChainStub::new(&config.public_chain_id, &anchor_key, config.config_digest);
        let tangle = Tangle::bootstrap(&coordinator, 0);
        GatewayService {
            gateway_node: config.address(&config.gateway_node),
            coordinator,
            tangle,
            tip_rng: config.rng("tangle-tips"),
            since_checkpoint: 0,
            last_checkpoint_s: 0,
            stub,
            policy: config.anchor_policy.clone(),
            next_interval_anchor_s: config.anchor_policy.interval_s,
            next_tangle_wakeup_s: config.tangle.checkpoint_max_age_s,
            last_seen: None,
            anchors: Vec::new(),
            batches: Vec::new(),
            nonces: BTreeMap::new(),
            accepted_txs: Vec::new(),
            accepted_messages: Vec::new(),
            driver_errors: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn into_outcome(self) -> GatewayOutcome {
        GatewayOutcome {
            tangle: self.tangle,
            stub: self.stub,
            anchors: self.anchors,
            batches: self.batches,
            accepted_txs: self.accepted_txs,
            accepted_messages: self.accepted_messages,
            driver_errors: self.driver_errors,
        }
    }

    fn next_nonce(&mut self, sender: Address) -> u64 {
        let n = self.nonces.entry(sender).or_insert(1);
        let v = *n;
        *n += 1;
        v
    }

    fn latest_batch(&self) -> Option<Digest> {
        self.batches.last().map(|(_, b)| b.batch_digest)
    }

    fn checkpoint_now(&mut self, ctx: &mut ServiceCtx) {
        let now_s = ctx.now_s();
        match self
            .tangle
            .issue_checkpoint(&self.coordinator, now_s, &mut self.tip_rng)
        {
            Ok((checkpoint, batch)) => {
                let nonce = self.next_nonce(self.coordinator.address);
                match summarize_batch(&batch, &self.coordinator, nonce) {
                    Ok(tx) => {
                        self.accepted_txs.push(tx.id);
                        ctx.submit_tx(self.gateway_node, tx);
                    }
                    Err(e) => self.driver_errors.push(format!("summarize_batch: {e}")),
                }
                self.batches.push((checkpoint.message.id, batch));
                self.since_checkpoint = 0;
                self.last_checkpoint_s = now_s;
            }
            Err(trellis_tangle::TangleError::NothingToConfirm) => {}
            Err(e) => self.driver_errors.push(format!("checkpoint: {e}")),
        }
    }

    fn handle_ingest(&mut self, ctx: &mut ServiceCtx, record_value: &Value) {
        let record = match IngestRecord::from_value(record_value) {
            Ok(r) => r,
            Err(e) => {
                self.driver_errors.push(format!("ingest decode: {e}"));
                return;
            }
        };
        if !record.verify_signature() {
            self.driver_errors.push("ingest: bad device signature".into());
            return;
        }
        let (a, b) = match self.tangle.select_tips(&mut self.tip_rng) {
            Ok(t) => t,
            Err(e) => {
                self.driver_errors.push(format!("tips: {e}"));
                return;
            }
        };
        let msg = match record.into_message([a, b]) {
            Ok(m) => m,
            Err(e) => {
                self.driver_errors.push(format!("ingest build: {e}"));
                return;
            }
        };
        let id = msg.id;
        match self.tangle.attach(msg) {
            Ok(()) => {
                self.accepted_messages.push(id);
                self.since_checkpoint += 1;
                if self.since_checkpoint >= self.config.tangle.checkpoint_max_batch {
                    self.checkpoint_now(ctx);
                }
            }
            Err(e) => self.driver_errors.push(format!("attach: {e}")),
        }
    }

    fn handle_call(&mut self, ctx: &mut ServiceCtx, payload: &BTreeMap<String, Value>) {
        let (Some(actor), Some(action), Some(args)) = (
            payload.get("actor").and_then(|v| v.as_str()),
            payload.get("action").and_then(|v| v.as_str()),
            payload.get("args"),
        ) else {
            self.driver_errors.push("call: malformed driver payload".into());
            return;
        };
        match build_call_args(&self.config, action, args, self.latest_batch()) {
            Ok((contract, method, call_args)) => {
                let key = self.config.key(actor);
                let nonce = self.next_nonce(key.address);
                match Transaction::build(&key, nonce, &contract, &method, call_args) {
                    Ok(tx) => {
                        self.accepted_txs.push(tx.id);
                        ctx.submit_tx(self.gateway_node, tx);
                    }
                    Err(e) => self.driver_errors.push(format!("{action}: {e}")),
                }
            }
            Err(e) => self.driver_errors.push(format!("{action}: {e}")),
        }
    }

    fn anchor(&mut self, now_s: u64, height: u64, digest: Digest, reason: AnchorReason) {
        match anchor_block_ref(&mut self.stub, &self.config.chain_id, height, digest, now_s, reason)
        {
            Ok(record) => self.anchors.push(record),
            Err(trellis_anchor::AnchorError::StubRejected { height }) => self
                .driver_errors
                .push(format!("anchor conflict at height {height}")),
            Err(e) => self.driver_errors.push(format!("anchor: {e}")),
        }
    }
}

impl SimService for GatewayService {
    fn node(&self) -> Address {
        self.gateway_node
    }

    fn on_start(&mut self, ctx: &mut ServiceCtx) {
        ctx.schedule_wakeup_s(self.next_interval_anchor_s);
        ctx.schedule_wakeup_s(self.config.tangle.checkpoint_max_age_s);
    }

    fn on_commit(&mut self, ctx: &mut ServiceCtx, block: &Block, receipts: &[TxReceipt]) {
        let digest = block.digest();
        self.last_seen = Some((block.height, digest));
        for receipt in receipts {
            if !receipt.is_ok() {
                continue;
            }
            for event in &receipt.events {
                if self.policy.event_triggers.contains(&event.kind) {
                    let lot = event
                        .fields
                        .get("lot")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_owned();
                    let stage = event
                        .fields
                        .get("stage")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_owned();
                    self.anchor(
                        ctx.now_s(),
                        block.height,
                        digest,
                        AnchorReason::StageCompleted { lot, stage },
                    );
                }
            }
        }
    }

    fn on_event(&mut self, ctx: &mut ServiceCtx, payload: &Value) {
        let Some(m) = payload.as_map() else {
            self.driver_errors.push("driver payload must be a map".into());
            return;
        };
        match m.get("kind").and_then(|v| v.as_str()) {
            Some("ingest") => {
                if let Some(record) = m.get("record") {
                    let record = record.clone();
                    self.handle_ingest(ctx, &record);
                } else {
                    self.driver_errors.push("ingest payload missing record".into());
                }
            }
            Some("call") => {
                let m = m.clone();
                self.handle_call(ctx, &m);
            }
            other => self
                .driver_errors
                .push(format!("unknown driver payload kind {other:?}")),
        }
    }

    fn on_wakeup(&mut self, ctx: &mut ServiceCtx) {
        let now_s = ctx.now_s();
        if now_s >= self.next_interval_anchor_s {
            if let Some((height, digest)) = self.last_seen {
                self.anchor(now_s, height, digest, AnchorReason::Interval);
            }
            self.next_interval_anchor_s += self.policy.interval_s;
            ctx.schedule_wakeup_s(self.next_interval_anchor_s);
        }
        // age-triggered checkpoint for stragglers below the batch threshold
        if now_s >= self.last_checkpoint_s + self.config.tangle.checkpoint_max_age_s
            && self.tangle.unconfirmed_count() > 0
        {
            self.checkpoint_now(ctx);
        }
        if now_s >= self.next_tangle_wakeup_s {
            self.next_tangle_wakeup_s = now_s + self.config.tangle.checkpoint_max_age_s;
            ctx.schedule_wakeup_s(self.next_tangle_wakeup_s);
        }
    }
}
