//! The live single-validator deployment behind `node run`.
//!
//! Consensus never reads a wall clock, so the live node advances a logical
//! clock one block interval per committed block. Each accepted transaction
//! commits in its own block; telemetry follows the same checkpoint cadence
//! as the simulated gateway, keyed off record timestamps and the logical
//! clock. Multi-validator topologies exist only inside the simulator.

use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use trellis_anchor::{anchor_now, AnchorPolicy, PublicChainStub};
use trellis_contracts::{AnchorReason, Host, TxReceipt};
use trellis_ledger::{Chain, Digest, KeyPair, Transaction};
use trellis_tangle::{summarize_batch, IngestRecord, Tangle};

use crate::config::NetworkConfig;

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("transaction rejected: {0}")]
    BadTx(String),
    #[error("this node is not the registered validator; writes are disabled")]
    NotValidator,
    #[error("ingest rejected: {0}")]
    BadRecord(String),
    #[error("internal: {0}")]
    Internal(String),
}

pub struct LiveNode {
    pub chain: Chain<Host>,
    pub tangle: Tangle,
    pub stub: PublicChainStub,
    key: KeyPair,
    coordinator: KeyPair,
    policy: AnchorPolicy,
    interval_s: u64,
    clock_s: u64,
    tip_rng: ChaCha20Rng,
    since_checkpoint: usize,
    last_checkpoint_s: u64,
    last_interval_anchor_s: u64,
    checkpoint_max_batch: usize,
    checkpoint_max_age_s: u64,
    next_nonce: u64,
}

impl LiveNode {
    pub fn new(config: &NetworkConfig) -> LiveNode {
        let key = config.key(&config.gateway_node);
        let coordinator = config.key(&config.coordinator);
        let anchor_key = config.key(&config.anchor_key_name);
        let chain = config.build_genesis_chain();
        let stub = PublicChainStub::new(&config.public_chain_id, &anchor_key, config.config_digest);
        LiveNode {
            chain,
            tangle: Tangle::bootstrap(&coordinator, 0),
            stub,
            key,
            coordinator,
            policy: config.anchor_policy.clone(),
            interval_s: config.block_interval_s,
            clock_s: 0,
            tip_rng: config.rng("live-tangle-tips"),
            since_checkpoint: 0,
            last_checkpoint_s: 0,
            last_interval_anchor_s: 0,
            checkpoint_max_batch: config.tangle.checkpoint_max_batch,
            checkpoint_max_age_s: config.tangle.checkpoint_max_age_s,
            next_nonce: 1,
        }
    }

    pub fn clock_s(&self) -> u64 {
        self.clock_s
    }

    /// Commits one transaction in its own block and runs the anchoring
    /// hooks. Requires this node to be the sole registered validator.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<&TxReceipt, LiveError> {
        tx.verify().map_err(|e| LiveError::BadTx(e.to_string()))?;
        let validators = self.chain.state().perms.validators();
        if validators != vec![self.key.address] {
            return Err(LiveError::NotValidator);
        }
        self.clock_s += self.interval_s;
        let clock = self.clock_s;
        let key = self.key.clone();
        let tx_id = tx.id;
        self.chain
            .seal_next(&key, &[&key], vec![tx], clock)
            .map_err(|e| LiveError::BadTx(e.to_string()))?;
        self.post_commit_hooks();
        self.chain
            .receipt_for(&tx_id)
            .ok_or_else(|| LiveError::Internal("receipt missing after commit".into()))
    }

    fn post_commit_hooks(&mut self) {
        let block = self.chain.latest().clone();
        let receipts = self
            .chain
            .receipts_at(block.height)
            .map(|r| r.to_vec())
            .unwrap_or_default();
        for receipt in receipts.iter().filter(|r| r.is_ok()) {
            for event in &receipt.events {
                if self.policy.event_triggers.contains(&event.kind) {
                    let lot = event.fields.get("lot").and_then(|v| v.as_str()).unwrap_or_default();
                    let stage =
                        event.fields.get("stage").and_then(|v| v.as_str()).unwrap_or_default();
                    let _ = anchor_now(
                        &self.chain,
                        &mut self.stub,
                        self.clock_s,
                        AnchorReason::StageCompleted { lot: lot.into(), stage: stage.into() },
                    );
                }
            }
        }
        if self.clock_s.saturating_sub(self.last_interval_anchor_s) >= self.policy.interval_s {
            let _ = anchor_now(&self.chain, &mut self.stub, self.clock_s, AnchorReason::Interval);
            self.last_interval_anchor_s = self.clock_s;
        }
    }

    /// Verifies and attaches one telemetry record, checkpointing on the
    /// configured cadence. Returns the attached message id.
    pub fn ingest(&mut self, record: IngestRecord) -> Result<Digest, LiveError> {
        if !record.verify_signature() {
            return Err(LiveError::BadRecord("device signature invalid".into()));
        }
        self.clock_s = self.clock_s.max(record.ts);
        let (a, b) = self
            .tangle
            .select_tips(&mut self.tip_rng)
            .map_err(|e| LiveError::BadRecord(e.to_string()))?;
        let msg = record
            .into_message([a, b])
            .map_err(|e| LiveError::BadRecord(e.to_string()))?;
        let id = msg.id;
        self.tangle
            .attach(msg)
            .map_err(|e| LiveError::BadRecord(e.to_string()))?;
        self.since_checkpoint += 1;
        if self.since_checkpoint >= self.checkpoint_max_batch
            || (self.clock_s.saturating_sub(self.last_checkpoint_s) >= self.checkpoint_max_age_s
                && self.tangle.unconfirmed_count() > 0
                && self.since_checkpoint > 0)
        {
            self.checkpoint_now()?;
        }
        Ok(id)
    }

    fn checkpoint_now(&mut self) -> Result<(), LiveError> {
        let (_, batch) = self
            .tangle
            .issue_checkpoint(&self.coordinator, self.clock_s, &mut self.tip_rng)
            .map_err(|e| LiveError::Internal(e.to_string()))?;
        let tx = summarize_batch(&batch, &self.coordinator, self.next_nonce)
            .map_err(|e| LiveError::Internal(e.to_string()))?;
        self.next_nonce += 1;
        self.since_checkpoint = 0;
        self.last_checkpoint_s = self.clock_s;
        self.submit_tx(tx)?;
        Ok(())
    }
}
