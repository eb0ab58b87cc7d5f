//! Anchoring the permissioned chain onto a public chain.
//!
//! An anchor commits the digest of the source chain's latest block into the
//! anchor registry contract on the public-chain stub, either on a fixed
//! interval (default one simulated day) or when a triggering event fires
//! (stage completion). The stub is a real single-validator chain running the
//! same block structure, so anchors are ordinary signed transactions and the
//! registry state replays like any other contract.
//!
//! Verification recomputes the source chain's digest chain transitively
//! from genesis, substituting each recomputed parent, so a mutation at any
//! anchored-or-earlier height disagrees with every anchor at or after it.

use std::collections::BTreeSet;

use thiserror::Error;

use trellis_contracts::{stub_acl, AnchorReason, AnchorRecordData, GenesisSpec, Host, NodeKind};
use trellis_ledger::{Block, Chain, Digest, KeyPair, Transaction};

pub use trellis_contracts::anchor_registry::RecordOutcome;

/// Default anchoring interval: 24 simulated hours.
pub const DEFAULT_INTERVAL_S: u64 = 86_400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnchorError {
    /// The registry holds a different digest for this height: fork or
    /// tamper evidence.
    #[error("stub rejected anchor for height {height}")]
    StubRejected { height: u64 },
    #[error("anchor transaction failed: {0}")]
    TxFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPolicy {
    pub interval_s: u64,
    pub event_triggers: BTreeSet<String>,
}

impl Default for AnchorPolicy {
    fn default() -> AnchorPolicy {
        AnchorPolicy {
            interval_s: DEFAULT_INTERVAL_S,
            event_triggers: ["stage_completed".to_string()].into(),
        }
    }
}

/// True iff the interval elapsed or a pending event kind is a trigger.
pub fn should_anchor(policy: &AnchorPolicy, last_s: u64, now_s: u64, pending: &[&str]) -> bool {
    now_s.saturating_sub(last_s) >= policy.interval_s
        || pending.iter().any(|kind| policy.event_triggers.contains(*kind))
}

/// A record of one posted anchor, as returned to callers.
pub type AnchorRecord = AnchorRecordData;

/// The simulated public chain: one validator (the anchor service key), an
/// open deployer set, and the anchor registry contract.
#[derive(Debug, Clone)]
pub struct PublicChainStub {
    pub chain: Chain<Host>,
    key: KeyPair,
    next_nonce: u64,
    clock_s: u64,
}

impl PublicChainStub {
    pub fn new(chain_id: &str, anchor_key: &KeyPair, config_digest: Digest) -> PublicChainStub {
        let spec = GenesisSpec {
            chain_id: chain_id.to_owned(),
            admins: vec![anchor_key.address],
            nodes: vec![(anchor_key.address, NodeKind::Validator)],
            deployers: vec![],
            role_bindings: vec![(anchor_key.address, "baas_provider".into())],
            vocabulary: vec!["baas_provider".into()],
            acl: stub_acl(),
            schedules: Default::default(),
            contracts: vec!["anchor_registry".into(), "host".into()],
            open_deployers: true,
            config_digest,
        };
        PublicChainStub {
            chain: spec.build_chain(anchor_key),
            key: anchor_key.clone(),
            next_nonce: 1,
            clock_s: 0,
        }
    }

    /// Reloads a stub from its persisted chain. The key must match the
    /// stub's registered validator for further writes; read-only uses
    /// (verification) never sign.
    pub fn from_chain(chain: Chain<Host>, key: KeyPair) -> PublicChainStub {
        let clock_s = chain.latest().timestamp;
        let next_nonce = chain
            .blocks()
            .iter()
            .flat_map(|b| b.txs.iter())
            .filter(|tx| tx.sender == key.address)
            .count() as u64;
        PublicChainStub { chain, key, next_nonce, clock_s }
    }

    pub fn registry(&self) -> &trellis_contracts::AnchorRegistryState {
        &self.chain.state().anchors
    }

    /// Submits one anchor record as a signed transaction in its own block.
    pub fn submit(&mut self, record: AnchorRecordData, now_s: u64) -> Result<RecordOutcome, AnchorError> {
        let tx = Transaction::build(
            &self.key,
            self.next_nonce,
            "anchor_registry",
            "record_anchor",
            record.to_value(),
        )
        .map_err(|e| AnchorError::TxFailed(e.to_string()))?;
        self.next_nonce += 1;
        // the stub's own clock never runs backwards even if the source
        // chain's simulated time lags a previous submission
        self.clock_s = self.clock_s.max(now_s).max(self.chain.latest().timestamp + 1);
        let key = self.key.clone();
        let tx_id = tx.id;
        self.chain
            .seal_next(&key, &[&key], vec![tx], self.clock_s)
            .map_err(|e| AnchorError::TxFailed(e.to_string()))?;
        let receipt = self.chain.receipt_for(&tx_id).expect("just committed");
        match &receipt.result {
            Ok(v) if v.as_str() == Some("duplicate") => Ok(RecordOutcome::Duplicate),
            Ok(_) => Ok(RecordOutcome::Stored),
            Err(e) if e.code() == "AnchorConflict" => {
                Err(AnchorError::StubRejected { height: record.height })
            }
            Err(e) => Err(AnchorError::TxFailed(e.to_string())),
        }
    }
}

/// Builds and posts the anchor record for a known (height, digest) pair.
/// Used by services that track the source chain head incrementally.
pub fn anchor_block_ref(
    stub: &mut PublicChainStub,
    source_chain: &str,
    height: u64,
    digest: Digest,
    now_s: u64,
    reason: AnchorReason,
) -> Result<AnchorRecord, AnchorError> {
    let record = AnchorRecordData {
        source_chain: source_chain.to_owned(),
        height,
        digest,
        anchored_at: now_s,
        reason,
    };
    stub.submit(record.clone(), now_s)?;
    Ok(record)
}

/// Anchors the source chain's latest committed block.
pub fn anchor_now(
    source: &Chain<Host>,
    stub: &mut PublicChainStub,
    now_s: u64,
    reason: AnchorReason,
) -> Result<AnchorRecord, AnchorError> {
    let latest = source.latest();
    anchor_block_ref(
        stub,
        &source.state().chain_id,
        latest.height,
        latest.digest(),
        now_s,
        reason,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Verified,
    /// Smallest anchored height whose recomputed digest disagrees.
    Mismatch(u64),
    NoAnchors,
}

/// Recomputed digest chain for the blocks of a possibly tampered chain.
///
/// Each block's digest is recomputed over its own content: transaction ids
/// are re-derived from the call fields and the parent is replaced by the
/// previous recomputed digest, so a mutation anywhere in digested content
/// propagates to every later digest. Fields outside any digest preimage
/// (transaction and vote signatures) cannot propagate, so signature checks
/// mark the first internally inconsistent height instead.
fn recomputed_digests(blocks: &[Block]) -> (Vec<Digest>, Option<u64>) {
    let mut out = Vec::with_capacity(blocks.len());
    let mut broken: Option<u64> = None;
    let mut parent = Digest::ZERO;
    for (h, block) in blocks.iter().enumerate() {
        let mut mark = |broken: &mut Option<u64>| {
            if broken.is_none() {
                *broken = Some(h as u64);
            }
        };
        let mut b = block.clone();
        b.parent = parent;
        for tx in &mut b.txs {
            match Transaction::compute_id(&tx.sender, tx.nonce, &tx.contract, &tx.method, &tx.args)
            {
                Ok(id) => {
                    if id != tx.id {
                        mark(&mut broken);
                    }
                    tx.id = id;
                }
                Err(_) => mark(&mut broken),
            }
            if !tx.signature.verify(&tx.sender, &tx.id.0) {
                mark(&mut broken);
            }
        }
        let d = b.digest();
        for vote in &b.votes {
            if !vote.signature.verify(&vote.voter, &d.0) {
                mark(&mut broken);
            }
        }
        out.push(d);
        parent = d;
    }
    (out, broken)
}

/// Compares every anchor for this source chain against the local blocks.
pub fn verify_anchor(stub: &PublicChainStub, local: &Chain<Host>) -> VerifyOutcome {
    verify_anchor_blocks(stub, &local.state().chain_id, local.blocks())
}

/// Same check over a raw block list (so tampered files that no longer
/// replay can still be audited).
pub fn verify_anchor_blocks(
    stub: &PublicChainStub,
    source_chain: &str,
    blocks: &[Block],
) -> VerifyOutcome {
    let mut anchored: Vec<&AnchorRecordData> = stub.registry().for_source(source_chain).collect();
    if anchored.is_empty() {
        return VerifyOutcome::NoAnchors;
    }
    anchored.sort_by_key(|r| r.height);
    let (digests, broken) = recomputed_digests(blocks);
    for record in anchored {
        let content_ok = broken.is_none_or(|b| record.height < b);
        match digests.get(record.height as usize) {
            Some(d) if *d == record.digest && content_ok => {}
            _ => return VerifyOutcome::Mismatch(record.height),
        }
    }
    VerifyOutcome::Verified
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use trellis_contracts::default_acl;
    use trellis_ledger::encoding::Value;

    fn policy() -> AnchorPolicy {
        AnchorPolicy::default()
    }

    #[test]
    fn interval_elapse_triggers() {
        assert!(should_anchor(&policy(), 0, 86_400, &[]));
    }

    #[test]
    fn stage_event_triggers_early() {
        assert!(should_anchor(&policy(), 0, 3_600, &["stage_completed"]));
    }

    #[test]
    fn nothing_pending_before_interval_does_not_trigger() {
        assert!(!should_anchor(&policy(), 0, 3_600, &[]));
        assert!(!should_anchor(&policy(), 0, 3_600, &["role_bound"]));
    }

    fn source_chain(seed: u64, blocks: u64) -> (Chain<Host>, KeyPair) {
        let admin = KeyPair::derive(seed, "admin");
        let validator = KeyPair::derive(seed, "v0");
        let spec = GenesisSpec {
            chain_id: "anchor-test-main".into(),
            admins: vec![admin.address],
            nodes: vec![(validator.address, NodeKind::Validator)],
            deployers: vec![],
            role_bindings: vec![(admin.address, "baas_provider".into())],
            vocabulary: vec!["baas_provider".into()],
            acl: default_acl(),
            schedules: BTreeMap::new(),
            contracts: vec!["permissioning".into(), "host".into()],
            open_deployers: false,
            config_digest: Digest::of(b"anchor-test"),
        };
        let mut chain = spec.build_chain(&admin);
        for i in 0..blocks {
            let tx = Transaction::build(
                &admin,
                i + 1,
                "permissioning",
                "enroll_node",
                Value::map([
                    ("node", KeyPair::derive(seed, &format!("n{i}")).address.value()),
                    ("kind", "simple".into()),
                ]),
            )
            .unwrap();
            chain.seal_next(&validator, &[&validator], vec![tx], (i + 1) * 60).unwrap();
        }
        (chain, admin)
    }

    fn stub(seed: u64) -> PublicChainStub {
        let key = KeyPair::derive(seed, "anchor-service");
        PublicChainStub::new("public-stub", &key, Digest::of(b"anchor-test"))
    }

    #[test]
    fn anchor_and_retrieve() {
        let (chain, _) = source_chain(31, 12);
        let mut stub = stub(31);
        let record = anchor_now(&chain, &mut stub, 86_400, AnchorReason::Interval).unwrap();
        assert_eq!(record.height, 12);
        let stored = stub.registry().get("anchor-test-main", 12).unwrap();
        assert_eq!(stored.digest, chain.latest().digest());
        stub.chain.verify().unwrap();
    }

    #[test]
    fn reanchor_same_digest_is_idempotent_and_conflict_rejected() {
        let (chain, _) = source_chain(32, 12);
        let mut stub = stub(32);
        anchor_now(&chain, &mut stub, 100, AnchorReason::Interval).unwrap();
        // identical digest: idempotent success, no duplicate row
        anchor_now(&chain, &mut stub, 200, AnchorReason::Interval).unwrap();
        assert_eq!(stub.registry().for_source("anchor-test-main").count(), 1);
        // different digest at the same height: rejected
        let err = anchor_block_ref(
            &mut stub,
            "anchor-test-main",
            12,
            Digest::of(b"forged"),
            300,
            AnchorReason::Interval,
        )
        .unwrap_err();
        assert_eq!(err, AnchorError::StubRejected { height: 12 });
    }

    #[test]
    fn untampered_chain_with_three_anchors_verifies() {
        let (chain, _) = source_chain(33, 12);
        let mut stub = stub(33);
        for h in [4u64, 8, 12] {
            let block = chain.block_at(h).unwrap();
            anchor_block_ref(
                &mut stub,
                "anchor-test-main",
                h,
                block.digest(),
                h * 100,
                AnchorReason::Interval,
            )
            .unwrap();
        }
        assert_eq!(verify_anchor(&stub, &chain), VerifyOutcome::Verified);
    }

    #[test]
    fn byte_flip_in_block_five_mismatches_smallest_anchor_at_or_after() {
        let (chain, _) = source_chain(34, 12);
        let mut stub = stub(34);
        for h in [3u64, 7, 11] {
            anchor_block_ref(
                &mut stub,
                "anchor-test-main",
                h,
                chain.block_at(h).unwrap().digest(),
                h * 100,
                AnchorReason::Interval,
            )
            .unwrap();
        }
        let mut blocks = chain.blocks().to_vec();
        // flip one byte inside a committed transaction of block 5
        blocks[5].txs[0].args = Value::map([("tampered", true.into())]);
        let outcome = verify_anchor_blocks(&stub, "anchor-test-main", &blocks);
        assert_eq!(outcome, VerifyOutcome::Mismatch(7));
        // anchors strictly before the mutation still match: an anchor at 3
        // alone would verify, which is why later anchors matter
        let early_only = {
            let key = KeyPair::derive(34, "anchor-service");
            let mut s = PublicChainStub::new("public-stub", &key, Digest::of(b"anchor-test"));
            anchor_block_ref(&mut s, "anchor-test-main", 3, chain.block_at(3).unwrap().digest(), 300, AnchorReason::Interval).unwrap();
            s
        };
        assert_eq!(
            verify_anchor_blocks(&early_only, "anchor-test-main", &blocks),
            VerifyOutcome::Verified
        );
    }

    #[test]
    fn truncated_chain_mismatches() {
        let (chain, _) = source_chain(35, 12);
        let mut stub = stub(35);
        anchor_now(&chain, &mut stub, 100, AnchorReason::Interval).unwrap();
        let blocks = chain.blocks()[..8].to_vec();
        assert_eq!(
            verify_anchor_blocks(&stub, "anchor-test-main", &blocks),
            VerifyOutcome::Mismatch(12)
        );
    }

    #[test]
    fn empty_registry_reports_no_anchors() {
        let (chain, _) = source_chain(36, 3);
        let stub = stub(36);
        assert_eq!(verify_anchor(&stub, &chain), VerifyOutcome::NoAnchors);
    }

    #[test]
    fn stage_completed_reason_round_trips_through_registry() {
        let (chain, _) = source_chain(37, 5);
        let mut stub = stub(37);
        let reason = AnchorReason::StageCompleted { lot: "wine-1".into(), stage: "bottling".into() };
        anchor_now(&chain, &mut stub, 500, reason.clone()).unwrap();
        let stored = stub.registry().get("anchor-test-main", 5).unwrap();
        assert_eq!(stored.reason, reason);
        assert_eq!(stored.anchored_at, 500);
    }
}
