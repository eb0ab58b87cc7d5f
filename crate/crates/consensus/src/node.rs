//! The per-node consensus state machine.
//!
//! Nodes are pure (state, message) -> (state, outbox) functions over
//! simulated time, so the simulator and the live gateway drive the same
//! code. A node's effective kind always comes from the permissioning
//! registry at its own chain head.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use trellis_contracts::{Host, NodeKind};
use trellis_ledger::{
    quorum, Address, Block, Chain, Digest, KeyPair, Signature, StateMachine, Transaction, Vote,
};

/// Cap on blocks served per sync response; laggards re-request.
const SYNC_BATCH: u64 = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("validator set is empty")]
    EmptyValidatorSet,
}

/// Round-robin proposer: `validators[height mod n]`. The set must be sorted
/// ascending by address bytes, which the registry guarantees.
pub fn select_proposer(height: u64, validators: &[Address]) -> Result<Address, SelectError> {
    if validators.is_empty() {
        return Err(SelectError::EmptyValidatorSet);
    }
    Ok(validators[(height % validators.len() as u64) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Node(Address),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessagePayload {
    Propose { block: Block },
    Vote { height: u64, digest: Digest, signature: Signature },
    Commit { block: Block },
    TxGossip { tx: Transaction },
    SyncRequest { from_height: u64 },
    SyncResponse { blocks: Vec<Block> },
}

impl MessagePayload {
    pub fn kind(&self) -> &'static str {
        match self {
            MessagePayload::Propose { .. } => "propose",
            MessagePayload::Vote { .. } => "vote",
            MessagePayload::Commit { .. } => "commit",
            MessagePayload::TxGossip { .. } => "tx_gossip",
            MessagePayload::SyncRequest { .. } => "sync_request",
            MessagePayload::SyncResponse { .. } => "sync_response",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetMessage {
    pub from: Address,
    pub to: Recipient,
    pub payload: MessagePayload,
}

impl NetMessage {
    fn to_node(from: Address, to: Address, payload: MessagePayload) -> NetMessage {
        NetMessage { from, to: Recipient::Node(to), payload }
    }

    fn broadcast(from: Address, payload: MessagePayload) -> NetMessage {
        NetMessage { from, to: Recipient::Broadcast, payload }
    }
}

/// Counters for dropped or rejected traffic; diagnostics, not state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub not_enrolled: u64,
    pub rejected_proposals: u64,
    pub stale: u64,
    pub bad_votes: u64,
    pub failed_appends: u64,
}

#[derive(Debug, Clone)]
struct PendingProposal {
    block: Block,
    digest: Digest,
    votes: BTreeMap<Address, Signature>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    key: KeyPair,
    pub chain: Chain<Host>,
    mempool: BTreeMap<(u64, Digest), Transaction>,
    mempool_ids: HashMap<Digest, u64>,
    committed_ids: HashSet<Digest>,
    pending: Option<PendingProposal>,
    voted: BTreeMap<u64, Digest>,
    buffered: BTreeMap<u64, Block>,
    last_tick_height: u64,
    pub counters: Counters,
}

impl NodeState {
    pub fn new(key: KeyPair, genesis_chain: Chain<Host>) -> NodeState {
        let committed_ids = genesis_chain
            .blocks()
            .iter()
            .flat_map(|b| b.txs.iter().map(|tx| tx.id))
            .collect();
        NodeState {
            key,
            chain: genesis_chain,
            mempool: BTreeMap::new(),
            mempool_ids: HashMap::new(),
            committed_ids,
            pending: None,
            voted: BTreeMap::new(),
            buffered: BTreeMap::new(),
            last_tick_height: 0,
            counters: Counters::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.key.address
    }

    /// Effective kind per the registry at the chain head.
    pub fn kind(&self) -> Option<NodeKind> {
        self.chain.state().perms.node_kind(&self.key.address)
    }

    pub fn is_validator(&self) -> bool {
        self.kind() == Some(NodeKind::Validator)
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    fn enrolled(&self, addr: &Address) -> bool {
        self.chain.state().perms.is_enrolled(addr)
    }

    /// Accepts an externally submitted transaction into the mempool and
    /// gossips it to the network.
    pub fn submit_tx(&mut self, tx: Transaction, now_ms: u64) -> Vec<NetMessage> {
        if self.add_tx(tx.clone(), now_ms) {
            vec![NetMessage::broadcast(
                self.key.address,
                MessagePayload::TxGossip { tx },
            )]
        } else {
            vec![]
        }
    }

    fn add_tx(&mut self, tx: Transaction, now_ms: u64) -> bool {
        if tx.verify().is_err()
            || self.committed_ids.contains(&tx.id)
            || self.mempool_ids.contains_key(&tx.id)
        {
            return false;
        }
        self.mempool_ids.insert(tx.id, now_ms);
        self.mempool.insert((now_ms, tx.id), tx);
        true
    }

    /// Interval tick: if this node is the validator scheduled for the next
    /// height, (re)broadcast its proposal. The proposal is cached per height
    /// and re-sent verbatim on retries, so validators that already voted for
    /// it can vote again.
    pub fn handle_tick(&mut self, now_s: u64) -> Vec<NetMessage> {
        let head = self.chain.height();
        let stalled = head == self.last_tick_height;
        self.last_tick_height = head;
        let validators = self.chain.state().validator_set();
        let next = head + 1;
        let proposing = self.is_validator()
            && select_proposer(next, &validators).ok() == Some(self.key.address);
        if !proposing {
            // a node that saw no commit since its last tick may have been
            // cut off; ask the network for anything newer. Peers at the
            // same height stay silent, so healthy runs send nothing.
            if stalled {
                return vec![NetMessage::broadcast(
                    self.key.address,
                    MessagePayload::SyncRequest { from_height: next },
                )];
            }
            return vec![];
        }
        if self
            .pending
            .as_ref()
            .is_none_or(|p| p.block.height != next)
        {
            let txs: Vec<Transaction> = self.mempool.values().cloned().collect();
            let (state_digest, _) = self.chain.preview(&txs, now_s);
            let block = Block {
                height: next,
                parent: self.chain.latest().digest(),
                timestamp: now_s,
                proposer: self.key.address,
                txs,
                state_digest,
                votes: vec![],
            };
            let digest = block.digest();
            let mut votes = BTreeMap::new();
            votes.insert(self.key.address, self.key.sign_digest(&digest));
            self.voted.insert(next, digest);
            self.pending = Some(PendingProposal { block, digest, votes });
        }
        let pending = self.pending.as_ref().expect("just ensured");
        let mut out = vec![NetMessage::broadcast(
            self.key.address,
            MessagePayload::Propose { block: pending.block.clone() },
        )];
        // single-validator networks commit immediately
        out.extend(self.try_commit(&validators));
        out
    }

    pub fn handle_message(&mut self, msg: &NetMessage, _now_ms: u64) -> Vec<NetMessage> {
        if !self.enrolled(&msg.from) {
            self.counters.not_enrolled += 1;
            return vec![];
        }
        match &msg.payload {
            MessagePayload::Propose { block } => self.on_propose(msg.from, block),
            MessagePayload::Vote { height, digest, signature } => {
                self.on_vote(msg.from, *height, *digest, *signature)
            }
            MessagePayload::Commit { block } => self.on_commit(msg.from, block.clone()),
            MessagePayload::TxGossip { tx } => {
                self.add_tx(tx.clone(), _now_ms);
                vec![]
            }
            MessagePayload::SyncRequest { from_height } => self.on_sync_request(msg.from, *from_height),
            MessagePayload::SyncResponse { blocks } => self.on_sync_response(blocks.clone()),
        }
    }

    fn on_propose(&mut self, from: Address, block: &Block) -> Vec<NetMessage> {
        let head = self.chain.height();
        let h = block.height;
        if h <= head {
            // stale proposal: the proposer is behind; serve it the committed
            // blocks from its height onward
            self.counters.stale += 1;
            return self.serve_blocks(from, h);
        }
        if h > head + 1 {
            return vec![NetMessage::to_node(
                self.key.address,
                from,
                MessagePayload::SyncRequest { from_height: head + 1 },
            )];
        }
        if !self.is_validator() {
            return vec![];
        }
        let validators = self.chain.state().validator_set();
        let expected = select_proposer(h, &validators).ok();
        if expected != Some(from) || block.proposer != from {
            self.counters.rejected_proposals += 1;
            return vec![];
        }
        let digest = block.digest();
        if let Some(prev) = self.voted.get(&h) {
            if *prev != digest {
                // vote-once rule: never endorse a second block at a height
                self.counters.rejected_proposals += 1;
                return vec![];
            }
        } else {
            if !self.validate_proposal(block) {
                self.counters.rejected_proposals += 1;
                return vec![];
            }
            self.voted.insert(h, digest);
        }
        vec![NetMessage::to_node(
            self.key.address,
            from,
            MessagePayload::Vote {
                height: h,
                digest,
                signature: self.key.sign_digest(&digest),
            },
        )]
    }

    fn validate_proposal(&self, block: &Block) -> bool {
        if block.parent != self.chain.latest().digest() {
            return false;
        }
        if block.txs.iter().any(|tx| tx.verify().is_err()) {
            return false;
        }
        let (state_digest, _) = self.chain.preview(&block.txs, block.timestamp);
        state_digest == block.state_digest
    }

    fn on_vote(
        &mut self,
        from: Address,
        height: u64,
        digest: Digest,
        signature: Signature,
    ) -> Vec<NetMessage> {
        if height <= self.chain.height() {
            self.counters.stale += 1;
            return vec![];
        }
        let validators = self.chain.state().validator_set();
        let Some(pending) = self.pending.as_mut() else {
            return vec![];
        };
        if pending.block.height != height || pending.digest != digest {
            self.counters.bad_votes += 1;
            return vec![];
        }
        if !validators.contains(&from) || !signature.verify(&from, &digest.0) {
            self.counters.bad_votes += 1;
            return vec![];
        }
        pending.votes.insert(from, signature);
        self.try_commit(&validators)
    }

    /// If the pending proposal has reached quorum, append it locally and
    /// broadcast the commit carrying the vote set.
    fn try_commit(&mut self, validators: &[Address]) -> Vec<NetMessage> {
        let Some(pending) = self.pending.as_ref() else {
            return vec![];
        };
        if pending.votes.len() < quorum(validators.len()) {
            return vec![];
        }
        let mut block = pending.block.clone();
        block.votes = pending
            .votes
            .iter()
            .map(|(voter, sig)| Vote { voter: *voter, signature: *sig })
            .collect();
        match self.apply_committed(block.clone()) {
            Ok(()) => {
                self.pending = None;
                vec![NetMessage::broadcast(
                    self.key.address,
                    MessagePayload::Commit { block },
                )]
            }
            Err(_) => {
                self.counters.failed_appends += 1;
                self.pending = None;
                vec![]
            }
        }
    }

    fn on_commit(&mut self, from: Address, block: Block) -> Vec<NetMessage> {
        let head = self.chain.height();
        let h = block.height;
        if h <= head {
            self.counters.stale += 1;
            return vec![];
        }
        if h > head + 1 {
            self.buffered.insert(h, block);
            return vec![NetMessage::to_node(
                self.key.address,
                from,
                MessagePayload::SyncRequest { from_height: head + 1 },
            )];
        }
        if self.apply_committed(block).is_err() {
            self.counters.failed_appends += 1;
        }
        vec![]
    }

    fn on_sync_request(&mut self, from: Address, from_height: u64) -> Vec<NetMessage> {
        vec![self.serve_blocks_msg(from, from_height)]
            .into_iter()
            .flatten()
            .collect()
    }

    fn serve_blocks(&self, to: Address, from_height: u64) -> Vec<NetMessage> {
        self.serve_blocks_msg(to, from_height).into_iter().collect()
    }

    fn serve_blocks_msg(&self, to: Address, from_height: u64) -> Option<NetMessage> {
        let head = self.chain.height();
        if from_height > head {
            return None;
        }
        let end = head.min(from_height + SYNC_BATCH - 1);
        let blocks: Vec<Block> = (from_height..=end)
            .filter_map(|h| self.chain.block_at(h).cloned())
            .collect();
        Some(NetMessage::to_node(
            self.key.address,
            to,
            MessagePayload::SyncResponse { blocks },
        ))
    }

    fn on_sync_response(&mut self, blocks: Vec<Block>) -> Vec<NetMessage> {
        for block in blocks {
            let head = self.chain.height();
            if block.height <= head {
                continue;
            }
            if block.height > head + 1 {
                self.buffered.insert(block.height, block);
                continue;
            }
            if self.apply_committed(block).is_err() {
                self.counters.failed_appends += 1;
                break;
            }
        }
        vec![]
    }

    /// Full verification (votes, signatures, state replay) and append,
    /// followed by bookkeeping: mempool cleanup, vote pruning, buffered
    /// successors.
    fn apply_committed(&mut self, block: Block) -> Result<(), trellis_ledger::ChainError> {
        self.chain.append_block(block)?;
        let head = self.chain.height();
        let committed: Vec<Digest> = self.chain.latest().txs.iter().map(|tx| tx.id).collect();
        for id in committed {
            self.committed_ids.insert(id);
            if let Some(arrival) = self.mempool_ids.remove(&id) {
                self.mempool.remove(&(arrival, id));
            }
        }
        self.voted = self.voted.split_off(&(head + 1));
        if self
            .pending
            .as_ref()
            .is_some_and(|p| p.block.height <= head)
        {
            self.pending = None;
        }
        while let Some(next) = self.buffered.remove(&(self.chain.height() + 1)) {
            if self.apply_committed_inner(next).is_err() {
                break;
            }
        }
        self.buffered = self.buffered.split_off(&(self.chain.height() + 1));
        Ok(())
    }

    fn apply_committed_inner(&mut self, block: Block) -> Result<(), trellis_ledger::ChainError> {
        self.apply_committed(block)
    }
}
