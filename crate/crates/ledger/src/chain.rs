//! The append-only hash-chained block structure.
//!
//! A [`Chain`] is generic over a [`StateMachine`], the deterministic executor
//! that turns transactions into state. Appending a block re-executes its
//! transactions and insists the declared state digest matches; verifying a
//! chain replays everything from genesis. Contract-level failures are not
//! chain failures: they come back inside receipts and the block still
//! commits.
//!
//! Chains persist as newline-delimited canonical JSON, one block per line.
//! Receipts and state are never persisted; loading replays the blocks.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::block::{Block, Vote};
use crate::crypto::{Address, Digest, KeyPair};
use crate::encoding::{decode_value, ValueError};
use crate::tx::Transaction;

/// Deterministic transaction executor backing a chain.
pub trait StateMachine: Default + Clone {
    type Receipt: Clone;

    /// Applies one transaction. Contract errors are reported inside the
    /// receipt; this call itself cannot fail.
    fn apply_tx(&mut self, tx: &Transaction, height: u64, block_time: u64) -> Self::Receipt;

    /// Digest of the full state under the canonical encoding.
    fn digest(&self) -> Digest;

    /// Validator addresses in ascending byte order. Empty when the state
    /// machine keeps no validator registry, which disables vote checking.
    fn validator_set(&self) -> Vec<Address>;
}

/// Vote threshold for a validator set of size `n`: floor(2n/3) + 1.
pub fn quorum(n: usize) -> usize {
    2 * n / 3 + 1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("height {height}: parent digest does not match previous block")]
    BadParent { height: u64 },
    #[error("bad height: expected {expected}, got {got}")]
    BadHeight { expected: u64, got: u64 },
    #[error("height {height}: declared state digest {declared} but execution yields {computed}")]
    StateMismatch {
        height: u64,
        declared: Digest,
        computed: Digest,
    },
    #[error("height {height}: invalid signature on transaction {tx}")]
    InvalidTxSignature { height: u64, tx: Digest },
    #[error("height {height}: {have} valid votes, quorum is {need}")]
    QuorumNotMet { height: u64, have: usize, need: usize },
    #[error("height {height}: bad vote from {voter}: {reason}")]
    BadVote {
        height: u64,
        voter: Address,
        reason: &'static str,
    },
    #[error("bad genesis block: {0}")]
    BadGenesis(&'static str),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Decode(#[from] ValueError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("chain file is empty")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct Chain<S: StateMachine> {
    blocks: Vec<Block>,
    receipts: Vec<Vec<S::Receipt>>,
    state: S,
}

impl<S: StateMachine> Chain<S> {
    /// Starts a chain from its genesis block: height 0, all-zero parent,
    /// timestamp 0, no votes. The genesis transactions execute against the
    /// default (empty) state and must reproduce the declared state digest.
    pub fn from_genesis(genesis: Block) -> Result<Self, ChainError> {
        if genesis.height != 0 {
            return Err(ChainError::BadGenesis("height must be 0"));
        }
        if genesis.parent != Digest::ZERO {
            return Err(ChainError::BadGenesis("parent must be the zero digest"));
        }
        if genesis.timestamp != 0 {
            return Err(ChainError::BadGenesis("timestamp must be 0"));
        }
        if !genesis.votes.is_empty() {
            return Err(ChainError::BadGenesis("genesis carries no votes"));
        }
        let mut state = S::default();
        let receipts = execute_block(&mut state, &genesis)?;
        let computed = state.digest();
        if computed != genesis.state_digest {
            return Err(ChainError::StateMismatch {
                height: 0,
                declared: genesis.state_digest,
                computed,
            });
        }
        Ok(Chain {
            blocks: vec![genesis],
            receipts: vec![receipts],
            state,
        })
    }

    /// Appends a block after full verification: height, parent linkage,
    /// vote quorum against the pre-block validator set, transaction
    /// signatures, and state replay.
    pub fn append_block(&mut self, block: Block) -> Result<&[S::Receipt], ChainError> {
        let expected = self.height() + 1;
        if block.height != expected {
            return Err(ChainError::BadHeight { expected, got: block.height });
        }
        if block.parent != self.latest().digest() {
            return Err(ChainError::BadParent { height: block.height });
        }
        verify_block_votes(&block, &self.state.validator_set())?;
        let mut state = self.state.clone();
        let receipts = execute_block(&mut state, &block)?;
        let computed = state.digest();
        if computed != block.state_digest {
            return Err(ChainError::StateMismatch {
                height: block.height,
                declared: block.state_digest,
                computed,
            });
        }
        self.blocks.push(block);
        self.receipts.push(receipts);
        self.state = state;
        Ok(self.receipts.last().expect("just pushed").as_slice())
    }

    /// Replays a block list from genesis, verifying every block.
    pub fn replay(blocks: Vec<Block>) -> Result<Self, ChainError> {
        let mut iter = blocks.into_iter();
        let genesis = iter.next().ok_or(ChainError::BadGenesis("no blocks"))?;
        let mut chain = Chain::from_genesis(genesis)?;
        for block in iter {
            chain.append_block(block)?;
        }
        Ok(chain)
    }

    /// Verifies the whole chain from genesis. Reports the first failing
    /// height through the error variant.
    pub fn verify(&self) -> Result<(), ChainError> {
        Chain::<S>::replay(self.blocks.clone()).map(|_| ())
    }

    pub fn height(&self) -> u64 {
        (self.blocks.len() as u64) - 1
    }

    pub fn latest(&self) -> &Block {
        self.blocks.last().expect("chain is never empty")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn receipts_at(&self, height: u64) -> Option<&[S::Receipt]> {
        self.receipts.get(height as usize).map(|r| r.as_slice())
    }

    /// Locates a committed transaction by id.
    pub fn find_tx(&self, id: &Digest) -> Option<(u64, usize, &Transaction)> {
        for (h, block) in self.blocks.iter().enumerate() {
            for (i, tx) in block.txs.iter().enumerate() {
                if tx.id == *id {
                    return Some((h as u64, i, tx));
                }
            }
        }
        None
    }

    pub fn receipt_for(&self, id: &Digest) -> Option<&S::Receipt> {
        let (h, i, _) = self.find_tx(id)?;
        self.receipts.get(h as usize)?.get(i)
    }

    /// Executes candidate transactions on a copy of the current state,
    /// returning the resulting state digest and receipts. Used by proposers
    /// to fill in `state_digest` before sealing a block.
    pub fn preview(
        &self,
        txs: &[Transaction],
        timestamp: u64,
    ) -> (Digest, Vec<S::Receipt>) {
        let mut state = self.state.clone();
        let height = self.height() + 1;
        let receipts = txs
            .iter()
            .map(|tx| state.apply_tx(tx, height, timestamp))
            .collect();
        (state.digest(), receipts)
    }

    /// Builds, votes, and appends the next block in one step. Used by
    /// single-validator chains and tests; the consensus layer assembles
    /// blocks through the message flow instead.
    pub fn seal_next(
        &mut self,
        proposer: &KeyPair,
        voters: &[&KeyPair],
        txs: Vec<Transaction>,
        timestamp: u64,
    ) -> Result<&[S::Receipt], ChainError> {
        let (state_digest, _) = self.preview(&txs, timestamp);
        let mut block = Block {
            height: self.height() + 1,
            parent: self.latest().digest(),
            timestamp,
            proposer: proposer.address,
            txs,
            state_digest,
            votes: vec![],
        };
        let digest = block.digest();
        block.votes = voters.iter().map(|k| Vote::sign(k, &digest)).collect();
        block.normalize_votes();
        self.append_block(block)
    }

    /// Serializes the chain as newline-delimited canonical JSON blocks.
    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let bytes = crate::encoding::canonical_encode(&block.to_value())
                .expect("committed blocks contain no floats");
            out.extend_from_slice(&bytes);
            out.push(b'\n');
        }
        out
    }

    /// Loads and fully verifies a chain from its NDJSON serialization.
    pub fn from_ndjson(bytes: &[u8]) -> Result<Self, LoadError> {
        let mut blocks = Vec::new();
        for line in bytes.split(|b| *b == b'\n') {
            if line.is_empty() {
                continue;
            }
            blocks.push(Block::from_value(&decode_value(line)?)?);
        }
        if blocks.is_empty() {
            return Err(LoadError::Empty);
        }
        Ok(Chain::replay(blocks)?)
    }
}

fn execute_block<S: StateMachine>(
    state: &mut S,
    block: &Block,
) -> Result<Vec<S::Receipt>, ChainError> {
    for tx in &block.txs {
        if tx.verify().is_err() {
            return Err(ChainError::InvalidTxSignature {
                height: block.height,
                tx: tx.id,
            });
        }
    }
    Ok(block
        .txs
        .iter()
        .map(|tx| state.apply_tx(tx, block.height, block.timestamp))
        .collect())
}

/// Checks a block's vote set against the validator set in force before the
/// block: every vote from a distinct registered validator with a valid
/// signature over the block digest, and at least a quorum of them. An empty
/// validator set disables the check (registry-less state machines, genesis).
pub fn verify_block_votes(block: &Block, validators: &[Address]) -> Result<(), ChainError> {
    if validators.is_empty() {
        return Ok(());
    }
    let digest = block.digest();
    let mut seen: BTreeSet<Address> = BTreeSet::new();
    for vote in &block.votes {
        if !validators.contains(&vote.voter) {
            return Err(ChainError::BadVote {
                height: block.height,
                voter: vote.voter,
                reason: "not a registered validator",
            });
        }
        if !seen.insert(vote.voter) {
            return Err(ChainError::BadVote {
                height: block.height,
                voter: vote.voter,
                reason: "duplicate vote",
            });
        }
        if !vote.signature.verify(&vote.voter, &digest.0) {
            return Err(ChainError::BadVote {
                height: block.height,
                voter: vote.voter,
                reason: "signature does not verify",
            });
        }
    }
    let need = quorum(validators.len());
    if seen.len() < need {
        return Err(ChainError::QuorumNotMet {
            height: block.height,
            have: seen.len(),
            need,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Value;

    /// A minimal state machine: counts calls per method name; no validator
    /// registry, so vote checks are skipped.
    #[derive(Debug, Default, Clone)]
    struct Counter {
        calls: std::collections::BTreeMap<String, u64>,
    }

    impl StateMachine for Counter {
        type Receipt = String;

        fn apply_tx(&mut self, tx: &Transaction, _height: u64, _time: u64) -> String {
            *self.calls.entry(tx.method.clone()).or_insert(0) += 1;
            tx.method.clone()
        }

        fn digest(&self) -> Digest {
            let entries: Vec<(String, Value)> = self
                .calls
                .iter()
                .map(|(k, v)| (k.clone(), Value::from(*v)))
                .collect();
            Digest::of_value(&Value::map(entries)).unwrap()
        }

        fn validator_set(&self) -> Vec<Address> {
            vec![]
        }
    }

    fn genesis(key: &KeyPair) -> Block {
        let tx = Transaction::build(key, 0, "permissioning", "init", Value::Null).unwrap();
        let mut state = Counter::default();
        let receipt_state = {
            state.apply_tx(&tx, 0, 0);
            state.digest()
        };
        Block {
            height: 0,
            parent: Digest::ZERO,
            timestamp: 0,
            proposer: Address::ZERO,
            txs: vec![tx],
            state_digest: receipt_state,
            votes: vec![],
        }
    }

    #[test]
    fn quorum_thresholds() {
        assert_eq!(quorum(1), 1);
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(7), 5);
    }

    #[test]
    fn append_valid_block_extends_chain() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        chain.seal_next(&key, &[], vec![], 60).unwrap();
        assert_eq!(chain.blocks().len(), 2);
        chain.verify().unwrap();
    }

    #[test]
    fn flipped_parent_bit_is_bad_parent() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        let (state_digest, _) = chain.preview(&[], 60);
        let mut parent = chain.latest().digest();
        parent.0[0] ^= 1;
        let block = Block {
            height: 1,
            parent,
            timestamp: 60,
            proposer: key.address,
            txs: vec![],
            state_digest,
            votes: vec![],
        };
        assert_eq!(
            chain.append_block(block),
            Err(ChainError::BadParent { height: 1 })
        );
    }

    #[test]
    fn wrong_height_is_bad_height() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        let (state_digest, _) = chain.preview(&[], 60);
        let block = Block {
            height: 5,
            parent: chain.latest().digest(),
            timestamp: 60,
            proposer: key.address,
            txs: vec![],
            state_digest,
            votes: vec![],
        };
        assert_eq!(
            chain.append_block(block),
            Err(ChainError::BadHeight { expected: 1, got: 5 })
        );
    }

    #[test]
    fn wrong_state_digest_is_state_mismatch() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        let tx = Transaction::build(&key, 1, "c", "m", Value::Null).unwrap();
        let block = Block {
            height: 1,
            parent: chain.latest().digest(),
            timestamp: 60,
            proposer: key.address,
            txs: vec![tx],
            state_digest: Digest::of(b"not the real state"),
            votes: vec![],
        };
        assert!(matches!(
            chain.append_block(block),
            Err(ChainError::StateMismatch { height: 1, .. })
        ));
    }

    #[test]
    fn mutated_tx_fails_verification_at_its_height() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        for i in 0..5u64 {
            let tx = Transaction::build(&key, i + 1, "c", "m", Value::Null).unwrap();
            chain.seal_next(&key, &[], vec![tx], (i + 1) * 60).unwrap();
        }
        chain.verify().unwrap();
        let mut blocks = chain.blocks().to_vec();
        blocks[4].txs[0].args = Value::map([("tampered", true.into())]);
        let err = Chain::<Counter>::replay(blocks).unwrap_err();
        assert_eq!(err, ChainError::InvalidTxSignature { height: 4, tx: chain.blocks()[4].txs[0].id });
    }

    #[test]
    fn ndjson_round_trip_replays_identically() {
        let key = KeyPair::derive(1, "admin");
        let mut chain: Chain<Counter> = Chain::from_genesis(genesis(&key)).unwrap();
        for i in 0..3u64 {
            let tx = Transaction::build(&key, i + 1, "c", "m", Value::Null).unwrap();
            chain.seal_next(&key, &[], vec![tx], (i + 1) * 60).unwrap();
        }
        let bytes = chain.to_ndjson();
        let loaded = Chain::<Counter>::from_ndjson(&bytes).unwrap();
        assert_eq!(loaded.blocks(), chain.blocks());
        assert_eq!(loaded.state().digest(), chain.state().digest());
        assert_eq!(loaded.to_ndjson(), bytes);
    }

    #[test]
    fn genesis_shape_is_enforced() {
        let key = KeyPair::derive(1, "admin");
        let mut g = genesis(&key);
        g.timestamp = 5;
        assert!(matches!(
            Chain::<Counter>::from_genesis(g),
            Err(ChainError::BadGenesis(_))
        ));
    }
}
