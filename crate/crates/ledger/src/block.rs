//! Blocks and their content digests.
//!
//! The block digest covers height, parent, proposer, state digest, timestamp,
//! and the transaction id list. Votes are excluded from the preimage: they
//! are signatures over that digest, collected after the block is built.

use crate::crypto::{Address, Digest, KeyPair, Signature};
use crate::encoding::{self, Value, ValueError};
use crate::tx::Transaction;

/// A validator's signature over a block digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub voter: Address,
    pub signature: Signature,
}

impl Vote {
    pub fn sign(key: &KeyPair, block: &Digest) -> Vote {
        Vote {
            voter: key.address,
            signature: key.sign_digest(block),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub parent: Digest,
    pub timestamp: u64,
    pub proposer: Address,
    pub txs: Vec<Transaction>,
    pub state_digest: Digest,
    /// Sorted ascending by voter address; empty for genesis.
    pub votes: Vec<Vote>,
}

impl Block {
    pub fn tx_ids(&self) -> Vec<Digest> {
        self.txs.iter().map(|tx| tx.id).collect()
    }

    pub fn digest_preimage(&self) -> Value {
        Value::map([
            ("height", self.height.into()),
            ("parent", self.parent.value()),
            ("proposer", self.proposer.value()),
            ("state_digest", self.state_digest.value()),
            ("timestamp", self.timestamp.into()),
            (
                "tx_ids",
                Value::list(self.tx_ids().iter().map(|d| d.value())),
            ),
        ])
    }

    /// SHA-256 over the canonical encoding of the digest preimage.
    pub fn digest(&self) -> Digest {
        Digest::of_value(&self.digest_preimage()).expect("digest preimage contains no floats")
    }

    /// Sorts votes by voter, dropping duplicate voters.
    pub fn normalize_votes(&mut self) {
        self.votes.sort_by(|a, b| a.voter.cmp(&b.voter));
        self.votes.dedup_by(|a, b| a.voter == b.voter);
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("height", self.height.into()),
            ("parent", self.parent.value()),
            ("proposer", self.proposer.value()),
            ("state_digest", self.state_digest.value()),
            ("timestamp", self.timestamp.into()),
            (
                "txs",
                Value::list(self.txs.iter().map(|tx| tx.to_value())),
            ),
            (
                "votes",
                Value::list(self.votes.iter().map(|v| {
                    Value::list([v.voter.value(), v.signature.value()])
                })),
            ),
        ])
    }

    pub fn from_value(value: &Value) -> Result<Block, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "block",
            expected: "map",
        })?;
        let txs = encoding::field_list(m, "txs")?
            .iter()
            .map(Transaction::from_value)
            .collect::<Result<Vec<_>, _>>()?;
        let mut votes = Vec::new();
        for entry in encoding::field_list(m, "votes")? {
            let pair = entry.as_list().ok_or(ValueError::Expected {
                field: "votes",
                expected: "[address, signature] pair",
            })?;
            if pair.len() != 2 {
                return Err(ValueError::Expected {
                    field: "votes",
                    expected: "[address, signature] pair",
                });
            }
            let voter_bytes = encoding::bytes_like(&pair[0], "voter")?;
            let voter = Address(voter_bytes.try_into().map_err(|_| ValueError::BadLength {
                field: "voter",
                expected: crate::crypto::ADDRESS_LEN,
            })?);
            let signature = Signature::from_bytes(&encoding::bytes_like(&pair[1], "vote signature")?)?;
            votes.push(Vote { voter, signature });
        }
        for pair in votes.windows(2) {
            if pair[0].voter >= pair[1].voter {
                return Err(ValueError::Invalid("votes not sorted by voter".into()));
            }
        }
        Ok(Block {
            height: encoding::field_u64(m, "height")?,
            parent: Digest(encoding::field_hex(m, "parent")?),
            timestamp: encoding::field_u64(m, "timestamp")?,
            proposer: Address(encoding::field_hex(m, "proposer")?),
            txs,
            state_digest: Digest(encoding::field_hex(m, "state_digest")?),
            votes,
        })
    }
}

/// Free-function alias for the block content digest.
pub fn block_digest(block: &Block) -> Digest {
    block.digest()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_block() -> Block {
        let key = KeyPair::derive(3, "proposer");
        let tx = Transaction::build(&key, 0, "c", "m", Value::Null).unwrap();
        Block {
            height: 1,
            parent: Digest::of(b"parent"),
            timestamp: 60,
            proposer: key.address,
            txs: vec![tx],
            state_digest: Digest::of(b"state"),
            votes: vec![],
        }
    }

    #[test]
    fn timestamp_changes_the_digest() {
        let a = sample_block();
        let mut b = a.clone();
        b.timestamp += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn votes_do_not_change_the_digest() {
        let a = sample_block();
        let mut b = a.clone();
        let voter = KeyPair::derive(3, "voter");
        b.votes.push(Vote::sign(&voter, &a.digest()));
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn value_round_trip() {
        let mut block = sample_block();
        let voter = KeyPair::derive(3, "voter");
        block.votes.push(Vote::sign(&voter, &block.digest()));
        block.normalize_votes();
        let back = Block::from_value(&block.to_value()).unwrap();
        assert_eq!(back, block);
    }

    #[test]
    fn unsorted_votes_are_rejected_on_decode() {
        let mut block = sample_block();
        let d = block.digest();
        let mut voters: Vec<KeyPair> = (0..2).map(|i| KeyPair::derive(3, &format!("v{i}"))).collect();
        voters.sort_by_key(|k| k.address);
        block.votes = vec![Vote::sign(&voters[1], &d), Vote::sign(&voters[0], &d)];
        let v = block.to_value();
        assert!(Block::from_value(&v).is_err());
    }
}
