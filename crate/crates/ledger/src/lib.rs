//! Core ledger primitives shared by every chain in the workspace: a canonical
//! deterministic encoding, content digests, Ed25519 keys and addresses,
//! signed contract-call transactions, and the append-only hash-chained block
//! structure with replay verification.
//!
//! Everything consensus-relevant goes through [`encoding::canonical_encode`],
//! so two nodes that agree on a value agree on its bytes and therefore on its
//! digest. Chains are generic over a [`chain::StateMachine`] so the same block
//! structure backs both the permissioned ledger and the public anchor chain.

pub mod block;
pub mod chain;
pub mod crypto;
pub mod encoding;
pub mod tx;

pub use block::{block_digest, Block, Vote};
pub use chain::{quorum, Chain, ChainError, LoadError, StateMachine};
pub use crypto::{Address, Digest, KeyPair, Signature};
pub use encoding::{canonical_encode, decode_value, EncodeError, Value, ValueError};
pub use tx::{Transaction, TxError};
