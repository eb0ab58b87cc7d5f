//! Round-robin proof-of-authority consensus among registered validators,
//! plus a deterministic discrete-event simulator that runs whole networks
//! on a single thread.
//!
//! The proposer for height h is `validators[h mod n]` over the validator
//! set recorded in the permissioning registry after block h-1. One round
//! per height: the proposer broadcasts a proposal, validators verify and
//! vote once per height, and on reaching quorum (floor(2n/3)+1, including
//! its own vote) the proposer broadcasts a commit carrying the vote set.
//! There is no view change: a partitioned proposer stalls its height and
//! retries the identical proposal every interval until reconnection. Nodes
//! that fall behind catch up by requesting missing blocks from any peer
//! that shows them a newer height.
//!
//! Consensus never reads a wall clock; all time is simulated.

pub mod node;
pub mod sim;
pub mod transcript;

pub use node::{select_proposer, MessagePayload, NetMessage, NodeState, Recipient, SelectError};
pub use sim::{
    run_sim, ExternalEvent, PartitionRule, ServiceCtx, SimConfig, SimError, SimOutcome,
    SimService, TimedEvent,
};
pub use transcript::{CommitRecord, Transcript};

// The quorum rule lives beside the chain verifier; it is part of this
// crate's public surface.
pub use trellis_contracts::NodeKind;
pub use trellis_ledger::quorum;
