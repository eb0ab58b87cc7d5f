//! Feeless DAG ledger for IoT telemetry.
//!
//! Devices sign records; the single-threaded ingest coordinator picks two
//! parents uniformly from the current tips and attaches. A coordinator
//! checkpoint is a message on the `checkpoint` topic that confirms every
//! not-yet-confirmed ancestor and defines a [`CertifiedBatch`]: the digest
//! over the sorted ids of exactly those messages, later certified on the
//! permissioned chain via `traceability.record_telemetry`.
//!
//! Nothing in this module debits any account; there are no fees anywhere.

pub mod dag;
pub mod message;
pub mod wire;

pub use dag::{Tangle, TangleError};
pub use message::{CertifiedBatch, Checkpoint, DagMessage};
pub use wire::IngestRecord;

use trellis_ledger::encoding::Value;
use trellis_ledger::{EncodeError, KeyPair, Transaction};

/// Builds the permissioned-chain transaction certifying a batch:
/// `traceability.record_telemetry`, signed by the coordinator.
pub fn summarize_batch(
    batch: &CertifiedBatch,
    coordinator: &KeyPair,
    nonce: u64,
) -> Result<Transaction, EncodeError> {
    Transaction::build(
        coordinator,
        nonce,
        "traceability",
        "record_telemetry",
        Value::map([
            ("batch_digest", batch.batch_digest.value()),
            ("count", batch.count.into()),
            ("t_max", batch.t_max.into()),
            ("t_min", batch.t_min.into()),
            (
                "topics",
                Value::list(batch.topics.iter().map(|t| t.as_str().into())),
            ),
        ]),
    )
}
