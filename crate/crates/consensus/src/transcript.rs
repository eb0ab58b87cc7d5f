//! Simulation transcripts: an ordered record of every delivery, drop,
//! commit, and external event, emitted as newline-delimited canonical JSON.
//! Identical (config, scenario) pairs produce byte-identical transcripts.

use trellis_ledger::encoding::Value;
use trellis_ledger::{canonical_encode, Address, Digest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub t_ms: u64,
    pub node: Address,
    pub height: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, Default)]
pub struct Transcript {
    events: Vec<Value>,
    pub commits: Vec<CommitRecord>,
}

impl Transcript {
    pub fn push(&mut self, event: Value) {
        self.events.push(event);
    }

    pub fn push_commit(&mut self, t_ms: u64, node: Address, height: u64, digest: Digest) {
        self.events.push(Value::map([
            ("digest", digest.value()),
            ("event", "commit".into()),
            ("height", height.into()),
            ("node", node.value()),
            ("t", t_ms.into()),
        ]));
        self.commits.push(CommitRecord { t_ms, node, height, digest });
    }

    pub fn events(&self) -> &[Value] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for event in &self.events {
            out.extend_from_slice(&canonical_encode(event).expect("events contain no floats"));
            out.push(b'\n');
        }
        out
    }
}
