//! The anchor registry contract hosted on the public-chain stub.
//!
//! Records (source chain, height, digest) commitments in insertion order.
//! Re-anchoring the same height with the identical digest is an idempotent
//! success; a different digest for an already-anchored height is rejected as
//! fork or tamper evidence.

use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::Digest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorReason {
    Interval,
    StageCompleted { lot: String, stage: String },
}

impl AnchorReason {
    pub fn kind(&self) -> &'static str {
        match self {
            AnchorReason::Interval => "interval",
            AnchorReason::StageCompleted { .. } => "stage_completed",
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            AnchorReason::Interval => Value::map([("kind", "interval".into())]),
            AnchorReason::StageCompleted { lot, stage } => Value::map([
                ("kind", "stage_completed".into()),
                ("lot", lot.as_str().into()),
                ("stage", stage.as_str().into()),
            ]),
        }
    }

    pub fn from_value(value: &Value) -> Result<AnchorReason, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "reason",
            expected: "map",
        })?;
        match encoding::field_str(m, "kind")? {
            "interval" => Ok(AnchorReason::Interval),
            "stage_completed" => Ok(AnchorReason::StageCompleted {
                lot: encoding::field_str(m, "lot")?.to_owned(),
                stage: encoding::field_str(m, "stage")?.to_owned(),
            }),
            _ => Err(ValueError::Expected { field: "kind", expected: "interval|stage_completed" }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorRecordData {
    pub source_chain: String,
    pub height: u64,
    pub digest: Digest,
    pub anchored_at: u64,
    pub reason: AnchorReason,
}

impl AnchorRecordData {
    pub fn to_value(&self) -> Value {
        Value::map([
            ("anchored_at", self.anchored_at.into()),
            ("digest", self.digest.value()),
            ("height", self.height.into()),
            ("reason", self.reason.to_value()),
            ("source_chain", self.source_chain.as_str().into()),
        ])
    }

    pub fn from_value(value: &Value) -> Result<AnchorRecordData, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "anchor record",
            expected: "map",
        })?;
        Ok(AnchorRecordData {
            source_chain: encoding::field_str(m, "source_chain")?.to_owned(),
            height: encoding::field_u64(m, "height")?,
            digest: Digest(encoding::field_hex(m, "digest")?),
            anchored_at: encoding::field_u64(m, "anchored_at")?,
            reason: AnchorReason::from_value(encoding::field(m, "reason")?)?,
        })
    }
}

/// Outcome of a record call, distinguishing a fresh insert from an
/// idempotent duplicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorRegistryState {
    records: Vec<AnchorRecordData>,
}

impl AnchorRegistryState {
    /// Inserts an anchor record. Same (source, height) with identical digest
    /// is an idempotent success; a different digest conflicts.
    pub fn record(&mut self, record: AnchorRecordData) -> Result<RecordOutcome, u64> {
        if let Some(existing) = self.get(&record.source_chain, record.height) {
            return if existing.digest == record.digest {
                Ok(RecordOutcome::Duplicate)
            } else {
                Err(record.height)
            };
        }
        self.records.push(record);
        Ok(RecordOutcome::Stored)
    }

    pub fn get(&self, source_chain: &str, height: u64) -> Option<&AnchorRecordData> {
        self.records
            .iter()
            .find(|r| r.source_chain == source_chain && r.height == height)
    }

    /// Records for one source chain, in insertion order.
    pub fn for_source<'a>(
        &'a self,
        source_chain: &'a str,
    ) -> impl Iterator<Item = &'a AnchorRecordData> {
        self.records
            .iter()
            .filter(move |r| r.source_chain == source_chain)
    }

    pub fn all(&self) -> &[AnchorRecordData] {
        &self.records
    }

    pub fn to_value(&self) -> Value {
        Value::list(self.records.iter().map(|r| r.to_value()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(height: u64, digest: &[u8]) -> AnchorRecordData {
        AnchorRecordData {
            source_chain: "main".into(),
            height,
            digest: Digest::of(digest),
            anchored_at: 100,
            reason: AnchorReason::Interval,
        }
    }

    #[test]
    fn store_then_lookup() {
        let mut reg = AnchorRegistryState::default();
        assert_eq!(reg.record(record(12, b"d12")), Ok(RecordOutcome::Stored));
        assert_eq!(reg.get("main", 12).unwrap().digest, Digest::of(b"d12"));
    }

    #[test]
    fn idempotent_reanchor() {
        let mut reg = AnchorRegistryState::default();
        reg.record(record(12, b"d12")).unwrap();
        assert_eq!(reg.record(record(12, b"d12")), Ok(RecordOutcome::Duplicate));
        assert_eq!(reg.all().len(), 1);
    }

    #[test]
    fn conflicting_digest_is_rejected() {
        let mut reg = AnchorRegistryState::default();
        reg.record(record(12, b"d12")).unwrap();
        assert_eq!(reg.record(record(12, b"other")), Err(12));
    }

    #[test]
    fn insertion_order_is_preserved() {
        let mut reg = AnchorRegistryState::default();
        reg.record(record(5, b"a")).unwrap();
        reg.record(record(2, b"b")).unwrap();
        let heights: Vec<u64> = reg.for_source("main").map(|r| r.height).collect();
        assert_eq!(heights, vec![5, 2]);
    }
}
