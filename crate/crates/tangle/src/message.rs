//! DAG message structure and signing.
//!
//! The id digests everything except the id and signature. Devices sign
//! before parents are chosen (the coordinator picks parents at attach time),
//! so the device signature covers the digest of {device, payload, topic, ts}
//! rather than the id.

use std::collections::BTreeSet;

use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::{Address, Digest, KeyPair, Signature};

#[derive(Debug, Clone, PartialEq)]
pub struct DagMessage {
    pub id: Digest,
    pub parents: [Digest; 2],
    /// Slash-separated topic, e.g. `vineyard/row3/temperature`.
    pub topic: String,
    /// Scaled-integer readings plus unit strings; floats cannot occur.
    pub payload: Value,
    pub device: Address,
    pub ts: u64,
    pub sig: Signature,
}

impl DagMessage {
    /// Digest the device actually signs: everything it knows before the
    /// coordinator picks parents.
    pub fn core_digest(
        device: &Address,
        payload: &Value,
        topic: &str,
        ts: u64,
    ) -> Result<Digest, trellis_ledger::EncodeError> {
        Digest::of_value(&Value::map([
            ("device", device.value()),
            ("payload", payload.clone()),
            ("topic", topic.into()),
            ("ts", ts.into()),
        ]))
    }

    pub fn id_preimage(&self) -> Value {
        Value::map([
            ("device", self.device.value()),
            (
                "parents",
                Value::list(self.parents.iter().map(|p| p.value())),
            ),
            ("payload", self.payload.clone()),
            ("topic", self.topic.as_str().into()),
            ("ts", self.ts.into()),
        ])
    }

    pub fn compute_id(&self) -> Result<Digest, trellis_ledger::EncodeError> {
        Digest::of_value(&self.id_preimage())
    }

    /// Builds a signed message once parents are known.
    pub fn build(
        key: &KeyPair,
        parents: [Digest; 2],
        topic: &str,
        payload: Value,
        ts: u64,
    ) -> Result<DagMessage, trellis_ledger::EncodeError> {
        let core = DagMessage::core_digest(&key.address, &payload, topic, ts)?;
        let mut msg = DagMessage {
            id: Digest::ZERO,
            parents,
            topic: topic.to_owned(),
            payload,
            device: key.address,
            ts,
            sig: key.sign_digest(&core),
        };
        msg.id = msg.compute_id()?;
        Ok(msg)
    }

    pub fn verify_signature(&self) -> bool {
        match DagMessage::core_digest(&self.device, &self.payload, &self.topic, self.ts) {
            Ok(core) => self.sig.verify(&self.device, &core.0),
            Err(_) => false,
        }
    }

    pub fn is_checkpoint(&self) -> bool {
        self.topic == "checkpoint"
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("device", self.device.value()),
            ("id", self.id.value()),
            (
                "parents",
                Value::list(self.parents.iter().map(|p| p.value())),
            ),
            ("payload", self.payload.clone()),
            ("sig", self.sig.value()),
            ("topic", self.topic.as_str().into()),
            ("ts", self.ts.into()),
        ])
    }

    pub fn from_value(value: &Value) -> Result<DagMessage, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "dag message",
            expected: "map",
        })?;
        let parents_list = encoding::field_list(m, "parents")?;
        if parents_list.len() != 2 {
            return Err(ValueError::Expected { field: "parents", expected: "exactly 2 digests" });
        }
        let parse_digest = |v: &Value| -> Result<Digest, ValueError> {
            Ok(Digest(
                encoding::bytes_like(v, "parent")?
                    .try_into()
                    .map_err(|_| ValueError::BadLength { field: "parent", expected: 32 })?,
            ))
        };
        Ok(DagMessage {
            id: Digest(encoding::field_hex(m, "id")?),
            parents: [parse_digest(&parents_list[0])?, parse_digest(&parents_list[1])?],
            topic: encoding::field_str(m, "topic")?.to_owned(),
            payload: encoding::field(m, "payload")?.clone(),
            device: Address(encoding::field_hex(m, "device")?),
            ts: encoding::field_u64(m, "ts")?,
            sig: Signature::from_bytes(&encoding::bytes_like(
                encoding::field(m, "sig")?,
                "sig",
            )?)?,
        })
    }
}

/// A checkpoint: the coordinator-signed DAG message that confirmed a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub message: DagMessage,
}

/// Summary of the messages confirmed by one checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertifiedBatch {
    /// Digest over the canonical sorted list of confirmed message ids.
    pub batch_digest: Digest,
    pub count: u64,
    pub t_min: u64,
    pub t_max: u64,
    pub topics: BTreeSet<String>,
}

impl CertifiedBatch {
    /// Builds the batch summary from the confirmed message set. Ids are
    /// sorted bytewise before digesting so any traversal order agrees.
    pub fn from_messages<'a>(
        messages: impl IntoIterator<Item = &'a DagMessage>,
    ) -> Option<CertifiedBatch> {
        let mut ids: Vec<Digest> = Vec::new();
        let mut t_min = u64::MAX;
        let mut t_max = 0u64;
        let mut topics = BTreeSet::new();
        for msg in messages {
            ids.push(msg.id);
            t_min = t_min.min(msg.ts);
            t_max = t_max.max(msg.ts);
            topics.insert(msg.topic.clone());
        }
        if ids.is_empty() {
            return None;
        }
        ids.sort();
        let batch_digest =
            Digest::of_value(&Value::list(ids.iter().map(|d| d.value())))
                .expect("ids contain no floats");
        Some(CertifiedBatch {
            batch_digest,
            count: ids.len() as u64,
            t_min,
            t_max,
            topics,
        })
    }
}
