//! Ingest wire protocol: newline-delimited JSON records
//! `{device, payload, sig, topic, ts}`.
//!
//! Topics follow the usual slash hierarchy (`vineyard/row3/temperature`)
//! without any broker in between; records arrive over HTTP or from replay
//! files. The device signature covers the core digest, so a record is
//! verifiable before the coordinator chooses parents.

use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::{Address, KeyPair, Signature};

use crate::message::DagMessage;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestRecord {
    pub topic: String,
    pub payload: Value,
    pub device: Address,
    pub ts: u64,
    pub sig: Signature,
}

impl IngestRecord {
    /// Builds and signs a record on the device side.
    pub fn build(
        device: &KeyPair,
        topic: &str,
        payload: Value,
        ts: u64,
    ) -> Result<IngestRecord, trellis_ledger::EncodeError> {
        let core = DagMessage::core_digest(&device.address, &payload, topic, ts)?;
        Ok(IngestRecord {
            topic: topic.to_owned(),
            payload,
            device: device.address,
            ts,
            sig: device.sign_digest(&core),
        })
    }

    pub fn verify_signature(&self) -> bool {
        match DagMessage::core_digest(&self.device, &self.payload, &self.topic, self.ts) {
            Ok(core) => self.sig.verify(&self.device, &core.0),
            Err(_) => false,
        }
    }

    /// Completes the record into a DAG message once parents are selected.
    pub fn into_message(
        self,
        parents: [trellis_ledger::Digest; 2],
    ) -> Result<DagMessage, trellis_ledger::EncodeError> {
        let mut msg = DagMessage {
            id: trellis_ledger::Digest::ZERO,
            parents,
            topic: self.topic,
            payload: self.payload,
            device: self.device,
            ts: self.ts,
            sig: self.sig,
        };
        msg.id = msg.compute_id()?;
        Ok(msg)
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("device", self.device.value()),
            ("payload", self.payload.clone()),
            ("sig", self.sig.value()),
            ("topic", self.topic.as_str().into()),
            ("ts", self.ts.into()),
        ])
    }

    pub fn from_value(value: &Value) -> Result<IngestRecord, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "ingest record",
            expected: "map",
        })?;
        Ok(IngestRecord {
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

    /// Parses one NDJSON line.
    pub fn from_line(line: &[u8]) -> Result<IngestRecord, ValueError> {
        IngestRecord::from_value(&trellis_ledger::decode_value(line)?)
    }

    pub fn to_line(&self) -> Vec<u8> {
        trellis_ledger::canonical_encode(&self.to_value()).expect("records contain no floats")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IngestRecord {
        let device = KeyPair::derive(6, "sensor");
        IngestRecord::build(
            &device,
            "greenhouse/humidity",
            Value::map([("rh_milli", Value::Int(55_000)), ("unit", "milli_percent".into())]),
            1234,
        )
        .unwrap()
    }

    #[test]
    fn line_round_trip_verifies() {
        let rec = sample();
        let line = rec.to_line();
        let back = IngestRecord::from_line(&line).unwrap();
        assert_eq!(back, rec);
        assert!(back.verify_signature());
    }

    #[test]
    fn tampered_payload_fails_verification() {
        let mut rec = sample();
        rec.payload = Value::map([("rh_milli", Value::Int(1))]);
        assert!(!rec.verify_signature());
    }

    #[test]
    fn float_payload_is_rejected_at_build() {
        let device = KeyPair::derive(6, "sensor");
        assert!(IngestRecord::build(
            &device,
            "greenhouse/humidity",
            Value::map([("rh", Value::Float(0.55))]),
            0,
        )
        .is_err());
    }
}
