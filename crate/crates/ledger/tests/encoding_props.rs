//! Property tests for the canonical encoding and block digests.
//!
//! The encoder is checked two ways: determinism over random values, and
//! byte-equality against serde_json on the float-free, bytes-free subset
//! (serde_json with its default BTreeMap-backed maps already sorts keys and
//! writes compact output, so it is an independent reference for that subset).

use std::collections::BTreeMap;

use proptest::prelude::*;
use trellis_ledger::encoding::{canonical_encode, Value};
use trellis_ledger::{Block, Digest, KeyPair, Transaction};

fn arb_plain_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        "[a-zA-Z0-9 _/\\-\"\\\\\n\t\u{1}\u{7f}héß]{0,24}".prop_map(Value::Str),
    ];
    leaf.prop_recursive(3, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::List),
            prop::collection::btree_map("[a-z0-9_]{0,8}", inner, 0..6).prop_map(Value::Map),
        ]
    })
}

fn arb_value_with_bytes() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        "[a-z0-9 ]{0,16}".prop_map(Value::Str),
        prop::collection::vec(any::<u8>(), 0..32).prop_map(Value::Bytes),
    ];
    leaf.prop_recursive(3, 32, 5, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..5).prop_map(Value::List),
            prop::collection::btree_map("[a-z0-9_]{0,8}", inner, 0..5).prop_map(Value::Map),
        ]
    })
}

fn to_serde_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => serde_json::Value::Bool(*b),
        Value::Int(i) => serde_json::Value::from(*i),
        Value::Float(_) | Value::Bytes(_) => unreachable!("not part of the plain subset"),
        Value::Str(s) => serde_json::Value::String(s.clone()),
        Value::List(items) => serde_json::Value::Array(items.iter().map(to_serde_json).collect()),
        Value::Map(m) => serde_json::Value::Object(
            m.iter()
                .map(|(k, v)| (k.clone(), to_serde_json(v)))
                .collect(),
        ),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn encoding_is_deterministic(v in arb_value_with_bytes()) {
        let a = canonical_encode(&v).unwrap();
        let b = canonical_encode(&v).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn encoding_matches_serde_json_on_plain_subset(v in arb_plain_value()) {
        let ours = canonical_encode(&v).unwrap();
        let reference = serde_json::to_vec(&to_serde_json(&v)).unwrap();
        prop_assert_eq!(ours, reference);
    }

    #[test]
    fn decode_of_encode_is_stable(v in arb_value_with_bytes()) {
        let bytes = canonical_encode(&v).unwrap();
        let back = trellis_ledger::decode_value(&bytes).unwrap();
        prop_assert_eq!(canonical_encode(&back).unwrap(), bytes);
    }
}

fn sample_block() -> Block {
    let key = KeyPair::derive(42, "proposer");
    let txs: Vec<Transaction> = (0..3)
        .map(|i| {
            Transaction::build(
                &key,
                i,
                "traceability",
                "record_stage",
                Value::map([("lot_id", "wine-1".into()), ("seq", i.into())]),
            )
            .unwrap()
        })
        .collect();
    Block {
        height: 7,
        parent: Digest::of(b"parent"),
        timestamp: 420,
        proposer: key.address,
        txs,
        state_digest: Digest::of(b"state"),
        votes: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Mutating any digested field changes the block digest.
    #[test]
    fn single_field_mutation_changes_digest(
        which in 0usize..6,
        bump in 1u64..1_000,
        byte in 0usize..32,
        bit in 0u8..8,
    ) {
        let base = sample_block();
        let mut m = base.clone();
        match which {
            0 => m.height += bump,
            1 => m.parent.0[byte] ^= 1 << bit,
            2 => m.timestamp += bump,
            3 => m.proposer.0[byte % 20] ^= 1 << bit,
            4 => m.state_digest.0[byte] ^= 1 << bit,
            _ => {
                // mutate a transaction id inside the digested id list
                m.txs[(bump as usize) % 3].id.0[byte] ^= 1 << bit;
            }
        }
        prop_assert_ne!(base.digest(), m.digest());
    }
}

#[test]
fn repeated_encoding_of_committed_structures_is_stable() {
    let block = sample_block();
    let v = block.to_value();
    let a = canonical_encode(&v).unwrap();
    let b = canonical_encode(&block.to_value()).unwrap();
    assert_eq!(a, b);
}
