//! The wine supply-chain traceability contract.
//!
//! Lots carry an append-only stage history driven by a per-product stage
//! schedule. Authorities certify stages; the latest Rejected verdict on any
//! stage blocks further stage recording until the same stage is later
//! Approved. Completed lots can be linked as components of other lots
//! (cork stoppers into a wine lot), and telemetry batch digests certified on
//! the DAG ledger are recorded once and referenced from stages.

use std::collections::BTreeSet;

use thiserror::Error;

use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::{Address, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("lot id already registered")]
    DuplicateLot,
    #[error("unknown lot")]
    UnknownLot,
    #[error("unknown stage")]
    UnknownStage,
    #[error("stage out of order: expected {expected}, got {got}")]
    OutOfOrderStage { expected: String, got: String },
    #[error("lot is blocked by a rejected certification")]
    LotBlocked,
    #[error("caller role does not own this lot")]
    NotOwner,
    #[error("component lot has not completed its final stage")]
    ComponentIncomplete,
    #[error("component link would create a cycle")]
    CycleDetected,
    #[error("telemetry batch already recorded")]
    DuplicateBatch,
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::DuplicateLot => "DuplicateLot",
            TraceError::UnknownLot => "UnknownLot",
            TraceError::UnknownStage => "UnknownStage",
            TraceError::OutOfOrderStage { .. } => "OutOfOrderStage",
            TraceError::LotBlocked => "LotBlocked",
            TraceError::NotOwner => "Unauthorized",
            TraceError::ComponentIncomplete => "ComponentIncomplete",
            TraceError::CycleDetected => "CycleDetected",
            TraceError::DuplicateBatch => "DuplicateBatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Approved,
    Rejected,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Approved => "approved",
            Verdict::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "approved" => Some(Verdict::Approved),
            "rejected" => Some(Verdict::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certification {
    pub authority: Address,
    pub verdict: Verdict,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRef {
    pub digest: Digest,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub name: String,
    pub actor: Address,
    pub ts: u64,
    pub batch_digest: Option<Digest>,
    pub documents: Vec<DocumentRef>,
    pub certifications: Vec<Certification>,
}

impl StageRecord {
    /// A stage blocks its lot while its most recent verdict is Rejected.
    fn blocking(&self) -> bool {
        matches!(
            self.certifications.last().map(|c| c.verdict),
            Some(Verdict::Rejected)
        )
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("actor", self.actor.value()),
            (
                "batch_digest",
                self.batch_digest.map(|d| d.value()).unwrap_or(Value::Null),
            ),
            (
                "certifications",
                Value::list(self.certifications.iter().map(|c| {
                    Value::map([
                        ("authority", c.authority.value()),
                        ("ts", c.ts.into()),
                        ("verdict", c.verdict.as_str().into()),
                    ])
                })),
            ),
            (
                "documents",
                Value::list(self.documents.iter().map(|d| {
                    Value::map([("digest", d.digest.value()), ("uri", d.uri.as_str().into())])
                })),
            ),
            ("name", self.name.as_str().into()),
            ("ts", self.ts.into()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LotState {
    pub product: String,
    pub owner_role: String,
    pub stages: Vec<StageRecord>,
    pub components: Vec<String>,
}

impl LotState {
    pub fn blocked(&self) -> bool {
        self.stages.iter().any(|s| s.blocking())
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            (
                "components",
                Value::list(self.components.iter().map(|c| c.as_str().into())),
            ),
            ("owner_role", self.owner_role.as_str().into()),
            ("product", self.product.as_str().into()),
            (
                "stages",
                Value::list(self.stages.iter().map(|s| s.to_value())),
            ),
        ])
    }
}

/// A certified telemetry batch reference recorded on the permissioned chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryRecord {
    pub batch_digest: Digest,
    pub count: u64,
    pub t_min: u64,
    pub t_max: u64,
    pub topics: BTreeSet<String>,
}

impl TelemetryRecord {
    pub fn to_value(&self) -> Value {
        Value::map([
            ("batch_digest", self.batch_digest.value()),
            ("count", self.count.into()),
            ("t_max", self.t_max.into()),
            ("t_min", self.t_min.into()),
            (
                "topics",
                Value::list(self.topics.iter().map(|t| t.as_str().into())),
            ),
        ])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceState {
    pub lots: std::collections::BTreeMap<String, LotState>,
    pub telemetry: Vec<TelemetryRecord>,
}

impl TraceState {
    pub fn register_lot(
        &mut self,
        caller_role: &str,
        lot_id: &str,
        product: &str,
    ) -> Result<(), TraceError> {
        if self.lots.contains_key(lot_id) {
            return Err(TraceError::DuplicateLot);
        }
        self.lots.insert(
            lot_id.to_owned(),
            LotState {
                product: product.to_owned(),
                owner_role: caller_role.to_owned(),
                stages: vec![],
                components: vec![],
            },
        );
        Ok(())
    }

    pub fn record_stage(
        &mut self,
        caller_role: &str,
        caller: Address,
        lot_id: &str,
        stage_name: &str,
        batch_digest: Option<Digest>,
        documents: Vec<DocumentRef>,
        schedule: Option<&[String]>,
        ts: u64,
    ) -> Result<(), TraceError> {
        let lot = self.lots.get_mut(lot_id).ok_or(TraceError::UnknownLot)?;
        if lot.owner_role != caller_role {
            return Err(TraceError::NotOwner);
        }
        if lot.blocked() {
            return Err(TraceError::LotBlocked);
        }
        let expected = schedule
            .and_then(|s| s.get(lot.stages.len()))
            .ok_or_else(|| TraceError::OutOfOrderStage {
                expected: "(no further stage in schedule)".to_owned(),
                got: stage_name.to_owned(),
            })?;
        if expected != stage_name {
            return Err(TraceError::OutOfOrderStage {
                expected: expected.clone(),
                got: stage_name.to_owned(),
            });
        }
        lot.stages.push(StageRecord {
            name: stage_name.to_owned(),
            actor: caller,
            ts,
            batch_digest,
            documents,
            certifications: vec![],
        });
        Ok(())
    }

    pub fn certify_stage(
        &mut self,
        authority: Address,
        lot_id: &str,
        stage_name: &str,
        verdict: Verdict,
        ts: u64,
    ) -> Result<(), TraceError> {
        let lot = self.lots.get_mut(lot_id).ok_or(TraceError::UnknownLot)?;
        let stage = lot
            .stages
            .iter_mut()
            .find(|s| s.name == stage_name)
            .ok_or(TraceError::UnknownStage)?;
        stage.certifications.push(Certification { authority, verdict, ts });
        Ok(())
    }

    pub fn link_component(
        &mut self,
        caller_role: &str,
        target_lot: &str,
        component_lot: &str,
        component_schedule: Option<&[String]>,
    ) -> Result<(), TraceError> {
        let target = self.lots.get(target_lot).ok_or(TraceError::UnknownLot)?;
        if target.owner_role != caller_role {
            return Err(TraceError::NotOwner);
        }
        let component = self.lots.get(component_lot).ok_or(TraceError::UnknownLot)?;
        if self.reaches(component_lot, target_lot) {
            return Err(TraceError::CycleDetected);
        }
        let schedule = component_schedule.ok_or(TraceError::ComponentIncomplete)?;
        if component.stages.len() < schedule.len() || schedule.is_empty() {
            return Err(TraceError::ComponentIncomplete);
        }
        self.lots
            .get_mut(target_lot)
            .expect("checked above")
            .components
            .push(component_lot.to_owned());
        Ok(())
    }

    /// True if `to` is reachable from `from` along component links.
    fn reaches(&self, from: &str, to: &str) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![from];
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(lot) = self.lots.get(id) {
                for c in &lot.components {
                    if c == to {
                        return true;
                    }
                    stack.push(c);
                }
            }
        }
        false
    }

    pub fn record_telemetry(&mut self, record: TelemetryRecord) -> Result<(), TraceError> {
        if self
            .telemetry
            .iter()
            .any(|r| r.batch_digest == record.batch_digest)
        {
            return Err(TraceError::DuplicateBatch);
        }
        self.telemetry.push(record);
        Ok(())
    }

    pub fn batch(&self, digest: &Digest) -> Option<&TelemetryRecord> {
        self.telemetry.iter().find(|r| r.batch_digest == *digest)
    }

    /// Read-only nested trace view: stages with certifications, documents,
    /// resolved telemetry batches, and recursive component traces.
    pub fn trace_view(&self, lot_id: &str) -> Result<Value, TraceError> {
        let mut seen = BTreeSet::new();
        self.trace_view_inner(lot_id, &mut seen)
    }

    fn trace_view_inner(
        &self,
        lot_id: &str,
        seen: &mut BTreeSet<String>,
    ) -> Result<Value, TraceError> {
        let lot = self.lots.get(lot_id).ok_or(TraceError::UnknownLot)?;
        seen.insert(lot_id.to_owned());
        let mut components = Vec::new();
        for c in &lot.components {
            if !seen.contains(c) {
                components.push(self.trace_view_inner(c, seen)?);
            }
        }
        let stages = lot.stages.iter().map(|s| {
            let mut m = match s.to_value() {
                Value::Map(m) => m,
                _ => unreachable!(),
            };
            let batch = s
                .batch_digest
                .as_ref()
                .and_then(|d| self.batch(d))
                .map(|b| b.to_value())
                .unwrap_or(Value::Null);
            m.insert("batch".into(), batch);
            Value::Map(m)
        });
        Ok(Value::map([
            ("blocked", lot.blocked().into()),
            ("components", Value::List(components)),
            ("lot_id", lot_id.into()),
            ("owner_role", lot.owner_role.as_str().into()),
            ("product", lot.product.as_str().into()),
            ("stages", Value::list(stages)),
        ]))
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            (
                "lots",
                Value::Map(
                    self.lots
                        .iter()
                        .map(|(id, lot)| (id.clone(), lot.to_value()))
                        .collect(),
                ),
            ),
            (
                "telemetry",
                Value::list(self.telemetry.iter().map(|t| t.to_value())),
            ),
        ])
    }
}

/// Parses a documents argument: a list of `{digest, uri}` maps.
pub fn parse_documents(value: &Value) -> Result<Vec<DocumentRef>, ValueError> {
    let items = value.as_list().ok_or(ValueError::Expected {
        field: "documents",
        expected: "list",
    })?;
    items
        .iter()
        .map(|item| {
            let m = item.as_map().ok_or(ValueError::Expected {
                field: "document",
                expected: "map",
            })?;
            Ok(DocumentRef {
                digest: Digest(encoding::field_hex(m, "digest")?),
                uri: encoding::field_str(m, "uri")?.to_owned(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use trellis_ledger::KeyPair;

    const WINE: &[&str] = &["cultivating", "harvesting", "fermenting", "aging", "bottling"];

    fn wine_schedule() -> Vec<String> {
        WINE.iter().map(|s| s.to_string()).collect()
    }

    fn addr(label: &str) -> Address {
        KeyPair::derive(3, label).address
    }

    fn producer_state() -> TraceState {
        let mut ts = TraceState::default();
        ts.register_lot("wine_producer", "wine-2024-001", "wine").unwrap();
        ts
    }

    #[test]
    fn stages_in_order_build_a_full_trace() {
        let mut state = producer_state();
        let schedule = wine_schedule();
        for (i, stage) in WINE.iter().enumerate() {
            state
                .record_stage(
                    "wine_producer",
                    addr("winery"),
                    "wine-2024-001",
                    stage,
                    None,
                    vec![],
                    Some(&schedule),
                    (i as u64 + 1) * 3600,
                )
                .unwrap();
        }
        assert_eq!(state.lots["wine-2024-001"].stages.len(), 5);
    }

    #[test]
    fn skipping_a_stage_is_out_of_order() {
        let mut state = producer_state();
        let schedule = wine_schedule();
        state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "cultivating", None, vec![], Some(&schedule), 1)
            .unwrap();
        state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "harvesting", None, vec![], Some(&schedule), 2)
            .unwrap();
        let err = state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "bottling", None, vec![], Some(&schedule), 3)
            .unwrap_err();
        assert!(matches!(err, TraceError::OutOfOrderStage { .. }));
    }

    #[test]
    fn rejection_blocks_until_reapproved_on_same_stage() {
        let mut state = producer_state();
        let schedule = wine_schedule();
        state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "cultivating", None, vec![], Some(&schedule), 1)
            .unwrap();
        state
            .certify_stage(addr("asl"), "wine-2024-001", "cultivating", Verdict::Rejected, 2)
            .unwrap();
        assert_eq!(
            state.record_stage("wine_producer", addr("w"), "wine-2024-001", "harvesting", None, vec![], Some(&schedule), 3),
            Err(TraceError::LotBlocked)
        );
        state
            .certify_stage(addr("asl"), "wine-2024-001", "cultivating", Verdict::Approved, 4)
            .unwrap();
        state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "harvesting", None, vec![], Some(&schedule), 5)
            .unwrap();
    }

    #[test]
    fn duplicate_lot_is_rejected() {
        let mut state = producer_state();
        assert_eq!(
            state.register_lot("wine_producer", "wine-2024-001", "wine"),
            Err(TraceError::DuplicateLot)
        );
    }

    #[test]
    fn certify_unknown_stage_fails() {
        let mut state = producer_state();
        assert_eq!(
            state.certify_stage(addr("asl"), "wine-2024-001", "bottling", Verdict::Approved, 1),
            Err(TraceError::UnknownStage)
        );
        assert_eq!(
            state.certify_stage(addr("asl"), "nope", "bottling", Verdict::Approved, 1),
            Err(TraceError::UnknownLot)
        );
    }

    #[test]
    fn wrong_owner_role_cannot_record() {
        let mut state = producer_state();
        let schedule = wine_schedule();
        assert_eq!(
            state.record_stage("cork_producer", addr("c"), "wine-2024-001", "cultivating", None, vec![], Some(&schedule), 1),
            Err(TraceError::NotOwner)
        );
    }

    #[test]
    fn component_linking_rules() {
        let mut state = producer_state();
        let cork_schedule: Vec<String> =
            ["harvesting_bark", "processing"].iter().map(|s| s.to_string()).collect();
        state.register_lot("cork_producer", "cork-1", "cork").unwrap();
        // incomplete component
        assert_eq!(
            state.link_component("wine_producer", "wine-2024-001", "cork-1", Some(&cork_schedule)),
            Err(TraceError::ComponentIncomplete)
        );
        for (i, s) in ["harvesting_bark", "processing"].iter().enumerate() {
            state
                .record_stage("cork_producer", addr("c"), "cork-1", s, None, vec![], Some(&cork_schedule), i as u64)
                .unwrap();
        }
        state
            .link_component("wine_producer", "wine-2024-001", "cork-1", Some(&cork_schedule))
            .unwrap();
        // linking back creates a cycle
        let wine_schedule = wine_schedule();
        assert_eq!(
            state.link_component("cork_producer", "cork-1", "wine-2024-001", Some(&wine_schedule)),
            Err(TraceError::CycleDetected)
        );
    }

    #[test]
    fn telemetry_dedupe() {
        let mut state = TraceState::default();
        let rec = TelemetryRecord {
            batch_digest: Digest::of(b"batch"),
            count: 5,
            t_min: 10,
            t_max: 20,
            topics: ["vineyard/temp".to_string()].into(),
        };
        state.record_telemetry(rec.clone()).unwrap();
        assert_eq!(state.record_telemetry(rec), Err(TraceError::DuplicateBatch));
    }

    #[test]
    fn trace_view_nests_components_and_batches() {
        let mut state = producer_state();
        let schedule = wine_schedule();
        let batch = Digest::of(b"batch");
        state
            .record_telemetry(TelemetryRecord {
                batch_digest: batch,
                count: 3,
                t_min: 1,
                t_max: 9,
                topics: ["vineyard/temp".to_string()].into(),
            })
            .unwrap();
        state
            .record_stage("wine_producer", addr("w"), "wine-2024-001", "cultivating", Some(batch), vec![], Some(&schedule), 1)
            .unwrap();
        let view = state.trace_view("wine-2024-001").unwrap();
        let m = view.as_map().unwrap();
        assert_eq!(m["lot_id"].as_str(), Some("wine-2024-001"));
        let stages = m["stages"].as_list().unwrap();
        let batch_view = stages[0].as_map().unwrap()["batch"].as_map().unwrap();
        assert_eq!(batch_view["count"].as_u64(), Some(3));
        assert_eq!(state.trace_view("nope"), Err(TraceError::UnknownLot));
    }
}
