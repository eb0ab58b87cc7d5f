//! Scenario files: timed actor actions replayed through the simulator.
//!
//! Events are sorted by time; actors and any addresses inside arguments are
//! referenced by name and resolved against the configured key derivation.
//! Contract calls are signed at event time by the scenario driver so that
//! arguments like `"batch": "latest"` can name the most recent certified
//! telemetry batch, which cannot be known when the file is written.

use thiserror::Error;

use trellis_consensus::{ExternalEvent, TimedEvent};
use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::Digest;
use trellis_tangle::IngestRecord;

use crate::config::NetworkConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Value(#[from] ValueError),
}

#[derive(Debug, Clone)]
pub struct ScenarioMeta {
    pub name: String,
    pub duration_s: u64,
    pub expect_full_coverage: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioAction {
    pub t_s: u64,
    pub actor: String,
    pub action: String,
    pub args: Value,
}

#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub meta: ScenarioMeta,
    pub events: Vec<ScenarioAction>,
}

const CALL_ACTIONS: [&str; 12] = [
    "add_admin",
    "enroll_node",
    "promote_validator",
    "set_deployer",
    "bind_role",
    "register_contract",
    "register_lot",
    "record_stage",
    "certify_stage",
    "link_component",
    "get_trace",
    "telemetry",
];

impl ScenarioFile {
    pub fn from_json(bytes: &[u8]) -> Result<ScenarioFile, ScenarioError> {
        let value = trellis_ledger::decode_value(bytes)?;
        let m = value
            .as_map()
            .ok_or_else(|| ScenarioError::Invalid("scenario must be a JSON object".into()))?;
        let meta = encoding::field_map(m, "meta")?;
        let meta = ScenarioMeta {
            name: encoding::field_str(meta, "name")?.to_owned(),
            duration_s: encoding::field_u64(meta, "duration_s")?,
            expect_full_coverage: meta
                .get("expect_full_coverage")
                .and_then(|v| v.as_bool())
                .unwrap_or(false),
        };
        let mut events = Vec::new();
        for item in encoding::field_list(m, "events")? {
            let e = item
                .as_map()
                .ok_or_else(|| ScenarioError::Invalid("event must be an object".into()))?;
            events.push(ScenarioAction {
                t_s: encoding::field_u64(e, "t")?,
                actor: encoding::field_str(e, "actor")?.to_owned(),
                action: encoding::field_str(e, "action")?.to_owned(),
                args: e.get("args").cloned().unwrap_or(Value::map::<&str>([])),
            });
        }
        let scenario = ScenarioFile { meta, events };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let mut last = 0;
        for e in &self.events {
            if e.t_s < last {
                return Err(ScenarioError::Invalid("events must be sorted by t".into()));
            }
            last = e.t_s;
            if !CALL_ACTIONS.contains(&e.action.as_str()) {
                return Err(ScenarioError::Invalid(format!("unknown action {}", e.action)));
            }
            if e.t_s > self.meta.duration_s {
                return Err(ScenarioError::Invalid(format!(
                    "event at {}s lies beyond the {}s duration",
                    e.t_s, self.meta.duration_s
                )));
            }
        }
        Ok(())
    }

    /// Compiles the scenario into simulator events. Contract-call actions
    /// become driver payloads handled by the gateway service at event time;
    /// `telemetry` actions expand into individual pre-signed ingest records.
    pub fn compile(
        &self,
        config: &NetworkConfig,
        service_index: usize,
    ) -> Result<Vec<TimedEvent>, ScenarioError> {
        let mut out = Vec::new();
        for action in &self.events {
            if action.action == "telemetry" {
                for (t_s, record) in expand_telemetry(config, action)? {
                    out.push(TimedEvent {
                        at_s: t_s,
                        event: ExternalEvent::ServiceEvent {
                            service: service_index,
                            payload: Value::map([
                                ("kind", "ingest".into()),
                                ("record", record.to_value()),
                            ]),
                        },
                    });
                }
            } else {
                out.push(TimedEvent {
                    at_s: action.t_s,
                    event: ExternalEvent::ServiceEvent {
                        service: service_index,
                        payload: Value::map([
                            ("action", action.action.as_str().into()),
                            ("actor", action.actor.as_str().into()),
                            ("args", action.args.clone()),
                            ("kind", "call".into()),
                        ]),
                    },
                });
            }
        }
        out.sort_by_key(|e| e.at_s);
        Ok(out)
    }
}

fn expand_telemetry(
    config: &NetworkConfig,
    action: &ScenarioAction,
) -> Result<Vec<(u64, IngestRecord)>, ScenarioError> {
    let args = action
        .args
        .as_map()
        .ok_or_else(|| ScenarioError::Invalid("telemetry args must be an object".into()))?;
    let device = config.key(encoding::field_str(args, "device")?);
    let topic = encoding::field_str(args, "topic")?;
    let payload = encoding::field(args, "payload")?.clone();
    let count = args.get("count").and_then(|v| v.as_u64()).unwrap_or(1);
    let interval = args.get("interval_s").and_then(|v| v.as_u64()).unwrap_or(60);
    let mut records = Vec::new();
    for i in 0..count {
        let ts = action.t_s + i * interval;
        let mut p = payload.as_map().cloned().unwrap_or_default();
        p.insert("seq".into(), i.into());
        let record = IngestRecord::build(&device, topic, Value::Map(p), ts)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        records.push((ts, record));
    }
    Ok(records)
}

/// Resolves an argument value that names an actor into its address bytes.
pub fn resolve_address(config: &NetworkConfig, v: &Value, field: &str) -> Result<Value, ScenarioError> {
    let name = v
        .as_str()
        .ok_or_else(|| ScenarioError::Invalid(format!("{field} must be an actor name")))?;
    Ok(config.address(name).value())
}

/// Translates scenario-level call arguments into contract-call arguments,
/// resolving actor names and document contents. `latest_batch` substitutes
/// `"batch": "latest"` references.
pub fn build_call_args(
    config: &NetworkConfig,
    action: &str,
    args: &Value,
    latest_batch: Option<Digest>,
) -> Result<(String, String, Value), ScenarioError> {
    let m = args
        .as_map()
        .ok_or_else(|| ScenarioError::Invalid("args must be an object".into()))?;
    let str_field = |name: &'static str| -> Result<Value, ScenarioError> {
        Ok(encoding::field_str(m, name)?.into())
    };
    Ok(match action {
        "add_admin" => (
            "permissioning".into(),
            "add_admin".into(),
            Value::map([("new_admin", resolve_address(config, encoding::field(m, "new_admin")?, "new_admin")?)]),
        ),
        "enroll_node" => (
            "permissioning".into(),
            "enroll_node".into(),
            Value::map([
                ("kind", str_field("kind")?),
                ("node", resolve_address(config, encoding::field(m, "node")?, "node")?),
            ]),
        ),
        "promote_validator" => (
            "permissioning".into(),
            "promote_validator".into(),
            Value::map([("node", resolve_address(config, encoding::field(m, "node")?, "node")?)]),
        ),
        "set_deployer" => (
            "permissioning".into(),
            "set_deployer".into(),
            Value::map([
                ("addr", resolve_address(config, encoding::field(m, "addr")?, "addr")?),
                (
                    "allowed",
                    encoding::field(m, "allowed")?
                        .as_bool()
                        .ok_or_else(|| ScenarioError::Invalid("allowed must be a bool".into()))?
                        .into(),
                ),
            ]),
        ),
        "bind_role" => (
            "identity".into(),
            "bind_address_role".into(),
            Value::map([
                ("addr", resolve_address(config, encoding::field(m, "addr")?, "addr")?),
                ("role", str_field("role")?),
            ]),
        ),
        "register_contract" => (
            "host".into(),
            "register_contract".into(),
            Value::map([("id", str_field("id")?)]),
        ),
        "register_lot" => (
            "traceability".into(),
            "register_lot".into(),
            Value::map([("lot_id", str_field("lot_id")?), ("product", str_field("product")?)]),
        ),
        "record_stage" => {
            let batch = match m.get("batch").and_then(|v| v.as_str()) {
                Some("latest") => latest_batch
                    .map(|d| d.value())
                    .ok_or_else(|| ScenarioError::Invalid("no certified batch yet for \"latest\"".into()))?,
                Some("none") | None => Value::Null,
                Some(hex) => Digest::from_hex(hex)
                    .map_err(|_| ScenarioError::Invalid("batch must be latest|none|hex".into()))?
                    .value(),
            };
            let mut documents = Vec::new();
            if let Some(list) = m.get("documents").and_then(|v| v.as_list()) {
                for d in list {
                    let dm = d
                        .as_map()
                        .ok_or_else(|| ScenarioError::Invalid("document must be an object".into()))?;
                    let digest = match (dm.get("content"), dm.get("digest")) {
                        (Some(content), _) => {
                            let text = content.as_str().ok_or_else(|| {
                                ScenarioError::Invalid("document content must be a string".into())
                            })?;
                            Digest::of(text.as_bytes())
                        }
                        (None, Some(hex)) => Digest::from_hex(
                            hex.as_str()
                                .ok_or_else(|| ScenarioError::Invalid("digest must be hex".into()))?,
                        )?,
                        _ => return Err(ScenarioError::Invalid("document needs content or digest".into())),
                    };
                    documents.push(Value::map([
                        ("digest", digest.value()),
                        ("uri", encoding::field_str(dm, "uri")?.into()),
                    ]));
                }
            }
            (
                "traceability".into(),
                "record_stage".into(),
                Value::map([
                    ("batch_digest", batch),
                    ("documents", Value::List(documents)),
                    ("lot_id", str_field("lot_id")?),
                    ("stage_name", str_field("stage_name")?),
                ]),
            )
        }
        "certify_stage" => (
            "traceability".into(),
            "certify_stage".into(),
            Value::map([
                ("lot_id", str_field("lot_id")?),
                ("stage_name", str_field("stage_name")?),
                ("verdict", str_field("verdict")?),
            ]),
        ),
        "link_component" => (
            "traceability".into(),
            "link_component".into(),
            Value::map([
                ("component_lot", str_field("component_lot")?),
                ("target_lot", str_field("target_lot")?),
            ]),
        ),
        "get_trace" => (
            "traceability".into(),
            "get_trace".into(),
            Value::map([("lot_id", str_field("lot_id")?)]),
        ),
        other => return Err(ScenarioError::Invalid(format!("unknown action {other}"))),
    })
}
