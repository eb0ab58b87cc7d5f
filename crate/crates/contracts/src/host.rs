//! The contract host: deterministic dispatch of contract-call transactions
//! during block application.
//!
//! All state is installed by the genesis "init" call, so a host replays
//! identically from an empty default. Dispatch order per call: contract
//! registered, method known in the ACL, caller role authorized, then the
//! handler. Handlers run on a working copy; errors discard it, so a failed
//! call commits with an error receipt and no state change.

use std::collections::{BTreeMap, BTreeSet};

use trellis_identity::{authorize, bind_address_role, AclTable, RoleRegistry, RoleVocabulary};
use trellis_ledger::encoding::{self, Value};
use trellis_ledger::{Address, Digest, StateMachine, Transaction};

use crate::anchor_registry::{AnchorRecordData, AnchorRegistryState, RecordOutcome};
use crate::permissioning::{NodeKind, PermissionState};
use crate::receipt::{ContractError, Event, TxReceipt};
use crate::traceability::{self, TelemetryRecord, TraceState, Verdict};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Host {
    pub chain_id: String,
    pub perms: PermissionState,
    pub roles: RoleRegistry,
    pub vocabulary: RoleVocabulary,
    pub acl: AclTable,
    pub schedules: BTreeMap<String, Vec<String>>,
    pub trace: TraceState,
    pub anchors: AnchorRegistryState,
    registered: BTreeSet<String>,
    pub open_deployers: bool,
    pub config_digest: Digest,
}

impl Host {
    pub fn initialized(&self) -> bool {
        !self.perms.admins.is_empty()
    }

    pub fn registered_contracts(&self) -> impl Iterator<Item = &str> {
        self.registered.iter().map(|s| s.as_str())
    }

    pub fn is_registered(&self, contract: &str) -> bool {
        self.registered.contains(contract)
    }

    pub fn schedule_for(&self, product: &str) -> Option<&[String]> {
        self.schedules.get(product).map(|s| s.as_slice())
    }

    fn dispatch(
        &mut self,
        tx: &Transaction,
        height: u64,
        block_time: u64,
    ) -> Result<CallOutcome, ContractError> {
        if tx.contract == "permissioning" && tx.method == "init" {
            if self.initialized() {
                return Err(ContractError::AlreadyInitialized);
            }
            let (value, events) = self.apply_init(tx, height)?;
            return Ok(CallOutcome { value, events, read_only: false });
        }
        if !self.initialized() {
            return Err(ContractError::NotInitialized);
        }
        if !self.registered.contains(&tx.contract) {
            return Err(ContractError::UnknownContract(tx.contract.clone()));
        }
        let entry = self
            .acl
            .method(&tx.contract, &tx.method)
            .ok_or_else(|| ContractError::UnknownMethod {
                contract: tx.contract.clone(),
                method: tx.method.clone(),
            })?
            .clone();
        if !authorize(&self.roles, &self.acl, tx.sender, &tx.contract, &tx.method)? {
            return Err(ContractError::Unauthorized {
                contract: tx.contract.clone(),
                method: tx.method.clone(),
            });
        }
        let caller_role = self
            .roles
            .role_of(&tx.sender)
            .expect("authorized caller is bound")
            .to_owned();
        let args = tx.args.as_map().cloned().unwrap_or_default();
        let ctx = CallCtx {
            sender: tx.sender,
            caller_role,
            args,
            block_time,
        };
        let (value, events) = match (tx.contract.as_str(), tx.method.as_str()) {
            ("permissioning", "add_admin") => self.call_add_admin(&ctx),
            ("permissioning", "enroll_node") => self.call_enroll_node(&ctx),
            ("permissioning", "promote_validator") => self.call_promote_validator(&ctx),
            ("permissioning", "set_deployer") => self.call_set_deployer(&ctx),
            ("identity", "bind_address_role") => self.call_bind_address_role(&ctx),
            ("traceability", "register_lot") => self.call_register_lot(&ctx),
            ("traceability", "record_stage") => self.call_record_stage(&ctx),
            ("traceability", "certify_stage") => self.call_certify_stage(&ctx),
            ("traceability", "link_component") => self.call_link_component(&ctx),
            ("traceability", "record_telemetry") => self.call_record_telemetry(&ctx),
            ("traceability", "get_trace") => self.call_get_trace(&ctx),
            ("host", "register_contract") => self.call_register_contract(&ctx),
            ("anchor_registry", "record_anchor") => self.call_record_anchor(&ctx),
            _ => Err(ContractError::UnknownMethod {
                contract: tx.contract.clone(),
                method: tx.method.clone(),
            }),
        }?;
        Ok(CallOutcome { value, events, read_only: entry.read_only })
    }

    fn apply_init(
        &mut self,
        tx: &Transaction,
        height: u64,
    ) -> Result<(Value, Vec<Event>), ContractError> {
        if height != 0 {
            return Err(ContractError::AlreadyInitialized);
        }
        let m = tx
            .args
            .as_map()
            .ok_or_else(|| ContractError::BadArgs("init args must be a map".into()))?;
        let bad = |e: trellis_ledger::ValueError| ContractError::BadArgs(e.to_string());
        self.chain_id = encoding::field_str(m, "chain_id").map_err(bad)?.to_owned();
        self.config_digest = Digest(encoding::field_hex(m, "config_digest").map_err(bad)?);
        self.open_deployers = encoding::field(m, "open_deployers")
            .map_err(bad)?
            .as_bool()
            .ok_or_else(|| ContractError::BadArgs("open_deployers must be a bool".into()))?;
        for a in encoding::field_list(m, "admins").map_err(bad)? {
            let bytes = encoding::bytes_like(a, "admin").map_err(bad)?;
            self.perms.admins.insert(Address(
                bytes
                    .try_into()
                    .map_err(|_| ContractError::BadArgs("admin address length".into()))?,
            ));
        }
        if self.perms.admins.is_empty() {
            return Err(ContractError::BadArgs("admin set must be non-empty".into()));
        }
        for a in encoding::field_list(m, "deployers").map_err(bad)? {
            let bytes = encoding::bytes_like(a, "deployer").map_err(bad)?;
            self.perms.deployers.insert(Address(
                bytes
                    .try_into()
                    .map_err(|_| ContractError::BadArgs("deployer address length".into()))?,
            ));
        }
        for (k, v) in encoding::field_map(m, "nodes").map_err(bad)? {
            let kind = v
                .as_str()
                .and_then(NodeKind::parse)
                .ok_or_else(|| ContractError::BadArgs(format!("bad node kind for {k}")))?;
            self.perms
                .nodes
                .insert(Address::from_hex(k).map_err(bad)?, kind);
        }
        self.vocabulary =
            RoleVocabulary::from_value(encoding::field(m, "vocabulary").map_err(bad)?).map_err(bad)?;
        for (k, v) in encoding::field_map(m, "role_bindings").map_err(bad)? {
            let role = v
                .as_str()
                .ok_or_else(|| ContractError::BadArgs("role binding must be a string".into()))?;
            if !self.vocabulary.contains(role) {
                return Err(ContractError::UnknownRole(role.to_owned()));
            }
            self.roles
                .install(Address::from_hex(k).map_err(bad)?, role.to_owned());
        }
        self.acl = AclTable::from_value(encoding::field(m, "acl").map_err(bad)?).map_err(bad)?;
        for (product, stages) in encoding::field_map(m, "schedules").map_err(bad)? {
            let stages = stages
                .as_list()
                .ok_or_else(|| ContractError::BadArgs("schedule must be a list".into()))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| ContractError::BadArgs("stage must be a string".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            self.schedules.insert(product.clone(), stages);
        }
        for c in encoding::field_list(m, "contracts").map_err(bad)? {
            self.registered.insert(
                c.as_str()
                    .ok_or_else(|| ContractError::BadArgs("contract id must be a string".into()))?
                    .to_owned(),
            );
        }
        Ok((Value::str("initialized"), vec![]))
    }

    fn call_add_admin(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let new_admin = ctx.address_arg("new_admin")?;
        self.perms.add_admin(ctx.sender, new_admin)?;
        Ok((Value::Null, vec![]))
    }

    fn call_enroll_node(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let node = ctx.address_arg("node")?;
        let kind = ctx
            .str_arg("kind")
            .ok()
            .and_then(NodeKind::parse)
            .ok_or_else(|| ContractError::BadArgs("kind must be simple|validator".into()))?;
        self.perms.enroll_node(ctx.sender, node, kind)?;
        Ok((Value::Null, vec![]))
    }

    fn call_promote_validator(
        &mut self,
        ctx: &CallCtx,
    ) -> Result<(Value, Vec<Event>), ContractError> {
        let node = ctx.address_arg("node")?;
        self.perms.promote_validator(ctx.sender, node)?;
        Ok((Value::Null, vec![]))
    }

    fn call_set_deployer(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let addr = ctx.address_arg("addr")?;
        let allowed = ctx
            .arg("allowed")?
            .as_bool()
            .ok_or_else(|| ContractError::BadArgs("allowed must be a bool".into()))?;
        self.perms.set_deployer(ctx.sender, addr, allowed)?;
        Ok((Value::Null, vec![]))
    }

    fn call_bind_address_role(
        &mut self,
        ctx: &CallCtx,
    ) -> Result<(Value, Vec<Event>), ContractError> {
        let addr = ctx.address_arg("addr")?;
        let role = ctx.str_arg("role")?;
        let previous = bind_address_role(
            &mut self.roles,
            &self.perms.admins,
            &self.vocabulary,
            ctx.sender,
            addr,
            role,
        )?;
        let event = Event::new(
            "role_bound",
            [
                ("addr", addr.value()),
                (
                    "previous",
                    previous.map(Value::Str).unwrap_or(Value::Null),
                ),
                ("role", role.into()),
            ],
        );
        Ok((Value::Null, vec![event]))
    }

    fn call_register_lot(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let lot_id = ctx.str_arg("lot_id")?;
        let product = ctx.str_arg("product")?;
        self.trace.register_lot(&ctx.caller_role, lot_id, product)?;
        Ok((Value::Null, vec![]))
    }

    fn call_record_stage(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let lot_id = ctx.str_arg("lot_id")?.to_owned();
        let stage = ctx.str_arg("stage_name")?.to_owned();
        let batch_digest = match ctx.arg("batch_digest")? {
            Value::Null => None,
            v => Some(Digest(
                encoding::bytes_like(v, "batch_digest")
                    .map_err(|e| ContractError::BadArgs(e.to_string()))?
                    .try_into()
                    .map_err(|_| ContractError::BadArgs("batch_digest length".into()))?,
            )),
        };
        let documents = traceability::parse_documents(ctx.arg("documents")?)
            .map_err(|e| ContractError::BadArgs(e.to_string()))?;
        let product = self
            .trace
            .lots
            .get(&lot_id)
            .map(|l| l.product.clone())
            .ok_or(crate::traceability::TraceError::UnknownLot)?;
        let schedule = self.schedules.get(&product).cloned();
        self.trace.record_stage(
            &ctx.caller_role,
            ctx.sender,
            &lot_id,
            &stage,
            batch_digest,
            documents,
            schedule.as_deref(),
            ctx.block_time,
        )?;
        let event = Event::new(
            "stage_completed",
            [("lot", lot_id.as_str().into()), ("stage", stage.as_str().into())],
        );
        Ok((Value::Null, vec![event]))
    }

    fn call_certify_stage(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let lot_id = ctx.str_arg("lot_id")?;
        let stage = ctx.str_arg("stage_name")?;
        let verdict = ctx
            .str_arg("verdict")
            .ok()
            .and_then(Verdict::parse)
            .ok_or_else(|| ContractError::BadArgs("verdict must be approved|rejected".into()))?;
        self.trace
            .certify_stage(ctx.sender, lot_id, stage, verdict, ctx.block_time)?;
        Ok((Value::Null, vec![]))
    }

    fn call_link_component(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let target = ctx.str_arg("target_lot")?.to_owned();
        let component = ctx.str_arg("component_lot")?.to_owned();
        let schedule = self
            .trace
            .lots
            .get(&component)
            .and_then(|l| self.schedules.get(&l.product))
            .cloned();
        self.trace
            .link_component(&ctx.caller_role, &target, &component, schedule.as_deref())?;
        Ok((Value::Null, vec![]))
    }

    fn call_record_telemetry(
        &mut self,
        ctx: &CallCtx,
    ) -> Result<(Value, Vec<Event>), ContractError> {
        let batch_digest = Digest(
            encoding::bytes_like(ctx.arg("batch_digest")?, "batch_digest")
                .map_err(|e| ContractError::BadArgs(e.to_string()))?
                .try_into()
                .map_err(|_| ContractError::BadArgs("batch_digest length".into()))?,
        );
        let count = ctx.u64_arg("count")?;
        let t_min = ctx.u64_arg("t_min")?;
        let t_max = ctx.u64_arg("t_max")?;
        let mut topics = BTreeSet::new();
        for t in ctx
            .arg("topics")?
            .as_list()
            .ok_or_else(|| ContractError::BadArgs("topics must be a list".into()))?
        {
            topics.insert(
                t.as_str()
                    .ok_or_else(|| ContractError::BadArgs("topic must be a string".into()))?
                    .to_owned(),
            );
        }
        if count == 0 || t_min > t_max || topics.is_empty() {
            return Err(ContractError::BadArgs(
                "batch must have count >= 1, t_min <= t_max, non-empty topics".into(),
            ));
        }
        self.trace.record_telemetry(TelemetryRecord {
            batch_digest,
            count,
            t_min,
            t_max,
            topics,
        })?;
        Ok((Value::Null, vec![]))
    }

    fn call_get_trace(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let lot_id = ctx.str_arg("lot_id")?;
        let view = self.trace.trace_view(lot_id)?;
        Ok((view, vec![]))
    }

    fn call_register_contract(
        &mut self,
        ctx: &CallCtx,
    ) -> Result<(Value, Vec<Event>), ContractError> {
        if !self.open_deployers && !self.perms.deployers.contains(&ctx.sender) {
            return Err(ContractError::NotDeployer);
        }
        let id = ctx.str_arg("id")?;
        if self.registered.contains(id) {
            return Err(ContractError::DuplicateContract(id.to_owned()));
        }
        // Native handlers only: the registration reserves the id; the new
        // contract has no methods until a handler ships for it.
        self.registered.insert(id.to_owned());
        Ok((Value::Null, vec![]))
    }

    fn call_record_anchor(&mut self, ctx: &CallCtx) -> Result<(Value, Vec<Event>), ContractError> {
        let record = AnchorRecordData::from_value(&Value::Map(ctx.args.clone()))
            .map_err(|e| ContractError::BadArgs(e.to_string()))?;
        match self.anchors.record(record) {
            Ok(RecordOutcome::Stored) => Ok((Value::str("stored"), vec![])),
            Ok(RecordOutcome::Duplicate) => Ok((Value::str("duplicate"), vec![])),
            Err(height) => Err(ContractError::AnchorConflict { height }),
        }
    }

    pub fn state_value(&self) -> Value {
        Value::map([
            ("acl", self.acl.to_value()),
            ("anchors", self.anchors.to_value()),
            ("chain_id", self.chain_id.as_str().into()),
            ("config_digest", self.config_digest.value()),
            (
                "contracts",
                Value::list(self.registered.iter().map(|c| c.as_str().into())),
            ),
            ("open_deployers", self.open_deployers.into()),
            ("permissions", self.perms.to_value()),
            ("roles", self.roles.to_value()),
            (
                "schedules",
                Value::Map(
                    self.schedules
                        .iter()
                        .map(|(p, stages)| {
                            (
                                p.clone(),
                                Value::list(stages.iter().map(|s| s.as_str().into())),
                            )
                        })
                        .collect(),
                ),
            ),
            ("trace", self.trace.to_value()),
            ("vocabulary", self.vocabulary.to_value()),
        ])
    }
}

struct CallOutcome {
    value: Value,
    events: Vec<Event>,
    read_only: bool,
}

struct CallCtx {
    sender: Address,
    caller_role: String,
    args: BTreeMap<String, Value>,
    block_time: u64,
}

impl CallCtx {
    fn arg(&self, name: &'static str) -> Result<&Value, ContractError> {
        self.args
            .get(name)
            .ok_or_else(|| ContractError::BadArgs(format!("missing argument \"{name}\"")))
    }

    fn str_arg(&self, name: &'static str) -> Result<&str, ContractError> {
        self.arg(name)?
            .as_str()
            .ok_or_else(|| ContractError::BadArgs(format!("argument \"{name}\" must be a string")))
    }

    fn u64_arg(&self, name: &'static str) -> Result<u64, ContractError> {
        self.arg(name)?.as_u64().ok_or_else(|| {
            ContractError::BadArgs(format!("argument \"{name}\" must be a non-negative integer"))
        })
    }

    fn address_arg(&self, name: &'static str) -> Result<Address, ContractError> {
        let bytes = encoding::bytes_like(self.arg(name)?, name)
            .map_err(|e| ContractError::BadArgs(e.to_string()))?;
        Ok(Address(bytes.try_into().map_err(|_| {
            ContractError::BadArgs(format!("argument \"{name}\" must be 20 bytes"))
        })?))
    }
}

impl StateMachine for Host {
    type Receipt = TxReceipt;

    fn apply_tx(&mut self, tx: &Transaction, height: u64, block_time: u64) -> TxReceipt {
        let mut work = self.clone();
        match work.dispatch(tx, height, block_time) {
            Ok(outcome) => {
                if !outcome.read_only {
                    *self = work;
                }
                TxReceipt::ok(tx.id, outcome.value, outcome.events)
            }
            Err(err) => TxReceipt::fail(tx.id, err),
        }
    }

    fn digest(&self) -> Digest {
        Digest::of_value(&self.state_value()).expect("host state contains no floats")
    }

    fn validator_set(&self) -> Vec<Address> {
        self.perms.validators()
    }
}
