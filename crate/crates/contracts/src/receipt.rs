//! Execution receipts.
//!
//! Every transaction in a committed block gets a receipt: the call result or
//! a typed error with a stable code, plus any events the handler emitted.
//! Receipts are recomputed deterministically on replay and are not part of
//! the block digest preimage.

use std::collections::BTreeMap;

use thiserror::Error;

use trellis_identity::{AuthzError, BindError};
use trellis_ledger::encoding::Value;
use trellis_ledger::Digest;

use crate::permissioning::PermissionError;
use crate::traceability::TraceError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("unknown contract \"{0}\"")]
    UnknownContract(String),
    #[error("unknown method \"{contract}.{method}\"")]
    UnknownMethod { contract: String, method: String },
    #[error("caller role not permitted for {contract}.{method}")]
    Unauthorized { contract: String, method: String },
    #[error("genesis state already installed")]
    AlreadyInitialized,
    #[error("chain state not initialized")]
    NotInitialized,
    #[error("malformed arguments: {0}")]
    BadArgs(String),
    #[error("caller is not an allowed deployer")]
    NotDeployer,
    #[error("contract id \"{0}\" already registered")]
    DuplicateContract(String),
    #[error(transparent)]
    Permission(#[from] PermissionError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("unknown role \"{0}\"")]
    UnknownRole(String),
    #[error("caller is not an admin")]
    NotAdmin,
    #[error("anchor for height {height} conflicts with the recorded digest")]
    AnchorConflict { height: u64 },
}

impl ContractError {
    /// Stable machine-readable code carried in receipts.
    pub fn code(&self) -> &'static str {
        match self {
            ContractError::UnknownContract(_) => "UnknownContract",
            ContractError::UnknownMethod { .. } => "UnknownMethod",
            ContractError::Unauthorized { .. } => "Unauthorized",
            ContractError::AlreadyInitialized => "AlreadyInitialized",
            ContractError::NotInitialized => "NotInitialized",
            ContractError::BadArgs(_) => "BadArgs",
            ContractError::NotDeployer => "NotDeployer",
            ContractError::DuplicateContract(_) => "DuplicateContract",
            ContractError::Permission(e) => e.code(),
            ContractError::Trace(e) => e.code(),
            ContractError::UnknownRole(_) => "UnknownRole",
            ContractError::NotAdmin => "NotAdmin",
            ContractError::AnchorConflict { .. } => "AnchorConflict",
        }
    }
}

impl From<AuthzError> for ContractError {
    fn from(e: AuthzError) -> ContractError {
        match e {
            AuthzError::UnknownContract(c) => ContractError::UnknownContract(c),
            AuthzError::UnknownMethod { contract, method } => {
                ContractError::UnknownMethod { contract, method }
            }
        }
    }
}

impl From<BindError> for ContractError {
    fn from(e: BindError) -> ContractError {
        match e {
            BindError::NotAdmin => ContractError::NotAdmin,
            BindError::UnknownRole(r) => ContractError::UnknownRole(r),
        }
    }
}

/// An event emitted by a successful handler, e.g. `stage_completed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: String,
    pub fields: BTreeMap<String, Value>,
}

impl Event {
    pub fn new<K: Into<String>>(
        kind: &str,
        fields: impl IntoIterator<Item = (K, Value)>,
    ) -> Event {
        Event {
            kind: kind.to_owned(),
            fields: fields.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = self.fields.clone();
        m.insert("kind".into(), self.kind.as_str().into());
        Value::Map(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxReceipt {
    pub tx_id: Digest,
    pub result: Result<Value, ContractError>,
    pub events: Vec<Event>,
}

impl TxReceipt {
    pub fn ok(tx_id: Digest, value: Value, events: Vec<Event>) -> TxReceipt {
        TxReceipt { tx_id, result: Ok(value), events }
    }

    pub fn fail(tx_id: Digest, err: ContractError) -> TxReceipt {
        TxReceipt { tx_id, result: Err(err), events: vec![] }
    }

    pub fn is_ok(&self) -> bool {
        self.result.is_ok()
    }

    pub fn to_value(&self) -> Value {
        let (ok, error) = match &self.result {
            Ok(v) => (v.clone(), Value::Null),
            Err(e) => (
                Value::Null,
                Value::map([
                    ("code", e.code().into()),
                    ("detail", e.to_string().into()),
                ]),
            ),
        };
        Value::map([
            ("error", error),
            (
                "events",
                Value::list(self.events.iter().map(|e| e.to_value())),
            ),
            ("ok", ok),
            ("tx", self.tx_id.value()),
        ])
    }
}
