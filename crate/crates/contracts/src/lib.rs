//! The deterministic contract host and the contracts it executes during
//! block application: ledger-level permissioning, address-to-role bindings,
//! the wine supply-chain traceability contract, and the anchor registry used
//! by the public-chain stub.
//!
//! Contracts are host-native handlers registered by id, not a user
//! programmable VM. Dispatch checks the role ACL before every call; failed
//! calls leave state untouched but still commit with an error receipt, so
//! rejections are auditable.

pub mod anchor_registry;
pub mod genesis;
pub mod host;
pub mod permissioning;
pub mod receipt;
pub mod traceability;

pub use anchor_registry::{AnchorReason, AnchorRecordData, AnchorRegistryState};
pub use genesis::{default_acl, stub_acl, GenesisSpec};
pub use host::Host;
pub use permissioning::{NodeKind, PermissionError, PermissionState};
pub use receipt::{ContractError, Event, TxReceipt};
pub use traceability::{
    Certification, DocumentRef, LotState, StageRecord, TraceError, TraceState, Verdict,
};
