//! Genesis construction.
//!
//! The genesis block is height 0 with a zero parent, timestamp 0, no votes,
//! and exactly one transaction: `permissioning.init` carrying the complete
//! ledger-level configuration (admins, node registry, deployers, role
//! bindings, vocabulary, ACL table, stage schedules, chain id, and the
//! digest of the network config it came from). A chain file therefore
//! replays from an empty host with no out-of-band inputs.

use std::collections::BTreeMap;

use trellis_identity::{AclTable, MethodAcl};
use trellis_ledger::encoding::Value;
use trellis_ledger::{Address, Block, Chain, Digest, KeyPair, StateMachine, Transaction};

use crate::host::Host;
use crate::permissioning::NodeKind;

pub const ALL_ROLES: [&str; 6] = [
    "wine_producer",
    "cork_producer",
    "health_authority",
    "quality_authority",
    "baas_provider",
    "external_user",
];

const PRODUCER_ROLES: [&str; 2] = ["wine_producer", "cork_producer"];
const AUTHORITY_ROLES: [&str; 2] = ["health_authority", "quality_authority"];

/// The documented ACL table: producers write lots and stages, authorities
/// certify, the BaaS provider runs telemetry and ledger administration,
/// reads are open to every role including external users. Deployer gating
/// for `host.register_contract` happens in the handler, so its role row is
/// open.
pub fn default_acl() -> AclTable {
    let mut acl = AclTable::default();
    for method in ["register_lot", "record_stage", "link_component"] {
        acl.insert("traceability", method, MethodAcl::new(PRODUCER_ROLES, false));
    }
    acl.insert("traceability", "certify_stage", MethodAcl::new(AUTHORITY_ROLES, false));
    acl.insert("traceability", "record_telemetry", MethodAcl::new(["baas_provider"], false));
    acl.insert("traceability", "get_trace", MethodAcl::new(ALL_ROLES, true));
    for method in ["add_admin", "enroll_node", "promote_validator", "set_deployer"] {
        acl.insert("permissioning", method, MethodAcl::new(["baas_provider"], false));
    }
    acl.insert("identity", "bind_address_role", MethodAcl::new(["baas_provider"], false));
    acl.insert("host", "register_contract", MethodAcl::new(ALL_ROLES, false));
    acl
}

/// ACL for the public-chain stub: just the anchor registry.
pub fn stub_acl() -> AclTable {
    let mut acl = AclTable::default();
    acl.insert("anchor_registry", "record_anchor", MethodAcl::new(["baas_provider"], false));
    acl.insert("host", "register_contract", MethodAcl::new(ALL_ROLES, false));
    acl
}

#[derive(Debug, Clone)]
pub struct GenesisSpec {
    pub chain_id: String,
    pub admins: Vec<Address>,
    pub nodes: Vec<(Address, NodeKind)>,
    pub deployers: Vec<Address>,
    pub role_bindings: Vec<(Address, String)>,
    pub vocabulary: Vec<String>,
    pub acl: AclTable,
    pub schedules: BTreeMap<String, Vec<String>>,
    pub contracts: Vec<String>,
    pub open_deployers: bool,
    pub config_digest: Digest,
}

impl GenesisSpec {
    pub fn args_value(&self) -> Value {
        Value::map([
            ("acl", self.acl.to_value()),
            ("admins", Value::list(self.admins.iter().map(|a| a.value()))),
            ("chain_id", self.chain_id.as_str().into()),
            ("config_digest", self.config_digest.value()),
            (
                "contracts",
                Value::list(self.contracts.iter().map(|c| c.as_str().into())),
            ),
            (
                "deployers",
                Value::list(self.deployers.iter().map(|a| a.value())),
            ),
            (
                "nodes",
                Value::Map(
                    self.nodes
                        .iter()
                        .map(|(a, k)| (a.to_hex(), k.as_str().into()))
                        .collect(),
                ),
            ),
            (
                "open_deployers",
                self.open_deployers.into(),
            ),
            (
                "role_bindings",
                Value::Map(
                    self.role_bindings
                        .iter()
                        .map(|(a, r)| (a.to_hex(), r.as_str().into()))
                        .collect(),
                ),
            ),
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
            (
                "vocabulary",
                Value::list(self.vocabulary.iter().map(|r| r.as_str().into())),
            ),
        ])
    }

    /// The single genesis transaction, signed by the operator key (by
    /// convention the first admin).
    pub fn genesis_tx(&self, signer: &KeyPair) -> Transaction {
        Transaction::build(signer, 0, "permissioning", "init", self.args_value())
            .expect("genesis args contain no floats")
    }

    pub fn genesis_block(&self, signer: &KeyPair) -> Block {
        let tx = self.genesis_tx(signer);
        let mut state = Host::default();
        state.apply_tx(&tx, 0, 0);
        Block {
            height: 0,
            parent: Digest::ZERO,
            timestamp: 0,
            proposer: Address::ZERO,
            txs: vec![tx],
            state_digest: state.digest(),
            votes: vec![],
        }
    }

    pub fn build_chain(&self, signer: &KeyPair) -> Chain<Host> {
        Chain::from_genesis(self.genesis_block(signer)).expect("genesis block is self-consistent")
    }
}
