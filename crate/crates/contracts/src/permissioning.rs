//! The global permissioning contract: admins, node enrollment, validator
//! promotion, and the contract-deployer allow list.
//!
//! Every mutation requires an admin caller. There is deliberately no admin
//! removal and no node eviction, so the admin set can never become empty
//! after genesis installs it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use trellis_ledger::encoding::{Value, ValueError};
use trellis_ledger::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Simple,
    Validator,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Simple => "simple",
            NodeKind::Validator => "validator",
        }
    }

    pub fn parse(s: &str) -> Option<NodeKind> {
        match s {
            "simple" => Some(NodeKind::Simple),
            "validator" => Some(NodeKind::Validator),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PermissionError {
    #[error("caller is not an admin")]
    NotAdmin,
    #[error("address is already an admin")]
    AlreadyAdmin,
    #[error("node is already enrolled")]
    AlreadyEnrolled,
    #[error("address is not an enrolled node")]
    UnknownNode,
    #[error("node is already a validator")]
    AlreadyValidator,
}

impl PermissionError {
    pub fn code(&self) -> &'static str {
        match self {
            PermissionError::NotAdmin => "NotAdmin",
            PermissionError::AlreadyAdmin => "AlreadyAdmin",
            PermissionError::AlreadyEnrolled => "AlreadyEnrolled",
            PermissionError::UnknownNode => "UnknownNode",
            PermissionError::AlreadyValidator => "AlreadyValidator",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermissionState {
    pub admins: BTreeSet<Address>,
    pub nodes: BTreeMap<Address, NodeKind>,
    pub deployers: BTreeSet<Address>,
}

impl PermissionState {
    pub fn is_admin(&self, addr: &Address) -> bool {
        self.admins.contains(addr)
    }

    pub fn is_enrolled(&self, addr: &Address) -> bool {
        self.nodes.contains_key(addr)
    }

    pub fn node_kind(&self, addr: &Address) -> Option<NodeKind> {
        self.nodes.get(addr).copied()
    }

    /// Validator addresses in ascending byte order.
    pub fn validators(&self) -> Vec<Address> {
        self.nodes
            .iter()
            .filter(|(_, kind)| **kind == NodeKind::Validator)
            .map(|(addr, _)| *addr)
            .collect()
    }

    fn require_admin(&self, caller: Address) -> Result<(), PermissionError> {
        if self.is_admin(&caller) {
            Ok(())
        } else {
            Err(PermissionError::NotAdmin)
        }
    }

    pub fn add_admin(&mut self, caller: Address, new_admin: Address) -> Result<(), PermissionError> {
        self.require_admin(caller)?;
        if !self.admins.insert(new_admin) {
            return Err(PermissionError::AlreadyAdmin);
        }
        Ok(())
    }

    pub fn enroll_node(
        &mut self,
        caller: Address,
        node: Address,
        kind: NodeKind,
    ) -> Result<(), PermissionError> {
        self.require_admin(caller)?;
        if self.nodes.contains_key(&node) {
            return Err(PermissionError::AlreadyEnrolled);
        }
        self.nodes.insert(node, kind);
        Ok(())
    }

    pub fn promote_validator(
        &mut self,
        caller: Address,
        node: Address,
    ) -> Result<(), PermissionError> {
        self.require_admin(caller)?;
        match self.nodes.get(&node) {
            None => Err(PermissionError::UnknownNode),
            Some(NodeKind::Validator) => Err(PermissionError::AlreadyValidator),
            Some(NodeKind::Simple) => {
                self.nodes.insert(node, NodeKind::Validator);
                Ok(())
            }
        }
    }

    pub fn set_deployer(
        &mut self,
        caller: Address,
        addr: Address,
        allowed: bool,
    ) -> Result<(), PermissionError> {
        self.require_admin(caller)?;
        if allowed {
            self.deployers.insert(addr);
        } else {
            self.deployers.remove(&addr);
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            (
                "admins",
                Value::list(self.admins.iter().map(|a| a.value())),
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
        ])
    }

    pub fn from_value(value: &Value) -> Result<PermissionState, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "permission state",
            expected: "map",
        })?;
        let mut state = PermissionState::default();
        for a in trellis_ledger::encoding::field_list(m, "admins")? {
            state.admins.insert(Address(
                trellis_ledger::encoding::bytes_like(a, "admin")?
                    .try_into()
                    .map_err(|_| ValueError::BadLength { field: "admin", expected: 20 })?,
            ));
        }
        for a in trellis_ledger::encoding::field_list(m, "deployers")? {
            state.deployers.insert(Address(
                trellis_ledger::encoding::bytes_like(a, "deployer")?
                    .try_into()
                    .map_err(|_| ValueError::BadLength { field: "deployer", expected: 20 })?,
            ));
        }
        for (k, v) in trellis_ledger::encoding::field_map(m, "nodes")? {
            let kind = v
                .as_str()
                .and_then(NodeKind::parse)
                .ok_or(ValueError::Expected { field: "node kind", expected: "simple|validator" })?;
            state.nodes.insert(Address::from_hex(k)?, kind);
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trellis_ledger::KeyPair;

    fn addr(label: &str) -> Address {
        KeyPair::derive(2, label).address
    }

    fn with_admin() -> (PermissionState, Address) {
        let mut state = PermissionState::default();
        let admin = addr("genesis-admin");
        state.admins.insert(admin);
        (state, admin)
    }

    #[test]
    fn admin_adds_admin() {
        let (mut state, admin) = with_admin();
        state.add_admin(admin, addr("b")).unwrap();
        assert!(state.is_admin(&addr("b")));
    }

    #[test]
    fn non_admin_is_rejected() {
        let (mut state, _) = with_admin();
        assert_eq!(
            state.add_admin(addr("c"), addr("d")),
            Err(PermissionError::NotAdmin)
        );
    }

    #[test]
    fn double_add_is_already_admin() {
        let (mut state, admin) = with_admin();
        state.add_admin(admin, addr("b")).unwrap();
        assert_eq!(
            state.add_admin(admin, addr("b")),
            Err(PermissionError::AlreadyAdmin)
        );
    }

    #[test]
    fn enroll_and_double_enroll() {
        let (mut state, admin) = with_admin();
        state.enroll_node(admin, addr("d"), NodeKind::Simple).unwrap();
        assert_eq!(state.node_kind(&addr("d")), Some(NodeKind::Simple));
        assert_eq!(
            state.enroll_node(admin, addr("d"), NodeKind::Simple),
            Err(PermissionError::AlreadyEnrolled)
        );
    }

    #[test]
    fn deployer_is_not_admin() {
        let (mut state, admin) = with_admin();
        state.set_deployer(admin, addr("e"), true).unwrap();
        assert_eq!(
            state.enroll_node(addr("e"), addr("f"), NodeKind::Simple),
            Err(PermissionError::NotAdmin)
        );
    }

    #[test]
    fn promotion_rules() {
        let (mut state, admin) = with_admin();
        assert_eq!(
            state.promote_validator(admin, addr("x")),
            Err(PermissionError::UnknownNode)
        );
        state.enroll_node(admin, addr("x"), NodeKind::Simple).unwrap();
        state.promote_validator(admin, addr("x")).unwrap();
        assert_eq!(state.node_kind(&addr("x")), Some(NodeKind::Validator));
        assert_eq!(
            state.promote_validator(admin, addr("x")),
            Err(PermissionError::AlreadyValidator)
        );
    }

    #[test]
    fn deployer_set_and_revoke() {
        let (mut state, admin) = with_admin();
        state.set_deployer(admin, addr("e"), true).unwrap();
        assert!(state.deployers.contains(&addr("e")));
        state.set_deployer(admin, addr("e"), false).unwrap();
        assert!(!state.deployers.contains(&addr("e")));
    }

    #[test]
    fn validators_are_sorted_ascending() {
        let (mut state, admin) = with_admin();
        for label in ["v1", "v2", "v3"] {
            state.enroll_node(admin, addr(label), NodeKind::Validator).unwrap();
        }
        let vs = state.validators();
        let mut sorted = vs.clone();
        sorted.sort();
        assert_eq!(vs, sorted);
        assert_eq!(vs.len(), 3);
    }

    /// Random call sequences from random callers never mutate state unless
    /// the caller is an admin, and the admin set never empties.
    #[test]
    fn fuzz_admin_closure() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let (mut state, admin) = with_admin();
        let pool: Vec<Address> = (0..12).map(|i| addr(&format!("p{i}"))).collect();
        for _ in 0..1000 {
            let caller = if rng.gen_bool(0.3) { admin } else { pool[rng.gen_range(0..pool.len())] };
            let target = pool[rng.gen_range(0..pool.len())];
            let before = state.clone();
            let was_admin = state.is_admin(&caller);
            let result = match rng.gen_range(0..4) {
                0 => state.add_admin(caller, target).map(|_| ()),
                1 => state.enroll_node(caller, target, NodeKind::Simple),
                2 => state.promote_validator(caller, target),
                _ => state.set_deployer(caller, target, rng.gen_bool(0.5)),
            };
            if !was_admin {
                assert_eq!(result, Err(PermissionError::NotAdmin));
                assert_eq!(state, before);
            }
            assert!(!state.admins.is_empty());
        }
    }
}
