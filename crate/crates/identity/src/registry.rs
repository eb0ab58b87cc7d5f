//! Address-to-role bindings and per-method ACLs.
//!
//! One role per address; multi-role users hold multiple addresses. Binding
//! mutations are admin-gated and flow through the contract host, so the
//! registry here only carries the data operations plus the pure
//! [`authorize`] check the host runs before every dispatch.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::Address;

/// The configured set of role names tokens and bindings may use.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleVocabulary(BTreeSet<String>);

impl RoleVocabulary {
    pub fn new<S: Into<String>>(roles: impl IntoIterator<Item = S>) -> RoleVocabulary {
        RoleVocabulary(roles.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, role: &str) -> bool {
        self.0.contains(role)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|s| s.as_str())
    }

    pub fn to_value(&self) -> Value {
        Value::list(self.0.iter().map(|r| r.as_str().into()))
    }

    pub fn from_value(value: &Value) -> Result<RoleVocabulary, ValueError> {
        let items = value.as_list().ok_or(ValueError::Expected {
            field: "vocabulary",
            expected: "list",
        })?;
        let mut set = BTreeSet::new();
        for item in items {
            set.insert(
                item.as_str()
                    .ok_or(ValueError::Expected { field: "vocabulary", expected: "string" })?
                    .to_owned(),
            );
        }
        Ok(RoleVocabulary(set))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BindError {
    #[error("caller is not an admin")]
    NotAdmin,
    #[error("unknown role \"{0}\"")]
    UnknownRole(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthzError {
    #[error("unknown contract \"{0}\"")]
    UnknownContract(String),
    #[error("unknown method \"{contract}.{method}\"")]
    UnknownMethod { contract: String, method: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleRegistry {
    bindings: BTreeMap<Address, String>,
}

impl RoleRegistry {
    pub fn role_of(&self, addr: &Address) -> Option<&str> {
        self.bindings.get(addr).map(|s| s.as_str())
    }

    pub fn bindings(&self) -> &BTreeMap<Address, String> {
        &self.bindings
    }

    /// Unchecked insert, used only while installing genesis state.
    pub fn install(&mut self, addr: Address, role: String) {
        self.bindings.insert(addr, role);
    }

    pub fn to_value(&self) -> Value {
        Value::Map(
            self.bindings
                .iter()
                .map(|(a, r)| (a.to_hex(), r.as_str().into()))
                .collect(),
        )
    }

    pub fn from_value(value: &Value) -> Result<RoleRegistry, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "role registry",
            expected: "map",
        })?;
        let mut bindings = BTreeMap::new();
        for (k, v) in m {
            bindings.insert(
                Address::from_hex(k)?,
                v.as_str()
                    .ok_or(ValueError::Expected { field: "role", expected: "string" })?
                    .to_owned(),
            );
        }
        Ok(RoleRegistry { bindings })
    }
}

/// Binds (or rebinds) an address to a role. Returns the previous role when
/// overwriting, so callers can emit an audit event.
pub fn bind_address_role(
    registry: &mut RoleRegistry,
    admins: &BTreeSet<Address>,
    vocabulary: &RoleVocabulary,
    caller: Address,
    addr: Address,
    role: &str,
) -> Result<Option<String>, BindError> {
    if !admins.contains(&caller) {
        return Err(BindError::NotAdmin);
    }
    if !vocabulary.contains(role) {
        return Err(BindError::UnknownRole(role.to_owned()));
    }
    Ok(registry.bindings.insert(addr, role.to_owned()))
}

/// ACL entry for one contract method.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MethodAcl {
    pub roles: BTreeSet<String>,
    pub read_only: bool,
}

impl MethodAcl {
    pub fn new<S: Into<String>>(roles: impl IntoIterator<Item = S>, read_only: bool) -> MethodAcl {
        MethodAcl {
            roles: roles.into_iter().map(Into::into).collect(),
            read_only,
        }
    }
}

/// Role sets per (contract, method), fixed by genesis configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AclTable {
    contracts: BTreeMap<String, BTreeMap<String, MethodAcl>>,
}

impl AclTable {
    pub fn insert(&mut self, contract: &str, method: &str, acl: MethodAcl) {
        self.contracts
            .entry(contract.to_owned())
            .or_default()
            .insert(method.to_owned(), acl);
    }

    pub fn contract(&self, contract: &str) -> Option<&BTreeMap<String, MethodAcl>> {
        self.contracts.get(contract)
    }

    pub fn method(&self, contract: &str, method: &str) -> Option<&MethodAcl> {
        self.contracts.get(contract)?.get(method)
    }

    pub fn contracts(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, MethodAcl>)> {
        self.contracts.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_value(&self) -> Value {
        Value::Map(
            self.contracts
                .iter()
                .map(|(c, methods)| {
                    (
                        c.clone(),
                        Value::Map(
                            methods
                                .iter()
                                .map(|(m, acl)| {
                                    (
                                        m.clone(),
                                        Value::map([
                                            ("read_only", acl.read_only.into()),
                                            (
                                                "roles",
                                                Value::list(
                                                    acl.roles.iter().map(|r| r.as_str().into()),
                                                ),
                                            ),
                                        ]),
                                    )
                                })
                                .collect(),
                        ),
                    )
                })
                .collect(),
        )
    }

    pub fn from_value(value: &Value) -> Result<AclTable, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "acl",
            expected: "map",
        })?;
        let mut table = AclTable::default();
        for (contract, methods) in m {
            let methods = methods.as_map().ok_or(ValueError::Expected {
                field: "acl methods",
                expected: "map",
            })?;
            for (method, entry) in methods {
                let entry = entry.as_map().ok_or(ValueError::Expected {
                    field: "acl entry",
                    expected: "map",
                })?;
                let read_only = encoding::field(entry, "read_only")?
                    .as_bool()
                    .ok_or(ValueError::Expected { field: "read_only", expected: "bool" })?;
                let mut roles = BTreeSet::new();
                for r in encoding::field_list(entry, "roles")? {
                    roles.insert(
                        r.as_str()
                            .ok_or(ValueError::Expected { field: "roles", expected: "string" })?
                            .to_owned(),
                    );
                }
                table.insert(contract, method, MethodAcl { roles, read_only });
            }
        }
        Ok(table)
    }
}

/// True iff the address is bound to a role that appears in the method's ACL.
/// Unbound addresses are simply unauthorized, not an error.
pub fn authorize(
    registry: &RoleRegistry,
    acl: &AclTable,
    addr: Address,
    contract: &str,
    method: &str,
) -> Result<bool, AuthzError> {
    let methods = acl
        .contract(contract)
        .ok_or_else(|| AuthzError::UnknownContract(contract.to_owned()))?;
    let entry = methods.get(method).ok_or_else(|| AuthzError::UnknownMethod {
        contract: contract.to_owned(),
        method: method.to_owned(),
    })?;
    Ok(match registry.role_of(&addr) {
        Some(role) => entry.roles.contains(role),
        None => false,
    })
}
