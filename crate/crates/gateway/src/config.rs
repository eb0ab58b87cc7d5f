//! Network configuration: actors, keys, schedules, anchoring and telemetry
//! cadence. One JSON file feeds every module; its digest is embedded in the
//! genesis transaction so a chain pins the exact configuration it was built
//! from.
//!
//! Keys are derived deterministically from (seed, actor name). Any name can
//! be resolved to a keypair, including names that never appear in the file;
//! the file decides which addresses get registry entries and role bindings.

use std::collections::BTreeMap;

use thiserror::Error;

use trellis_anchor::AnchorPolicy;
use trellis_consensus::SimConfig;
use trellis_contracts::{default_acl, GenesisSpec, NodeKind};
use trellis_ledger::encoding::{self, Value, ValueError};
use trellis_ledger::{Address, Chain, Digest, KeyPair};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Value(#[from] ValueError),
}

#[derive(Debug, Clone)]
pub struct ActorSpec {
    pub name: String,
    pub role: Option<String>,
    pub node: Option<NodeKind>,
    pub admin: bool,
    pub device: bool,
}

#[derive(Debug, Clone)]
pub struct TangleCadence {
    pub checkpoint_max_batch: usize,
    pub checkpoint_max_age_s: u64,
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub chain_id: String,
    pub public_chain_id: String,
    pub seed: u64,
    pub block_interval_s: u64,
    pub latency_ms: (u64, u64),
    pub actors: Vec<ActorSpec>,
    pub gateway_node: String,
    pub issuer: String,
    pub coordinator: String,
    pub anchor_key_name: String,
    pub anchor_policy: AnchorPolicy,
    pub tangle: TangleCadence,
    pub stage_schedules: BTreeMap<String, Vec<String>>,
    pub roles: Vec<String>,
    pub token_ttl_s: u64,
    pub config_digest: Digest,
}

impl NetworkConfig {
    pub fn from_json(bytes: &[u8]) -> Result<NetworkConfig, ConfigError> {
        Self::from_json_with_seed(bytes, None)
    }

    /// Parses the file, optionally overriding the seed. The config digest is
    /// computed over the canonical re-encoding of the effective config, so a
    /// seed override produces a distinct genesis.
    pub fn from_json_with_seed(
        bytes: &[u8],
        seed_override: Option<u64>,
    ) -> Result<NetworkConfig, ConfigError> {
        let mut value = trellis_ledger::decode_value(bytes)?;
        if let (Some(seed), Value::Map(m)) = (seed_override, &mut value) {
            m.insert("seed".into(), seed.into());
        }
        let config_digest =
            Digest::of_value(&value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = value
            .as_map()
            .ok_or_else(|| ConfigError::Invalid("config must be a JSON object".into()))?;
        let mut actors = Vec::new();
        for item in encoding::field_list(m, "actors")? {
            let a = item
                .as_map()
                .ok_or_else(|| ConfigError::Invalid("actor must be an object".into()))?;
            let node = match a.get("node").and_then(|v| v.as_str()) {
                Some(s) => Some(
                    NodeKind::parse(s)
                        .ok_or_else(|| ConfigError::Invalid(format!("bad node kind {s}")))?,
                ),
                None => None,
            };
            actors.push(ActorSpec {
                name: encoding::field_str(a, "name")?.to_owned(),
                role: a.get("role").and_then(|v| v.as_str()).map(str::to_owned),
                node,
                admin: a.get("admin").and_then(|v| v.as_bool()).unwrap_or(false),
                device: a.get("device").and_then(|v| v.as_bool()).unwrap_or(false),
            });
        }
        let latency = encoding::field_list(m, "latency_ms")?;
        if latency.len() != 2 {
            return Err(ConfigError::Invalid("latency_ms must be [min, max]".into()));
        }
        let anchor = encoding::field_map(m, "anchor")?;
        let tangle = encoding::field_map(m, "tangle")?;
        let mut schedules = BTreeMap::new();
        for (product, stages) in encoding::field_map(m, "stage_schedules")? {
            let stages = stages
                .as_list()
                .ok_or_else(|| ConfigError::Invalid("schedule must be a list".into()))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| ConfigError::Invalid("stage must be a string".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            schedules.insert(product.clone(), stages);
        }
        let roles = encoding::field_list(m, "roles")?
            .iter()
            .map(|r| {
                r.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| ConfigError::Invalid("role must be a string".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut event_triggers = std::collections::BTreeSet::new();
        for t in encoding::field_list(anchor, "event_triggers")? {
            event_triggers.insert(
                t.as_str()
                    .ok_or_else(|| ConfigError::Invalid("trigger must be a string".into()))?
                    .to_owned(),
            );
        }
        let config = NetworkConfig {
            chain_id: encoding::field_str(m, "chain_id")?.to_owned(),
            public_chain_id: encoding::field_str(anchor, "public_chain_id")?.to_owned(),
            seed: encoding::field_u64(m, "seed")?,
            block_interval_s: encoding::field_u64(m, "block_interval_s")?,
            latency_ms: (
                latency[0].as_u64().ok_or_else(|| ConfigError::Invalid("latency".into()))?,
                latency[1].as_u64().ok_or_else(|| ConfigError::Invalid("latency".into()))?,
            ),
            actors,
            gateway_node: encoding::field_str(m, "gateway_node")?.to_owned(),
            issuer: encoding::field_str(m, "issuer")?.to_owned(),
            coordinator: encoding::field_str(m, "coordinator")?.to_owned(),
            anchor_key_name: encoding::field_str(anchor, "key")?.to_owned(),
            anchor_policy: AnchorPolicy {
                interval_s: encoding::field_u64(anchor, "interval_s")?,
                event_triggers,
            },
            tangle: TangleCadence {
                checkpoint_max_batch: encoding::field_u64(tangle, "checkpoint_max_batch")? as usize,
                checkpoint_max_age_s: encoding::field_u64(tangle, "checkpoint_max_age_s")?,
            },
            stage_schedules: schedules,
            roles,
            token_ttl_s: encoding::field_u64(m, "token_ttl_s")?,
            config_digest,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !self.actors.iter().any(|a| a.admin) {
            return Err(ConfigError::Invalid("at least one admin actor required".into()));
        }
        if !self
            .actors
            .iter()
            .any(|a| a.node == Some(NodeKind::Validator))
        {
            return Err(ConfigError::Invalid("at least one validator node required".into()));
        }
        if self.latency_ms.0 > self.latency_ms.1 {
            return Err(ConfigError::Invalid("latency_ms min exceeds max".into()));
        }
        let gateway = self
            .actors
            .iter()
            .find(|a| a.name == self.gateway_node)
            .ok_or_else(|| ConfigError::Invalid("gateway_node not in actors".into()))?;
        if gateway.node.is_none() {
            return Err(ConfigError::Invalid("gateway_node must be a node actor".into()));
        }
        for a in &self.actors {
            if let Some(role) = &a.role {
                if !self.roles.contains(role) {
                    return Err(ConfigError::Invalid(format!(
                        "actor {} has role {role} outside the vocabulary",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic keypair for any named actor (or fresh label).
    pub fn key(&self, name: &str) -> KeyPair {
        KeyPair::derive(self.seed, name)
    }

    pub fn address(&self, name: &str) -> Address {
        self.key(name).address
    }

    pub fn admins(&self) -> Vec<&ActorSpec> {
        self.actors.iter().filter(|a| a.admin).collect()
    }

    /// The operator key that signs genesis: the first admin actor.
    pub fn genesis_signer(&self) -> KeyPair {
        let first = self
            .actors
            .iter()
            .find(|a| a.admin)
            .expect("validated: at least one admin");
        self.key(&first.name)
    }

    pub fn genesis_spec(&self) -> GenesisSpec {
        let mut role_bindings = Vec::new();
        for a in &self.actors {
            if let Some(role) = &a.role {
                role_bindings.push((self.address(&a.name), role.clone()));
            }
        }
        GenesisSpec {
            chain_id: self.chain_id.clone(),
            admins: self
                .actors
                .iter()
                .filter(|a| a.admin)
                .map(|a| self.address(&a.name))
                .collect(),
            nodes: self
                .actors
                .iter()
                .filter_map(|a| a.node.map(|k| (self.address(&a.name), k)))
                .collect(),
            deployers: vec![],
            role_bindings,
            vocabulary: self.roles.clone(),
            acl: default_acl(),
            schedules: self.stage_schedules.clone(),
            contracts: ["permissioning", "identity", "traceability", "host"]
                .iter()
                .map(|c| c.to_string())
                .collect(),
            open_deployers: false,
            config_digest: self.config_digest,
        }
    }

    pub fn build_genesis_chain(&self) -> Chain<trellis_contracts::Host> {
        self.genesis_spec().build_chain(&self.genesis_signer())
    }

    pub fn sim_config(&self, duration_s: u64) -> SimConfig {
        SimConfig {
            seed: self.seed,
            nodes: self
                .actors
                .iter()
                .filter_map(|a| a.node.map(|k| (self.address(&a.name), k)))
                .collect(),
            latency_ms: self.latency_ms,
            block_interval_s: self.block_interval_s,
            duration_s,
            partitions: vec![],
        }
    }

    pub fn node_keys(&self) -> BTreeMap<Address, KeyPair> {
        self.actors
            .iter()
            .filter(|a| a.node.is_some())
            .map(|a| {
                let k = self.key(&a.name);
                (k.address, k)
            })
            .collect()
    }

    /// Seeded RNG stream, independent per label.
    pub fn rng(&self, label: &str) -> rand_chacha::ChaCha20Rng {
        use rand::SeedableRng;
        let digest = Digest::of(format!("{}/{label}", self.seed).as_bytes());
        rand_chacha::ChaCha20Rng::from_seed(digest.0)
    }

    pub fn vocabulary(&self) -> trellis_identity::RoleVocabulary {
        trellis_identity::RoleVocabulary::new(self.roles.iter().cloned())
    }
}
