//! Dispatch-level tests: ACL enforcement, receipts for failed calls, state
//! rollback, and the deployer gate, all through real committed blocks.

use std::collections::BTreeMap;

use trellis_contracts::{default_acl, GenesisSpec, Host, NodeKind};
use trellis_ledger::encoding::Value;
use trellis_ledger::{Chain, Digest, KeyPair, StateMachine, Transaction};

const SEED: u64 = 4242;

struct Net {
    chain: Chain<Host>,
    validators: Vec<KeyPair>,
    actors: BTreeMap<&'static str, KeyPair>,
    clock: u64,
}

fn role_actors() -> [(&'static str, &'static str); 6] {
    [
        ("winery", "wine_producer"),
        ("corkery", "cork_producer"),
        ("asl", "health_authority"),
        ("laore", "quality_authority"),
        ("coordinator", "baas_provider"),
        ("customer", "external_user"),
    ]
}

fn setup() -> Net {
    let admin = KeyPair::derive(SEED, "admin");
    let validators: Vec<KeyPair> = (0..4).map(|i| KeyPair::derive(SEED, &format!("v{i}"))).collect();
    let mut actors: BTreeMap<&'static str, KeyPair> = BTreeMap::new();
    let mut bindings = vec![(admin.address, "baas_provider".to_string())];
    for (name, role) in role_actors() {
        let key = KeyPair::derive(SEED, name);
        bindings.push((key.address, role.to_string()));
        actors.insert(name, key);
    }
    actors.insert("admin", admin.clone());
    let mut schedules = BTreeMap::new();
    schedules.insert(
        "wine".to_string(),
        ["cultivating", "harvesting", "fermenting", "aging", "bottling"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    );
    schedules.insert(
        "cork".to_string(),
        ["harvesting_bark", "processing", "quality_control", "finishing"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    );
    let spec = GenesisSpec {
        chain_id: "dispatch-test".into(),
        admins: vec![admin.address],
        nodes: validators.iter().map(|k| (k.address, NodeKind::Validator)).collect(),
        deployers: vec![],
        role_bindings: bindings,
        vocabulary: trellis_contracts::genesis::ALL_ROLES.iter().map(|r| r.to_string()).collect(),
        acl: default_acl(),
        schedules,
        contracts: ["permissioning", "identity", "traceability", "host"]
            .iter()
            .map(|c| c.to_string())
            .collect(),
        open_deployers: false,
        config_digest: Digest::of(b"dispatch-test-config"),
    };
    Net { chain: spec.build_chain(&admin), validators, actors, clock: 0 }
}

impl Net {
    fn commit(&mut self, txs: Vec<Transaction>) {
        self.clock += 60;
        let proposer = self.validators[0].clone();
        let refs: Vec<&KeyPair> = self.validators.iter().collect();
        self.chain.seal_next(&proposer, &refs, txs, self.clock).unwrap();
    }

    fn call(&mut self, actor: &str, nonce: u64, contract: &str, method: &str, args: Value) -> Digest {
        let key = self.actors[actor].clone();
        let tx = Transaction::build(&key, nonce, contract, method, args).unwrap();
        let id = tx.id;
        self.commit(vec![tx]);
        id
    }

    fn receipt_code(&self, id: &Digest) -> Option<String> {
        self.chain
            .receipt_for(id)
            .and_then(|r| r.result.as_ref().err().map(|e| e.code().to_string()))
    }
}

#[test]
fn producer_records_stage_and_unauthorized_caller_cannot() {
    let mut net = setup();
    net.call("winery", 0, "traceability", "register_lot",
        Value::map([("lot_id", "wine-1".into()), ("product", "wine".into())]));
    let ok_id = net.call("winery", 1, "traceability", "record_stage",
        Value::map([
            ("lot_id", "wine-1".into()),
            ("stage_name", "cultivating".into()),
            ("batch_digest", Value::Null),
            ("documents", Value::list([])),
        ]));
    assert!(net.chain.receipt_for(&ok_id).unwrap().is_ok());

    let before = net.chain.state().digest();
    let bad_id = net.call("customer", 0, "traceability", "record_stage",
        Value::map([
            ("lot_id", "wine-1".into()),
            ("stage_name", "harvesting".into()),
            ("batch_digest", Value::Null),
            ("documents", Value::list([])),
        ]));
    assert_eq!(net.receipt_code(&bad_id).as_deref(), Some("Unauthorized"));
    assert_eq!(net.chain.state().digest(), before, "failed call must not change state");
}

#[test]
fn unknown_contract_is_reported() {
    let mut net = setup();
    let id = net.call("winery", 0, "cellar-notes", "write", Value::map([("x", 1i64.into())]));
    assert_eq!(net.receipt_code(&id).as_deref(), Some("UnknownContract"));
}

#[test]
fn stage_completed_event_is_emitted() {
    let mut net = setup();
    net.call("winery", 0, "traceability", "register_lot",
        Value::map([("lot_id", "wine-1".into()), ("product", "wine".into())]));
    let id = net.call("winery", 1, "traceability", "record_stage",
        Value::map([
            ("lot_id", "wine-1".into()),
            ("stage_name", "cultivating".into()),
            ("batch_digest", Value::Null),
            ("documents", Value::list([])),
        ]));
    let receipt = net.chain.receipt_for(&id).unwrap();
    assert_eq!(receipt.events.len(), 1);
    assert_eq!(receipt.events[0].kind, "stage_completed");
    assert_eq!(receipt.events[0].fields["lot"].as_str(), Some("wine-1"));
    assert_eq!(receipt.events[0].fields["stage"].as_str(), Some("cultivating"));
}

#[test]
fn deployer_gate_on_contract_registration() {
    let mut net = setup();
    // not yet a deployer
    let rejected = net.call("coordinator", 0, "host", "register_contract",
        Value::map([("id", "cellar-notes".into())]));
    assert_eq!(net.receipt_code(&rejected).as_deref(), Some("NotDeployer"));

    let coordinator = net.actors["coordinator"].address;
    net.call("admin", 0, "permissioning", "set_deployer",
        Value::map([("addr", coordinator.value()), ("allowed", true.into())]));
    let accepted = net.call("coordinator", 1, "host", "register_contract",
        Value::map([("id", "cellar-notes".into())]));
    assert!(net.chain.receipt_for(&accepted).unwrap().is_ok());
    assert!(net.chain.state().is_registered("cellar-notes"));

    let duplicate = net.call("coordinator", 2, "host", "register_contract",
        Value::map([("id", "cellar-notes".into())]));
    assert_eq!(net.receipt_code(&duplicate).as_deref(), Some("DuplicateContract"));

    // the registered contract exists but has no methods
    let no_method = net.call("winery", 0, "cellar-notes", "write", Value::map([("x", 1i64.into())]));
    assert_eq!(net.receipt_code(&no_method).as_deref(), Some("UnknownMethod"));

    // revoke and verify the gate closes again
    net.call("admin", 1, "permissioning", "set_deployer",
        Value::map([("addr", coordinator.value()), ("allowed", false.into())]));
    let closed = net.call("coordinator", 3, "host", "register_contract",
        Value::map([("id", "other".into())]));
    assert_eq!(net.receipt_code(&closed).as_deref(), Some("NotDeployer"));
}

#[test]
fn role_rebind_emits_audit_event() {
    let mut net = setup();
    let customer = net.actors["customer"].address;
    let id = net.call("admin", 0, "identity", "bind_address_role",
        Value::map([("addr", customer.value()), ("role", "wine_producer".into())]));
    let receipt = net.chain.receipt_for(&id).unwrap();
    assert!(receipt.is_ok());
    assert_eq!(receipt.events[0].kind, "role_bound");
    assert_eq!(receipt.events[0].fields["previous"].as_str(), Some("external_user"));
}

#[test]
fn get_trace_is_readable_by_external_user_and_leaves_state_alone() {
    let mut net = setup();
    net.call("winery", 0, "traceability", "register_lot",
        Value::map([("lot_id", "wine-1".into()), ("product", "wine".into())]));
    let before = net.chain.state().digest();
    let id = net.call("customer", 0, "traceability", "get_trace",
        Value::map([("lot_id", "wine-1".into())]));
    let receipt = net.chain.receipt_for(&id).unwrap();
    let view = receipt.result.as_ref().unwrap();
    assert_eq!(view.as_map().unwrap()["lot_id"].as_str(), Some("wine-1"));
    assert_eq!(net.chain.state().digest(), before);
}

/// Exhaustive (role x method) matrix against the documented ACL table.
#[test]
fn acl_matrix_matches_documented_table() {
    let documented: &[(&str, &str, &[&str])] = &[
        ("traceability", "register_lot", &["wine_producer", "cork_producer"]),
        ("traceability", "record_stage", &["wine_producer", "cork_producer"]),
        ("traceability", "link_component", &["wine_producer", "cork_producer"]),
        ("traceability", "certify_stage", &["health_authority", "quality_authority"]),
        ("traceability", "record_telemetry", &["baas_provider"]),
        (
            "traceability",
            "get_trace",
            &[
                "wine_producer",
                "cork_producer",
                "health_authority",
                "quality_authority",
                "baas_provider",
                "external_user",
            ],
        ),
        ("permissioning", "add_admin", &["baas_provider"]),
        ("permissioning", "enroll_node", &["baas_provider"]),
        ("permissioning", "promote_validator", &["baas_provider"]),
        ("permissioning", "set_deployer", &["baas_provider"]),
        ("identity", "bind_address_role", &["baas_provider"]),
        (
            "host",
            "register_contract",
            &[
                "wine_producer",
                "cork_producer",
                "health_authority",
                "quality_authority",
                "baas_provider",
                "external_user",
            ],
        ),
    ];
    let net = setup();
    let host = net.chain.state();
    // every documented row matches authorize() for every role
    for (contract, method, allowed) in documented {
        for (actor, role) in role_actors() {
            let addr = net.actors[actor].address;
            let got = trellis_identity::authorize(&host.roles, &host.acl, addr, contract, method)
                .unwrap();
            assert_eq!(
                got,
                allowed.contains(&role),
                "role {role} on {contract}.{method}"
            );
        }
    }
    // and the table contains nothing beyond the documented rows
    let mut count = 0;
    for (_, methods) in host.acl.contracts() {
        count += methods.len();
    }
    assert_eq!(count, documented.len());
}

#[test]
fn replay_on_second_host_reproduces_state_digest() {
    let mut net = setup();
    net.call("winery", 0, "traceability", "register_lot",
        Value::map([("lot_id", "wine-1".into()), ("product", "wine".into())]));
    net.call("corkery", 0, "traceability", "register_lot",
        Value::map([("lot_id", "cork-1".into()), ("product", "cork".into())]));
    let replayed: Chain<Host> = Chain::replay(net.chain.blocks().to_vec()).unwrap();
    assert_eq!(replayed.state().digest(), net.chain.state().digest());
    assert_eq!(replayed.state(), net.chain.state());
}
