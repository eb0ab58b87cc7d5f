//! The explorer and write-gateway HTTP API.
//!
//! Reads are public by design and answer straight from committed state:
//! `GET /blocks/latest`, `/blocks/{height}`, `/tx/{id}`, `/receipts/{txid}`,
//! `/trace/{lot_id}`, `/anchors`, `/tangle/messages/{id}`. Responses are
//! canonical JSON bytes, so repeated reads between blocks are byte
//! identical.
//!
//! Writes (`POST /tx`, `POST /ingest`) require a bearer token from the
//! configured issuer: 401 for a missing, malformed, or expired token, 403
//! when the token's role is not permitted for the attempted call. The token
//! gate runs in front of the on-chain ACL, which enforces the same table
//! per sender address at dispatch time.

use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use trellis_anchor::PublicChainStub;
use trellis_contracts::Host;
use trellis_identity::{verify_token, Token, TokenError};
use trellis_ledger::crypto::VerifyingKey;
use trellis_ledger::encoding::Value;
use trellis_ledger::{canonical_encode, Chain, Digest, Transaction};
use trellis_tangle::{IngestRecord, Tangle};

use crate::live::LiveNode;

/// What the router serves: a live writable node or a read-only snapshot
/// loaded from files.
pub enum Backend {
    Live(LiveNode),
    Snapshot {
        chain: Chain<Host>,
        tangle: Option<Tangle>,
        stub: Option<PublicChainStub>,
    },
}

impl Backend {
    fn chain(&self) -> &Chain<Host> {
        match self {
            Backend::Live(node) => &node.chain,
            Backend::Snapshot { chain, .. } => chain,
        }
    }

    fn tangle(&self) -> Option<&Tangle> {
        match self {
            Backend::Live(node) => Some(&node.tangle),
            Backend::Snapshot { tangle, .. } => tangle.as_ref(),
        }
    }

    fn stub(&self) -> Option<&PublicChainStub> {
        match self {
            Backend::Live(node) => Some(&node.stub),
            Backend::Snapshot { stub, .. } => stub.as_ref(),
        }
    }

    fn clock_s(&self) -> u64 {
        match self {
            Backend::Live(node) => node.clock_s(),
            Backend::Snapshot { chain, .. } => chain.latest().timestamp,
        }
    }
}

pub struct GatewayApp {
    pub backend: Backend,
    pub issuer_pub: VerifyingKey,
}

pub type SharedApp = Arc<Mutex<GatewayApp>>;

pub fn router(app: SharedApp) -> Router {
    Router::new()
        .route("/blocks/latest", get(blocks_latest))
        .route("/blocks/{height}", get(block_at))
        .route("/tx/{id}", get(tx_by_id))
        .route("/receipts/{id}", get(receipt_by_id))
        .route("/trace/{lot_id}", get(trace))
        .route("/anchors", get(anchors))
        .route("/tangle/messages/{id}", get(tangle_message))
        .route("/tx", post(submit_tx))
        .route("/ingest", post(ingest))
        .with_state(app)
}

fn json_response(status: StatusCode, value: &Value) -> Response {
    let body = canonical_encode(value).unwrap_or_else(|_| b"{}".to_vec());
    (
        status,
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        body,
    )
        .into_response()
}

fn error_response(status: StatusCode, error: &str, detail: impl Into<String>) -> Response {
    json_response(
        status,
        &Value::map([("detail", detail.into().into()), ("error", error.into())]),
    )
}

fn not_found(what: &str) -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", what)
}

async fn blocks_latest(State(app): State<SharedApp>) -> Response {
    let app = app.lock().expect("mutex");
    json_response(StatusCode::OK, &app.backend.chain().latest().to_value())
}

async fn block_at(State(app): State<SharedApp>, Path(height): Path<String>) -> Response {
    let app = app.lock().expect("mutex");
    let Ok(height) = height.parse::<u64>() else {
        return error_response(StatusCode::BAD_REQUEST, "bad_request", "height must be an integer");
    };
    match app.backend.chain().block_at(height) {
        Some(block) => json_response(StatusCode::OK, &block.to_value()),
        None => not_found("no block at that height"),
    }
}

fn parse_digest(s: &str) -> Option<Digest> {
    Digest::from_hex(s).ok()
}

async fn tx_by_id(State(app): State<SharedApp>, Path(id): Path<String>) -> Response {
    let app = app.lock().expect("mutex");
    let Some(id) = parse_digest(&id) else {
        return error_response(StatusCode::BAD_REQUEST, "bad_request", "id must be 32 hex bytes");
    };
    match app.backend.chain().find_tx(&id) {
        Some((height, index, tx)) => json_response(
            StatusCode::OK,
            &Value::map([
                ("height", height.into()),
                ("index", index.into()),
                ("tx", tx.to_value()),
            ]),
        ),
        None => not_found("unknown transaction"),
    }
}

async fn receipt_by_id(State(app): State<SharedApp>, Path(id): Path<String>) -> Response {
    let app = app.lock().expect("mutex");
    let Some(id) = parse_digest(&id) else {
        return error_response(StatusCode::BAD_REQUEST, "bad_request", "id must be 32 hex bytes");
    };
    match app.backend.chain().receipt_for(&id) {
        Some(receipt) => json_response(StatusCode::OK, &receipt.to_value()),
        None => not_found("unknown transaction"),
    }
}

async fn trace(State(app): State<SharedApp>, Path(lot_id): Path<String>) -> Response {
    let app = app.lock().expect("mutex");
    match app.backend.chain().state().trace.trace_view(&lot_id) {
        Ok(view) => json_response(StatusCode::OK, &view),
        Err(e) => not_found(&e.to_string()),
    }
}

async fn anchors(State(app): State<SharedApp>) -> Response {
    let app = app.lock().expect("mutex");
    match app.backend.stub() {
        Some(stub) => json_response(StatusCode::OK, &stub.registry().to_value()),
        None => json_response(StatusCode::OK, &Value::List(vec![])),
    }
}

async fn tangle_message(State(app): State<SharedApp>, Path(id): Path<String>) -> Response {
    let app = app.lock().expect("mutex");
    let Some(id) = parse_digest(&id) else {
        return error_response(StatusCode::BAD_REQUEST, "bad_request", "id must be 32 hex bytes");
    };
    match app.backend.tangle().and_then(|t| t.get(&id)) {
        Some(msg) => {
            let confirmed = app.backend.tangle().is_some_and(|t| t.is_confirmed(&id));
            let mut m = match msg.to_value() {
                Value::Map(m) => m,
                _ => unreachable!(),
            };
            m.insert("confirmed".into(), confirmed.into());
            json_response(StatusCode::OK, &Value::Map(m))
        }
        None => not_found("unknown tangle message"),
    }
}

/// Extracts and verifies the bearer token; returns the bound role.
fn check_token(app: &GatewayApp, headers: &HeaderMap) -> Result<String, Response> {
    let header = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| error_response(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
    let token_str = header
        .strip_prefix("Bearer ")
        .ok_or_else(|| error_response(StatusCode::UNAUTHORIZED, "unauthorized", "authorization must be a bearer token"))?;
    let token = Token::decode(token_str)
        .map_err(|e| error_response(StatusCode::UNAUTHORIZED, "unauthorized", e.to_string()))?;
    match verify_token(&app.issuer_pub, &token, app.backend.clock_s()) {
        Ok(claims) => Ok(claims.role),
        Err(e @ (TokenError::Expired | TokenError::NotYetValid | TokenError::BadSignature)) => {
            Err(error_response(StatusCode::UNAUTHORIZED, "unauthorized", e.to_string()))
        }
        Err(e) => Err(error_response(StatusCode::UNAUTHORIZED, "unauthorized", e.to_string())),
    }
}

/// Role gate for a contract call: the token's role must appear in the
/// method's ACL. A registry binding for some address with that role stands
/// in for the role itself when evaluating the table.
fn role_permitted(chain: &Chain<Host>, role: &str, contract: &str, method: &str) -> bool {
    let host = chain.state();
    let Some(entry) = host.acl.method(contract, method) else {
        return false;
    };
    entry.roles.contains(role)
}

async fn submit_tx(
    State(app): State<SharedApp>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let mut app = app.lock().expect("mutex");
    let role = match check_token(&app, &headers) {
        Ok(role) => role,
        Err(resp) => return resp,
    };
    let value = match trellis_ledger::decode_value(&body) {
        Ok(v) => v,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    let tx = match Transaction::from_value(&value) {
        Ok(tx) => tx,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    if !role_permitted(app.backend.chain(), &role, &tx.contract, &tx.method) {
        return error_response(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("role {role} is not permitted to call {}.{}", tx.contract, tx.method),
        );
    }
    match &mut app.backend {
        Backend::Live(node) => match node.submit_tx(tx) {
            Ok(receipt) => {
                let receipt = receipt.to_value();
                json_response(StatusCode::OK, &receipt)
            }
            Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, "rejected", e.to_string()),
        },
        Backend::Snapshot { .. } => error_response(
            StatusCode::METHOD_NOT_ALLOWED,
            "read_only",
            "this explorer serves a static snapshot",
        ),
    }
}

async fn ingest(State(app): State<SharedApp>, headers: HeaderMap, body: Bytes) -> Response {
    let mut app = app.lock().expect("mutex");
    let role = match check_token(&app, &headers) {
        Ok(role) => role,
        Err(resp) => return resp,
    };
    if role != "baas_provider" {
        return error_response(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("role {role} is not permitted to ingest telemetry"),
        );
    }
    let mut accepted = Vec::new();
    for line in body.split(|b| *b == b'\n') {
        if line.is_empty() {
            continue;
        }
        let record = match IngestRecord::from_line(line) {
            Ok(r) => r,
            Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
        };
        match &mut app.backend {
            Backend::Live(node) => match node.ingest(record) {
                Ok(id) => accepted.push(id.value()),
                Err(e) => {
                    return error_response(StatusCode::UNPROCESSABLE_ENTITY, "rejected", e.to_string())
                }
            },
            Backend::Snapshot { .. } => {
                return error_response(
                    StatusCode::METHOD_NOT_ALLOWED,
                    "read_only",
                    "this explorer serves a static snapshot",
                )
            }
        }
    }
    json_response(StatusCode::OK, &Value::map([("accepted", Value::List(accepted))]))
}
