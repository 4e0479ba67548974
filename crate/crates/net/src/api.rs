//! HTTP API under `/api/v1`. Every body is JSON except rule pack, knowledge
//! pack and export text; every error is `{error, detail, position?}`.

#![allow(clippy::result_large_err)]

use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use knotgate_core::annotation::{parse_registrations, SensorRegistration};
use knotgate_core::gateway::{EgressTarget, GatewayStats, InboundMessage, Transport};
use knotgate_core::rules::parse_rulepack;
use knotgate_core::services::{parse_pattern, CompositionSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{annotation_error, gateway_error, query_error, rule_error, service_error, ErrorBody, ErrorKind};
use crate::runtime::{now_millis, AppState};

pub const OBSERVATIONS_PATH: &str = "/api/v1/observations";

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(OBSERVATIONS_PATH, post(post_observation))
        .route("/api/v1/query", get(get_query))
        .route("/api/v1/sensors", post(post_sensors))
        .route("/api/v1/rulepacks", post(post_rulepack))
        .route("/api/v1/rulepacks/{id}", delete(delete_rulepack))
        .route("/api/v1/packs", post(post_pack))
        .route("/api/v1/packs/{id}", delete(delete_pack))
        .route("/api/v1/subscriptions", post(post_subscription))
        .route("/api/v1/subscriptions/{id}", delete(delete_subscription))
        .route("/api/v1/compositions", post(post_composition))
        .route("/api/v1/stats", get(get_stats))
        .route("/api/v1/export", get(get_export))
        .with_state(state)
}

fn status(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn fail((kind, body): (ErrorKind, ErrorBody)) -> Response {
    (status(kind), Json(body)).into_response()
}

fn bad_request(error: &str, detail: impl ToString) -> Response {
    fail((ErrorKind::BadRequest, ErrorBody::new(error, detail)))
}

fn text(bytes: &Bytes) -> Result<&str, Response> {
    std::str::from_utf8(bytes).map_err(|_| bad_request("DecodeError", "body is not valid UTF-8"))
}

async fn post_observation(State(state): State<AppState>, body: Bytes) -> Response {
    let message = InboundMessage {
        transport: Transport::Http,
        route: OBSERVATIONS_PATH.to_string(),
        payload: body.to_vec(),
        received_at: now_millis(),
    };
    match state.ingest(message).await {
        Some(Ok(receipt)) => (StatusCode::ACCEPTED, Json(receipt)).into_response(),
        Some(Err(e)) => fail(gateway_error(&e)),
        None => {
            (StatusCode::SERVICE_UNAVAILABLE, Json(ErrorBody::new("Unavailable", "pipeline stopped"))).into_response()
        }
    }
}

#[derive(Serialize)]
struct QueryResponse {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

async fn get_query(State(state): State<AppState>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(text) = params.get("q") else {
        return bad_request("MissingParameter", "query parameter q is required");
    };
    let query = match knotgate_core::query::parse_query(text) {
        Ok(q) => q,
        Err(e) => return fail(query_error(&e)),
    };
    let table = knotgate_core::query::evaluate_query(&query, state.read().store());
    Json(QueryResponse { rows: table.string_rows(), columns: table.columns }).into_response()
}

fn is_json(headers: &HeaderMap, body: &str) -> bool {
    let declared = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("json"));
    declared || matches!(body.trim_start().chars().next(), Some('{' | '['))
}

#[derive(Deserialize)]
struct RegistrationBody {
    device_id: String,
    observed_property: String,
    feature_of_interest: String,
    canonical_unit: String,
}

fn registrations_from_json(body: &str) -> Result<Vec<SensorRegistration>, Response> {
    let value: Value = serde_json::from_str(body).map_err(|e| bad_request("DecodeError", e))?;
    let items = match value {
        Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .map(|item| {
            let r: RegistrationBody = serde_json::from_value(item).map_err(|e| bad_request("DecodeError", e))?;
            SensorRegistration::new(&r.device_id, &r.observed_property, &r.feature_of_interest, &r.canonical_unit)
                .map_err(|e| fail(annotation_error(&e)))
        })
        .collect()
}

async fn post_sensors(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let body = match text(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let registrations = if is_json(&headers, body) {
        match registrations_from_json(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        }
    } else {
        match parse_registrations(body) {
            Ok(r) => r,
            Err(e) => return fail(annotation_error(&e)),
        }
    };
    let devices: Vec<String> = registrations.iter().map(|r| r.device_id.clone()).collect();
    let mut gateway = state.write();
    for reg in registrations {
        if let Err(e) = gateway.register_sensor(reg) {
            return fail(gateway_error(&e));
        }
    }
    Json(json!({"registered": devices.len(), "devices": devices})).into_response()
}

async fn post_rulepack(State(state): State<AppState>, body: Bytes) -> Response {
    let body = match text(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let pack = match parse_rulepack(body) {
        Ok(p) => p,
        Err(e) => return fail(rule_error(&e)),
    };
    let (pack_id, rules) = (pack.pack_id.clone(), pack.rules.len());
    let result = state.write().register_rulepack(pack);
    match result {
        Ok(rechain) => {
            let response = json!({
                "pack_id": pack_id,
                "rules": rules,
                "derived": rechain.stats.derived,
                "rounds": rechain.stats.rounds,
            });
            state.dispatch(rechain.deliveries);
            Json(response).into_response()
        }
        Err(e) => fail(gateway_error(&e)),
    }
}

async fn delete_rulepack(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let result = state.write().remove_rulepack(&id);
    match result {
        Ok(rechain) => {
            state.dispatch(rechain.deliveries);
            Json(json!({"pack_id": id, "derived": rechain.stats.derived})).into_response()
        }
        Err(e) => fail(gateway_error(&e)),
    }
}

async fn post_pack(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
    body: Bytes,
) -> Response {
    let Some(id) = params.get("id").filter(|id| !id.is_empty()) else {
        return bad_request("MissingParameter", "query parameter id (the pack id) is required");
    };
    let body = match text(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let result = state.write().load_pack(body, id);
    match result {
        Ok((loaded, rechain)) => {
            state.dispatch(rechain.deliveries);
            Json(json!({"pack_id": id, "loaded": loaded, "derived": rechain.stats.derived})).into_response()
        }
        Err(e) => fail(gateway_error(&e)),
    }
}

async fn delete_pack(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let (removed, rechain) = state.write().unload_pack(&id);
    state.dispatch(rechain.deliveries);
    Json(json!({"pack_id": id, "removed": removed})).into_response()
}

#[derive(Deserialize)]
struct SubscriptionBody {
    pattern: String,
    endpoint: EgressTarget,
}

async fn post_subscription(State(state): State<AppState>, body: Bytes) -> Response {
    let request: SubscriptionBody = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request("DecodeError", e),
    };
    let pattern = match parse_pattern(&request.pattern) {
        Ok(p) => p,
        Err(e) => return fail((ErrorKind::BadRequest, ErrorBody::new("SyntaxError", &e).at(Some(e.position)))),
    };
    let result = state.write().services_mut().subscribe(pattern, request.endpoint);
    match result {
        Ok(id) => (StatusCode::CREATED, Json(json!({"id": id}))).into_response(),
        Err(e) => fail(service_error(&e)),
    }
}

async fn delete_subscription(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if state.write().services_mut().unsubscribe(&id) {
        Json(json!({"id": id})).into_response()
    } else {
        fail((ErrorKind::NotFound, ErrorBody::new("UnknownSubscription", format!("no subscription {id:?}"))))
    }
}

async fn post_composition(State(state): State<AppState>, body: Bytes) -> Response {
    let spec: CompositionSpec = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return bad_request("DecodeError", e),
    };
    let result = state.write().services_mut().register_composition(spec);
    match result {
        Ok(id) => (StatusCode::CREATED, Json(json!({"id": id}))).into_response(),
        Err(e) => fail(service_error(&e)),
    }
}

#[derive(Serialize)]
struct StatsResponse {
    #[serde(flatten)]
    gateway: GatewayStats,
    deliveries: DeliveryCounts,
}

#[derive(Serialize)]
struct DeliveryCounts {
    delivered: usize,
    failed: usize,
}

async fn get_stats(State(state): State<AppState>) -> Response {
    let gateway = state.read().stats();
    let log = state.deliveries.lock().unwrap_or_else(|e| e.into_inner());
    let deliveries = DeliveryCounts { delivered: log.delivered, failed: log.failed };
    Json(StatsResponse { gateway, deliveries }).into_response()
}

async fn get_export(State(state): State<AppState>) -> Response {
    let body = state.read().export();
    ([(header::CONTENT_TYPE, "application/n-triples")], body).into_response()
}
