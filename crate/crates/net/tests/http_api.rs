mod common;

use std::time::Duration;

use common::{fixture, gateway_with, serve, url, wait_for, Webhook};
use knotgate_core::query::{evaluate_query, parse_query};
use knotgate_core::rules::parse_rulepack;
use serde_json::{json, Value};

struct Reply {
    status: u16,
    body: Value,
    text: String,
}

async fn send(request: reqwest::RequestBuilder) -> Reply {
    let response = request.send().await.expect("request succeeds");
    let status = response.status().as_u16();
    let text = response.text().await.unwrap();
    let body = serde_json::from_str(&text).unwrap_or(Value::Null);
    Reply { status, body, text }
}

fn reading(value: f64, unit: &str) -> String {
    json!({"device_id": "thermo1", "sensor_kind": "temperature", "value": value, "unit": unit, "timestamp": 1_700_000_000_000u64})
        .to_string()
}

#[tokio::test]
async fn ingest_golden_path_and_errors() {
    let running = serve(gateway_with(&["slor-health.rules"])).await;
    let http = reqwest::Client::new();
    let obs = url(&running, "/api/v1/observations");

    let r = send(http.post(&obs).body(reading(39.0, "cel"))).await;
    assert_eq!(r.status, 202, "{}", r.text);
    assert_eq!(r.body["observation_iri"], "urn:obs:thermo1:1");
    assert_eq!(r.body["derived"], json!(["<urn:obs:thermo1:1> <urn:knotgate:m3#indicates> <urn:knotgate:m3#Fever> ."]));
    assert_eq!(r.body["triples_added"], 7);

    let r = send(http.post(&obs).body(reading(38.0, "cel"))).await;
    assert_eq!(r.status, 202);
    assert_eq!(r.body["derived"], json!([]));

    let r = send(http.get(url(&running, "/api/v1/stats"))).await;
    assert_eq!(r.body["per_rule"]["fever"], 1);
    assert_eq!(r.body["store_size"], 13);

    let ghost = json!({"device_id": "ghost", "sensor_kind": "temperature", "value": 39.0, "unit": "cel"}).to_string();
    let r = send(http.post(&obs).body(ghost)).await;
    assert_eq!(r.status, 404);
    assert_eq!(r.body["error"], "UnregisteredDevice");
    assert!(r.body["detail"].as_str().unwrap().contains("ghost"));

    let r = send(http.post(&obs).body("{not json")).await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["error"], "DecodeError");

    let r = send(http.post(&obs).body(r#"{"device_id":"thermo1","sensor_kind":"temperature","unit":"cel"}"#)).await;
    assert_eq!(r.status, 400);
    assert!(r.body["detail"].as_str().unwrap().contains("value"));

    let r = send(http.post(&obs).body(reading(39.0, "kelvin"))).await;
    assert_eq!(r.status, 422);
    assert_eq!(r.body["error"], "UnknownUnit");

    let r = send(http.get(url(&running, "/api/v1/stats"))).await;
    assert_eq!(r.body["store_size"], 13, "failed ingests leave the store unchanged");
    running.shutdown();
}

#[tokio::test]
async fn queries_match_the_engine() {
    let running = serve(gateway_with(&["slor-health.rules"])).await;
    let http = reqwest::Client::new();
    let remedies = "SELECT ?r WHERE { m3:Fever m3:hasRemedy ?r }";

    let r = send(http.get(url(&running, "/api/v1/query")).query(&[("q", remedies)])).await;
    assert_eq!(r.status, 200);
    assert_eq!(r.body, json!({"columns": ["r"], "rows": []}));

    let r =
        send(http.post(url(&running, "/api/v1/packs")).query(&[("id", "remedies")]).body(fixture("remedies.nt"))).await;
    assert_eq!(r.status, 200, "{}", r.text);
    assert_eq!(r.body["loaded"], 3);
    for v in [39.0, 37.5, 40.1] {
        send(http.post(url(&running, "/api/v1/observations")).body(reading(v, "cel"))).await;
    }

    for text in [
        remedies,
        "SELECT ?o ?v WHERE { ?o ssn:observationResult ?v } FILTER ?v > 38.0",
        "SELECT ?s ?p WHERE { ?s ?p m3:Fever }",
    ] {
        let r = send(http.get(url(&running, "/api/v1/query")).query(&[("q", text)])).await;
        assert_eq!(r.status, 200);
        let table = evaluate_query(&parse_query(text).unwrap(), running.state.read().store());
        assert_eq!(r.body["columns"], json!(table.columns));
        assert_eq!(r.body["rows"], json!(table.string_rows()));
    }
    let r = send(http.get(url(&running, "/api/v1/query")).query(&[("q", remedies)])).await;
    assert_eq!(r.body["rows"].as_array().unwrap().len(), 3);

    let r =
        send(http.get(url(&running, "/api/v1/query")).query(&[("q", "SELECT ?x WHERE { ?y rdf:type ssn:Sensor }")]))
            .await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["error"], "UnsafeQuery");
    let r = send(http.get(url(&running, "/api/v1/query")).query(&[("q", "SELECT ?a\nWHERE ?a")])).await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["position"], json!({"line": 2, "column": 7}));
    let r = send(http.get(url(&running, "/api/v1/query"))).await;
    assert_eq!(r.status, 400);

    let r = send(http.delete(url(&running, "/api/v1/packs/remedies"))).await;
    assert_eq!(r.body["removed"], 3);
    let r = send(http.post(url(&running, "/api/v1/packs")).body(fixture("remedies.nt"))).await;
    assert_eq!(r.status, 400);
    running.shutdown();
}

#[tokio::test]
async fn rulepack_admin() {
    let running = serve(gateway_with(&[])).await;
    let http = reqwest::Client::new();
    let packs = url(&running, "/api/v1/rulepacks");
    for v in [38.5, 39.0, 40.0] {
        send(http.post(url(&running, "/api/v1/observations")).body(reading(v, "cel"))).await;
    }

    let r = send(http.post(&packs).body(fixture("slor-health.rules"))).await;
    assert_eq!(r.status, 200, "{}", r.text);
    assert_eq!(r.body["pack_id"], "slor-health");
    assert_eq!(r.body["derived"], 3);
    let export = send(http.get(url(&running, "/api/v1/export"))).await.text;
    let r = send(http.post(&packs).body(fixture("slor-health.rules"))).await;
    assert_eq!(r.status, 200);
    assert_eq!(send(http.get(url(&running, "/api/v1/export"))).await.text, export, "idempotent re-post");

    let v2 = fixture("slor-health.rules").replace("> 38.0", "> 39.5");
    send(http.post(&packs).body(v2.clone())).await;
    let mut fresh = gateway_with(&[]);
    fresh.register_rulepack(parse_rulepack(&v2).unwrap()).unwrap();
    for v in [38.5, 39.0, 40.0] {
        let mut r: knotgate_core::RawReading = serde_json::from_str(&reading(v, "cel")).unwrap();
        r.timestamp = 0;
        fresh.ingest(&r).unwrap();
    }
    let fever_rows =
        |text: &str| text.lines().filter(|l| l.contains("m3#indicates")).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(fever_rows(&send(http.get(url(&running, "/api/v1/export"))).await.text), fever_rows(&fresh.export()));
    let r = send(http.get(url(&running, "/api/v1/stats"))).await;
    assert_eq!(r.body["per_rule"]["fever"], 1);

    let unsafe_pack = "PACK bad\nRULE leak : IF ?o m3:indicates m3:Fever THEN ?o m3:alarm ?z .";
    let r = send(http.post(&packs).body(unsafe_pack)).await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["error"], "UnsafeRule");
    assert!(r.body["detail"].as_str().unwrap().contains("?z"));

    let r = send(http.post(&packs).body("PACK bad\nRULE x : IF ?o ?p THEN ?o ?p ?o .")).await;
    assert_eq!(r.status, 400);
    assert_eq!(r.body["error"], "SyntaxError");
    assert_eq!(r.body["position"]["line"], 2);

    let clash = fixture("slor-health.rules").replace("PACK slor-health", "PACK copy");
    let r = send(http.post(&packs).body(clash)).await;
    assert_eq!(r.status, 409);
    assert_eq!(r.body["error"], "RuleIdConflict");

    let r = send(http.delete(url(&running, "/api/v1/rulepacks/slor-health"))).await;
    assert_eq!(r.status, 200);
    let r = send(http.get(url(&running, "/api/v1/stats"))).await;
    assert_eq!(r.body["inferred"], 0);
    let r = send(http.delete(url(&running, "/api/v1/rulepacks/slor-health"))).await;
    assert_eq!(r.status, 404);
    running.shutdown();
}

#[tokio::test]
async fn sensor_registration_formats() {
    let running = serve(knotgate_core::Gateway::new()).await;
    let http = reqwest::Client::new();
    let sensors = url(&running, "/api/v1/sensors");
    let r = send(http.post(&sensors).header("content-type", "text/csv").body(fixture("sensors.csv"))).await;
    assert_eq!(r.status, 200, "{}", r.text);
    assert_eq!(r.body["registered"], 3);
    let one = json!({"device_id": "thermo2", "observed_property": "m3:BodyTemperature", "feature_of_interest": "m3:Patient", "canonical_unit": "unit:DegreeCelsius"});
    let r = send(http.post(&sensors).header("content-type", "application/json").body(one.to_string())).await;
    assert_eq!(r.body["devices"], json!(["thermo2"]));
    let r = send(http.post(&sensors).body("x,not an iri,m3:P,unit:MmHg\n")).await;
    assert_eq!(r.status, 400);
    assert_eq!(running.state.read().annotator().registrations().count(), 4);
    running.shutdown();
}

#[tokio::test]
async fn subscriptions_and_compositions_deliver_to_webhooks() {
    let hook = Webhook::start(0).await;
    let remedies_hook = Webhook::start(0).await;
    let running = serve(gateway_with(&["slor-health.rules"])).await;
    let http = reqwest::Client::new();

    let r = send(
        http.post(url(&running, "/api/v1/subscriptions"))
            .body(json!({"pattern": "?o m3:indicates m3:Fever", "endpoint": {"webhook": hook.url}}).to_string()),
    )
    .await;
    assert_eq!(r.status, 201, "{}", r.text);
    let r = send(
        http.post(url(&running, "/api/v1/subscriptions"))
            .body(json!({"pattern": "?s ?p ?o", "endpoint": {"webhook": hook.url}}).to_string()),
    )
    .await;
    assert_eq!(r.status, 400);

    let mut spec: Value = serde_json::from_str(&fixture("naturopathy.json")).unwrap();
    spec["endpoint"] = json!({"webhook": remedies_hook.url});
    let r = send(http.post(url(&running, "/api/v1/compositions")).body(spec.to_string())).await;
    assert_eq!(r.status, 201, "{}", r.text);
    assert_eq!(r.body["id"], "naturopathy");
    let r = send(http.post(url(&running, "/api/v1/compositions")).body(spec.to_string())).await;
    assert_eq!(r.status, 409);
    let mut broken = spec.clone();
    broken["response_template"] = json!({"x": "{nope}"});
    broken["id"] = json!("other");
    let r = send(http.post(url(&running, "/api/v1/compositions")).body(broken.to_string())).await;
    assert_eq!(r.status, 400);

    send(http.post(url(&running, "/api/v1/packs")).query(&[("id", "remedies")]).body(fixture("remedies.nt"))).await;
    send(http.post(url(&running, "/api/v1/observations")).body(reading(37.0, "cel"))).await;
    send(http.post(url(&running, "/api/v1/observations")).body(reading(39.0, "cel"))).await;

    assert!(wait_for(Duration::from_secs(3), || hook.bodies().len() == 1 && remedies_hook.bodies().len() == 1).await);
    let envelope = &hook.bodies()[0];
    assert_eq!(envelope["rule_id"], "fever");
    assert_eq!(envelope["observation_iri"], "urn:obs:thermo1:2");
    assert_eq!(envelope["timestamp"], 1_700_000_000_000u64);
    assert_eq!(
        remedies_hook.bodies()[0],
        json!({"state": "m3:Fever", "suggestions": ["m3:ColdCompress", "m3:GingerTea", "m3:Hydration"]})
    );
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(hook.bodies().len(), 1);
    running.shutdown();
}

#[tokio::test]
async fn failing_webhook_is_recorded_after_three_attempts() {
    let hook = Webhook::start(usize::MAX).await;
    let running = serve(gateway_with(&["slor-health.rules"])).await;
    let http = reqwest::Client::new();
    send(
        http.post(url(&running, "/api/v1/subscriptions"))
            .body(json!({"pattern": "?o m3:indicates m3:Fever", "endpoint": {"webhook": hook.url}}).to_string()),
    )
    .await;
    let r = send(http.post(url(&running, "/api/v1/observations")).body(reading(39.0, "cel"))).await;
    assert_eq!(r.status, 202);
    let deliveries = running.state.deliveries.clone();
    assert!(wait_for(Duration::from_secs(3), || deliveries.lock().unwrap().failed == 1).await);
    let record = deliveries.lock().unwrap().recent.last().cloned().unwrap();
    assert!(!record.success);
    assert_eq!(record.attempts, 3);
    assert_eq!(record.error.as_deref(), Some("HTTP 500"));
    assert_eq!(hook.hits(), 3);
    let r = send(http.post(url(&running, "/api/v1/observations")).body(reading(36.0, "cel"))).await;
    assert_eq!(r.status, 202, "pipeline keeps running");
    let r = send(http.get(url(&running, "/api/v1/stats"))).await;
    assert_eq!(r.body["deliveries"], json!({"delivered": 0, "failed": 1}));
    running.shutdown();
}
