mod common;

use std::time::Duration;

use common::{gateway_with, serve_with_broker, url, MqttProbe, Webhook};
use knotgate_core::gateway::{deliver, Egress, EgressTarget, Envelope, RetryPolicy};
use knotgate_core::model::parse_triples;
use knotgate_net::LoopbackBroker;
use serde_json::json;

fn reading(device: &str, kind: &str, value: f64, unit: &str, timestamp: u64) -> String {
    json!({"device_id": device, "sensor_kind": kind, "value": value, "unit": unit, "timestamp": timestamp}).to_string()
}

#[tokio::test]
async fn derived_facts_are_bridged_once_each_in_order() {
    let broker = LoopbackBroker::start(([127, 0, 0, 1], 0).into()).await.unwrap();
    let mut gateway = gateway_with(&["slor-health.rules", "fire.rules"]);
    gateway.bridge_domains = true;
    let running = serve_with_broker(gateway, &broker).await;
    let mut health = MqttProbe::connect(broker.addr(), "health-listener", Some("derived/health")).await;
    let mut fire = MqttProbe::connect(broker.addr(), "fire-listener", Some("derived/fire")).await;

    let http = reqwest::Client::new();
    let n = 20;
    for i in 0..n {
        let body = reading("thermo1", "temperature", 38.1 + i as f64 * 0.1, "cel", 1000 + i);
        let status = http.post(url(&running, "/api/v1/observations")).body(body).send().await.unwrap().status();
        assert_eq!(status.as_u16(), 202);
        let cool = reading("thermo1", "temperature", 36.0, "cel", 5000 + i);
        http.post(url(&running, "/api/v1/observations")).body(cool).send().await.unwrap();
    }
    http.post(url(&running, "/api/v1/observations"))
        .body(reading("station1", "temperature", 65.5, "cel", 9))
        .send()
        .await
        .unwrap();

    for i in 0..n {
        let (topic, payload) = health.next(Duration::from_secs(3)).await.expect("envelope arrives");
        assert_eq!(topic, "derived/health");
        let envelope: Envelope = serde_json::from_slice(&payload).unwrap();
        let fact = &parse_triples(&format!("{}\n", envelope.triple)).unwrap()[0];
        assert_eq!(fact.subject().to_string(), format!("<urn:obs:thermo1:{}>", 2 * i + 1));
        assert_eq!(envelope.observation_iri, format!("urn:obs:thermo1:{}", 2 * i + 1));
        assert_eq!(envelope.rule_id, "fever");
        assert_eq!(envelope.timestamp, 1000 + i);
    }
    let (_, payload) = fire.next(Duration::from_secs(3)).await.expect("fire envelope");
    let envelope: Envelope = serde_json::from_slice(&payload).unwrap();
    assert_eq!(envelope.rule_id, "fire-risk");
    assert!(health.next(Duration::from_millis(300)).await.is_none(), "no duplicates and no cross-domain leaks");
    assert!(fire.next(Duration::from_millis(100)).await.is_none());
    running.shutdown();
    broker.stop();
}

#[tokio::test]
async fn mqtt_subscription_endpoint() {
    let broker = LoopbackBroker::start(([127, 0, 0, 1], 0).into()).await.unwrap();
    let running = serve_with_broker(gateway_with(&["cardio.rules"]), &broker).await;
    let mut alerts = MqttProbe::connect(broker.addr(), "alerts", Some("alerts/bp")).await;
    let http = reqwest::Client::new();
    let subscription =
        json!({"pattern": "?o m3:indicates m3:ElevatedBloodPressure", "endpoint": {"mqtt_topic": "alerts/bp"}});
    let response =
        http.post(url(&running, "/api/v1/subscriptions")).body(subscription.to_string()).send().await.unwrap();
    assert_eq!(response.status().as_u16(), 201);
    for (value, ts) in [(150.0, 1), (120.0, 2)] {
        http.post(url(&running, "/api/v1/observations"))
            .body(reading("bp1", "pressure", value, "mmhg", ts))
            .send()
            .await
            .unwrap();
    }
    let (_, payload) = alerts.next(Duration::from_secs(3)).await.expect("alert");
    let envelope: Envelope = serde_json::from_slice(&payload).unwrap();
    assert_eq!(envelope.observation_iri, "urn:obs:bp1:1");
    assert!(alerts.next(Duration::from_millis(300)).await.is_none());
    running.shutdown();
    broker.stop();
}

struct Flaky(std::sync::Mutex<usize>);

impl Egress for Flaky {
    fn send(&self, _: &EgressTarget, _: &[u8]) -> Result<(), String> {
        let mut calls = self.0.lock().unwrap();
        *calls += 1;
        if *calls < 3 {
            Err("refused".into())
        } else {
            Ok(())
        }
    }
}

#[test]
fn retry_policy_spacing() {
    let egress = Flaky(std::sync::Mutex::new(0));
    let policy = RetryPolicy { attempts: 3, spacing: Duration::from_millis(50) };
    let started = std::time::Instant::now();
    let record = deliver(&egress, &EgressTarget::Webhook("http://x".into()), b"{}", policy);
    assert!(record.success);
    assert_eq!(record.attempts, 3);
    assert!(started.elapsed() >= Duration::from_millis(100));
}

#[tokio::test]
async fn webhook_recovers_within_retry_budget() {
    let hook = Webhook::start(2).await;
    let running = common::serve(gateway_with(&["slor-health.rules"])).await;
    let http = reqwest::Client::new();
    let subscription = json!({"pattern": "?o m3:indicates ?state", "endpoint": {"webhook": hook.url}});
    http.post(url(&running, "/api/v1/subscriptions")).body(subscription.to_string()).send().await.unwrap();
    http.post(url(&running, "/api/v1/observations"))
        .body(reading("thermo1", "temperature", 39.0, "cel", 1))
        .send()
        .await
        .unwrap();
    let log = running.state.deliveries.clone();
    assert!(common::wait_for(Duration::from_secs(3), || log.lock().unwrap().delivered == 1).await);
    assert_eq!(log.lock().unwrap().recent[0].attempts, 3);
    assert_eq!(hook.bodies().len(), 1);
    running.shutdown();
}
