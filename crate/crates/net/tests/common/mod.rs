#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use knotgate_core::annotation::parse_registrations;
use knotgate_core::gateway::Gateway;
use knotgate_core::rules::parse_rulepack;
use knotgate_net::{start, LoopbackBroker, MqttSettings, Running, ServeOptions};
use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use serde_json::Value;
use tokio::sync::mpsc;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../packs").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Gateway with the shipped sensors and the named rule pack files.
pub fn gateway_with(rulepacks: &[&str]) -> Gateway {
    let mut gateway = Gateway::new();
    for reg in parse_registrations(&fixture("sensors.csv")).unwrap() {
        gateway.register_sensor(reg).unwrap();
    }
    for name in rulepacks {
        gateway.register_rulepack(parse_rulepack(&fixture(name)).unwrap()).unwrap();
    }
    gateway
}

pub async fn serve(gateway: Gateway) -> Running {
    start(gateway, ServeOptions::local()).await.expect("server starts")
}

pub fn url(running: &Running, path: &str) -> String {
    format!("http://{}{}", running.http_addr, path)
}

/// Webhook receiver that answers 500 for the first `failures` requests.
#[derive(Clone)]
pub struct Webhook {
    pub url: String,
    pub bodies: Arc<Mutex<Vec<Value>>>,
    pub hits: Arc<Mutex<usize>>,
}

#[derive(Clone)]
struct HookState {
    bodies: Arc<Mutex<Vec<Value>>>,
    hits: Arc<Mutex<usize>>,
    failures: usize,
}

async fn receive(State(state): State<HookState>, body: Bytes) -> StatusCode {
    let mut hits = state.hits.lock().unwrap();
    *hits += 1;
    if *hits <= state.failures {
        return StatusCode::INTERNAL_SERVER_ERROR;
    }
    state.bodies.lock().unwrap().push(serde_json::from_slice(&body).unwrap_or(Value::Null));
    StatusCode::OK
}

impl Webhook {
    pub async fn start(failures: usize) -> Webhook {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let state = HookState { bodies: Arc::default(), hits: Arc::default(), failures };
        let hook =
            Webhook { url: format!("http://{addr}/hook"), bodies: state.bodies.clone(), hits: state.hits.clone() };
        let app = Router::new().route("/hook", post(receive)).with_state(state);
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        hook
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.bodies.lock().unwrap().clone()
    }

    pub fn hits(&self) -> usize {
        *self.hits.lock().unwrap()
    }
}

/// Polls `condition` every 20 ms until it holds or `timeout` passes.
pub async fn wait_for(timeout: Duration, mut condition: impl FnMut() -> bool) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if condition() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    condition()
}

/// MQTT client subscribed to `filter`, collecting (topic, payload) pairs.
pub struct MqttProbe {
    pub client: AsyncClient,
    pub received: mpsc::UnboundedReceiver<(String, Vec<u8>)>,
}

impl MqttProbe {
    pub async fn connect(broker: SocketAddr, id: &str, filter: Option<&str>) -> MqttProbe {
        let mut options = MqttOptions::new(id, broker.ip().to_string(), broker.port());
        options.set_keep_alive(Duration::from_secs(30));
        let (client, mut eventloop) = AsyncClient::new(options, 256);
        let (tx, rx) = mpsc::unbounded_channel();
        let (ready_tx, mut ready_rx) = mpsc::unbounded_channel();
        let subscriber = client.clone();
        let filter = filter.map(str::to_string);
        tokio::spawn(async move {
            loop {
                match eventloop.poll().await {
                    Ok(Event::Incoming(Packet::ConnAck(_))) => match &filter {
                        Some(f) => subscriber.subscribe(f.clone(), QoS::AtMostOnce).await.unwrap(),
                        None => {
                            let _ = ready_tx.send(());
                        }
                    },
                    Ok(Event::Incoming(Packet::SubAck(_))) => {
                        let _ = ready_tx.send(());
                    }
                    Ok(Event::Incoming(Packet::Publish(p))) => {
                        let _ = tx.send((p.topic.clone(), p.payload.to_vec()));
                    }
                    Ok(_) => {}
                    Err(_) => tokio::time::sleep(Duration::from_millis(50)).await,
                }
            }
        });
        tokio::time::timeout(Duration::from_secs(5), ready_rx.recv()).await.expect("MQTT probe ready");
        MqttProbe { client, received: rx }
    }

    pub async fn next(&mut self, timeout: Duration) -> Option<(String, Vec<u8>)> {
        tokio::time::timeout(timeout, self.received.recv()).await.ok().flatten()
    }
}

/// Serves `gateway` with the MQTT adapter connected to `broker`, returning
/// once the adapter's subscription is active.
pub async fn serve_with_broker(gateway: Gateway, broker: &LoopbackBroker) -> Running {
    let before = broker.filters();
    let mut options = ServeOptions::local();
    options.mqtt = Some(MqttSettings { broker_url: broker.url(), client_id: "knotgate-under-test".into() });
    let running = start(gateway, options).await.expect("server starts");
    assert!(wait_for(Duration::from_secs(5), || broker.filters() > before).await, "adapter subscribed");
    running
}

pub async fn serve_with_coap(gateway: Gateway) -> Running {
    let mut options = ServeOptions::local();
    options.coap = Some(([127, 0, 0, 1], 0).into());
    start(gateway, options).await.expect("server starts")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Via {
    Mqtt,
    Coap,
    Http,
}

/// Sends one JSON reading over `via` to a fresh gateway loaded with the
/// shipped sensors and `rulepacks`, and returns the resulting export.
pub async fn export_after(via: Via, rulepacks: &[&str], payload: &str) -> String {
    let gateway = gateway_with(rulepacks);
    let running = match via {
        Via::Mqtt => {
            let broker = LoopbackBroker::start(([127, 0, 0, 1], 0).into()).await.unwrap();
            let running = serve_with_broker(gateway, &broker).await;
            let value: Value = serde_json::from_str(payload).unwrap();
            let topic =
                format!("iot/{}/{}", value["device_id"].as_str().unwrap(), value["sensor_kind"].as_str().unwrap());
            let probe = MqttProbe::connect(broker.addr(), "publisher", None).await;
            probe.client.publish(topic, QoS::AtLeastOnce, false, payload.as_bytes().to_vec()).await.unwrap();
            let state = running.state.clone();
            assert!(
                wait_for(Duration::from_secs(3), || state.read().export().contains("<urn:obs:")).await,
                "MQTT reading ingested"
            );
            broker.stop();
            running
        }
        Via::Coap => {
            let running = serve_with_coap(gateway).await;
            let reply = knotgate_net::coap::post(
                running.coap_addr.unwrap(),
                "ingest",
                payload.as_bytes(),
                Duration::from_secs(3),
            )
            .await
            .unwrap();
            assert_eq!(reply.code, "2.04", "{}", String::from_utf8_lossy(&reply.payload));
            running
        }
        Via::Http => {
            let running = serve(gateway).await;
            let response = reqwest::Client::new()
                .post(url(&running, "/api/v1/observations"))
                .body(payload.to_string())
                .send()
                .await
                .unwrap();
            assert_eq!(response.status().as_u16(), 202);
            running
        }
    };
    let export = running.state.read().export();
    running.shutdown();
    export
}
