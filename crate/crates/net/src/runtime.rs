//! Process wiring: the single ingestion queue, the pipeline consumer, the
//! delivery worker and server startup.

use std::net::SocketAddr;
use std::sync::{mpsc as std_mpsc, Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use knotgate_core::gateway::{
    deliver, Delivery, DeliveryRecord, Egress, EgressTarget, Gateway, GatewayError, InboundMessage, IngestReceipt,
    RetryPolicy,
};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::{api, coap, mqtt};

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub type IngestResult = Result<IngestReceipt, GatewayError>;

/// One message waiting in the ingestion queue.
pub struct IngestJob {
    pub message: InboundMessage,
    pub reply: Option<oneshot::Sender<IngestResult>>,
}

/// Outcome counts of egress deliveries plus the most recent records.
#[derive(Debug, Default)]
pub struct DeliveryLog {
    pub delivered: usize,
    pub failed: usize,
    pub recent: Vec<DeliveryRecord>,
}

const RECENT_LIMIT: usize = 256;

impl DeliveryLog {
    fn record(&mut self, record: DeliveryRecord) {
        if record.success {
            self.delivered += 1;
        } else {
            self.failed += 1;
        }
        if self.recent.len() == RECENT_LIMIT {
            self.recent.remove(0);
        }
        self.recent.push(record);
    }
}

/// Handles shared by adapters and HTTP handlers.
#[derive(Clone)]
pub struct AppState {
    gateway: Arc<RwLock<Gateway>>,
    queue: mpsc::Sender<IngestJob>,
    egress: std_mpsc::Sender<Delivery>,
    pub deliveries: Arc<Mutex<DeliveryLog>>,
}

impl AppState {
    pub fn read(&self) -> RwLockReadGuard<'_, Gateway> {
        self.gateway.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Exclusive access for administrative changes; queued deliveries it
    /// produces must be passed to [`AppState::dispatch`].
    pub fn write(&self) -> RwLockWriteGuard<'_, Gateway> {
        self.gateway.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn dispatch(&self, deliveries: Vec<Delivery>) {
        for delivery in deliveries {
            if self.egress.send(delivery).is_err() {
                warn!("delivery worker stopped; dropping delivery");
            }
        }
    }

    /// Queues a message for the pipeline and waits for its receipt.
    pub async fn ingest(&self, message: InboundMessage) -> Option<IngestResult> {
        let (tx, rx) = oneshot::channel();
        self.queue.send(IngestJob { message, reply: Some(tx) }).await.ok()?;
        rx.await.ok()
    }

    /// Queues a message without waiting for the outcome.
    pub async fn submit(&self, message: InboundMessage) {
        if self.queue.send(IngestJob { message, reply: None }).await.is_err() {
            warn!("ingestion queue closed");
        }
    }

    pub fn queue(&self) -> mpsc::Sender<IngestJob> {
        self.queue.clone()
    }
}

/// Sends payloads to webhooks over HTTP and to MQTT topics through the
/// adapter's client connection.
pub struct EgressHub {
    http: reqwest::blocking::Client,
    mqtt: Option<rumqttc::AsyncClient>,
}

impl EgressHub {
    pub fn new(mqtt: Option<rumqttc::AsyncClient>) -> Self {
        let http =
            reqwest::blocking::Client::builder().timeout(Duration::from_secs(5)).build().expect("HTTP client builds");
        EgressHub { http, mqtt }
    }
}

impl Egress for EgressHub {
    fn send(&self, target: &EgressTarget, body: &[u8]) -> Result<(), String> {
        match target {
            EgressTarget::Webhook(url) => {
                let response = self
                    .http
                    .post(url)
                    .header("content-type", "application/json")
                    .body(body.to_vec())
                    .send()
                    .map_err(|e| e.to_string())?;
                if response.status().is_success() {
                    Ok(())
                } else {
                    Err(format!("HTTP {}", response.status().as_u16()))
                }
            }
            EgressTarget::MqttTopic(topic) => match &self.mqtt {
                Some(client) => client
                    .try_publish(topic.clone(), rumqttc::QoS::AtMostOnce, false, body.to_vec())
                    .map_err(|e| e.to_string()),
                None => Err("MQTT is not enabled".into()),
            },
        }
    }
}

fn spawn_delivery_worker(
    receiver: std_mpsc::Receiver<Delivery>,
    mqtt: Option<rumqttc::AsyncClient>,
    policy: RetryPolicy,
    log: Arc<Mutex<DeliveryLog>>,
) {
    std::thread::Builder::new()
        .name("knotgate-egress".into())
        .spawn(move || {
            let hub = EgressHub::new(mqtt);
            // One worker drains the queue in order, which keeps per-device order.
            for delivery in receiver {
                let record = deliver(&hub, &delivery.target, &delivery.body, policy);
                if !record.success {
                    warn!(target = %record.target, attempts = record.attempts, "delivery failed");
                }
                log.lock().unwrap_or_else(|e| e.into_inner()).record(record);
            }
        })
        .expect("spawn delivery worker");
}

fn spawn_pipeline(state: AppState, mut queue: mpsc::Receiver<IngestJob>) -> JoinHandle<()> {
    tokio::spawn(async move {
        while let Some(job) = queue.recv().await {
            let outcome = state.write().ingest_message(&job.message);
            let result = match outcome {
                Ok((receipt, deliveries)) => {
                    state.dispatch(deliveries);
                    Ok(receipt)
                }
                Err(e) => {
                    warn!(transport = %job.message.transport, route = %job.message.route, error = %e, "ingest rejected");
                    Err(e)
                }
            };
            if let Some(reply) = job.reply {
                let _ = reply.send(result);
            }
        }
    })
}

#[derive(Debug, Clone)]
pub struct MqttSettings {
    pub broker_url: String,
    pub client_id: String,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub http: SocketAddr,
    pub coap: Option<SocketAddr>,
    pub mqtt: Option<MqttSettings>,
    pub retry: RetryPolicy,
}

impl ServeOptions {
    /// Loopback HTTP on an ephemeral port, nothing else.
    pub fn local() -> Self {
        ServeOptions {
            http: SocketAddr::from(([127, 0, 0, 1], 0)),
            coap: None,
            mqtt: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind { what: &'static str, addr: SocketAddr, source: std::io::Error },
    #[error("MQTT: {0}")]
    Mqtt(String),
}

/// A started server; dropping it does not stop the tasks, call `shutdown`.
pub struct Running {
    pub http_addr: SocketAddr,
    pub coap_addr: Option<SocketAddr>,
    pub state: AppState,
    tasks: Vec<JoinHandle<()>>,
}

impl Running {
    pub fn shutdown(self) {
        for task in self.tasks {
            task.abort();
        }
    }

    /// Waits until every task ends (normally never).
    pub async fn wait(self) {
        for task in self.tasks {
            let _ = task.await;
        }
    }
}

/// Binds every enabled adapter, then starts the pipeline. Must be called
/// inside a Tokio runtime.
pub async fn start(gateway: Gateway, options: ServeOptions) -> Result<Running, StartError> {
    let http_listener = tokio::net::TcpListener::bind(options.http).await.map_err(|source| StartError::Bind {
        what: "HTTP",
        addr: options.http,
        source,
    })?;
    let http_addr =
        http_listener.local_addr().map_err(|source| StartError::Bind { what: "HTTP", addr: options.http, source })?;
    let coap_socket = match options.coap {
        Some(addr) => Some(tokio::net::UdpSocket::bind(addr).await.map_err(|source| StartError::Bind {
            what: "CoAP",
            addr,
            source,
        })?),
        None => None,
    };
    let coap_addr = coap_socket.as_ref().and_then(|s| s.local_addr().ok());

    let (queue_tx, queue_rx) = mpsc::channel(1024);
    let (egress_tx, egress_rx) = std_mpsc::channel();
    let state = AppState {
        gateway: Arc::new(RwLock::new(gateway)),
        queue: queue_tx,
        egress: egress_tx,
        deliveries: Arc::new(Mutex::new(DeliveryLog::default())),
    };

    let mut tasks = Vec::new();
    let mut mqtt_client = None;
    if let Some(settings) = &options.mqtt {
        let (client, task) = mqtt::spawn_adapter(settings, state.queue()).map_err(StartError::Mqtt)?;
        mqtt_client = Some(client);
        tasks.push(task);
    }
    spawn_delivery_worker(egress_rx, mqtt_client, options.retry, state.deliveries.clone());
    tasks.push(spawn_pipeline(state.clone(), queue_rx));
    if let Some(socket) = coap_socket {
        tasks.push(coap::spawn_server(socket, state.clone()));
    }
    let app = api::router(state.clone());
    tasks.push(tokio::spawn(async move {
        if let Err(e) = axum::serve(http_listener, app).await {
            warn!(error = %e, "HTTP server stopped");
        }
    }));
    info!(%http_addr, coap = ?coap_addr, mqtt = options.mqtt.is_some(), "knotgate serving");
    Ok(Running { http_addr, coap_addr, state, tasks })
}
