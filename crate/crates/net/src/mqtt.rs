//! MQTT adapter: a client that subscribes to `iot/#` on a broker and feeds
//! every publish into the ingestion queue.

use std::time::Duration;

use knotgate_core::gateway::{InboundMessage, Transport};
use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use crate::runtime::{now_millis, IngestJob, MqttSettings};

pub const INGEST_FILTER: &str = "iot/#";

/// Splits `mqtt://host:port` (or `tcp://`, or bare `host:port`).
pub fn parse_broker_url(url: &str) -> Result<(String, u16), String> {
    let with_scheme = if url.contains("://") { url.to_string() } else { format!("mqtt://{url}") };
    let parsed = url::Url::parse(&with_scheme).map_err(|e| format!("bad broker URL {url:?}: {e}"))?;
    if !matches!(parsed.scheme(), "mqtt" | "tcp") {
        return Err(format!("unsupported broker scheme {:?}", parsed.scheme()));
    }
    let host = parsed.host_str().ok_or_else(|| format!("broker URL {url:?} has no host"))?;
    Ok((host.to_string(), parsed.port().unwrap_or(1883)))
}

pub fn spawn_adapter(
    settings: &MqttSettings,
    queue: mpsc::Sender<IngestJob>,
) -> Result<(AsyncClient, JoinHandle<()>), String> {
    let (host, port) = parse_broker_url(&settings.broker_url)?;
    let mut options = MqttOptions::new(settings.client_id.clone(), host, port);
    options.set_keep_alive(Duration::from_secs(30));
    options.set_max_packet_size(1 << 20, 1 << 20);
    let (client, mut eventloop) = AsyncClient::new(options, 256);
    let subscriber = client.clone();
    let task = tokio::spawn(async move {
        loop {
            match eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    if let Err(e) = subscriber.subscribe(INGEST_FILTER, QoS::AtMostOnce).await {
                        warn!(error = %e, "MQTT subscribe failed");
                    }
                }
                Ok(Event::Incoming(Packet::Publish(publish))) => {
                    let message = InboundMessage {
                        transport: Transport::Mqtt,
                        route: publish.topic.clone(),
                        payload: publish.payload.to_vec(),
                        received_at: now_millis(),
                    };
                    if queue.send(IngestJob { message, reply: None }).await.is_err() {
                        break;
                    }
                }
                Ok(event) => debug!(?event, "mqtt event"),
                Err(e) => {
                    warn!(error = %e, "MQTT connection error; retrying");
                    tokio::time::sleep(Duration::from_millis(500)).await;
                }
            }
        }
    });
    Ok((client, task))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broker_urls() {
        assert_eq!(parse_broker_url("mqtt://127.0.0.1:1884"), Ok(("127.0.0.1".into(), 1884)));
        assert_eq!(parse_broker_url("tcp://broker"), Ok(("broker".into(), 1883)));
        assert_eq!(parse_broker_url("localhost:1999"), Ok(("localhost".into(), 1999)));
        assert!(parse_broker_url("http://x").is_err());
    }
}
