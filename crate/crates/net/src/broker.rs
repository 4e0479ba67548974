//! Minimal in-process MQTT 3.1.1 broker for local runs and tests.
//!
//! Supports CONNECT, SUBSCRIBE/UNSUBSCRIBE with wildcards, PUBLISH (routed
//! at QoS 0; QoS 1 publishes are acknowledged), PINGREQ and DISCONNECT. No
//! retained messages, sessions or authentication.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use bytes::BytesMut;
use rumqttc::mqttbytes::v4::{
    self, ConnAck, ConnectReturnCode, PubAck, Publish, SubAck, SubscribeReasonCode, UnsubAck,
};
use rumqttc::mqttbytes::{matches, valid_filter, Error as CodecError, QoS};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tracing::debug;

const MAX_PACKET: usize = 1 << 20;

#[derive(Default)]
struct Sessions {
    filters: HashMap<u64, Vec<String>>,
    outboxes: HashMap<u64, mpsc::UnboundedSender<BytesMut>>,
}

pub struct LoopbackBroker {
    addr: SocketAddr,
    routed: Arc<AtomicUsize>,
    sessions: Arc<Mutex<Sessions>>,
    task: JoinHandle<()>,
}

impl LoopbackBroker {
    pub async fn start(addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let sessions = Arc::new(Mutex::new(Sessions::default()));
        let routed = Arc::new(AtomicUsize::new(0));
        let next_id = Arc::new(AtomicU64::new(0));
        let counter = routed.clone();
        let shared = sessions.clone();
        let task = tokio::spawn(async move {
            while let Ok((stream, peer)) = listener.accept().await {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                debug!(%peer, id, "broker connection");
                tokio::spawn(serve_connection(stream, id, shared.clone(), counter.clone()));
            }
        });
        Ok(LoopbackBroker { addr, routed, sessions, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("mqtt://{}", self.addr)
    }

    /// Number of PUBLISH packets received from clients.
    pub fn routed(&self) -> usize {
        self.routed.load(Ordering::Relaxed)
    }

    /// Number of active topic filters across all connected clients.
    pub fn filters(&self) -> usize {
        self.sessions.lock().unwrap().filters.values().map(Vec::len).sum()
    }

    pub fn stop(self) {
        self.task.abort();
    }
}

fn encode(write: impl FnOnce(&mut BytesMut) -> Result<usize, CodecError>) -> Option<BytesMut> {
    let mut buf = BytesMut::new();
    write(&mut buf).ok().map(|_| buf)
}

async fn serve_connection(stream: TcpStream, id: u64, sessions: Arc<Mutex<Sessions>>, routed: Arc<AtomicUsize>) {
    let (mut reader, mut writer) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<BytesMut>();
    let writer_task = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if writer.write_all(&frame).await.is_err() {
                break;
            }
        }
    });
    let mut buf = BytesMut::with_capacity(4096);
    let mut connected = false;
    'conn: loop {
        loop {
            let packet = match v4::read(&mut buf, MAX_PACKET) {
                Ok(packet) => packet,
                Err(CodecError::InsufficientBytes(_)) => break,
                Err(e) => {
                    debug!(id, error = ?e, "broker: malformed packet");
                    break 'conn;
                }
            };
            let reply = match packet {
                v4::Packet::Connect(_) => {
                    connected = true;
                    sessions.lock().unwrap().outboxes.insert(id, tx.clone());
                    encode(|b| ConnAck::new(ConnectReturnCode::Success, false).write(b))
                }
                _ if !connected => break 'conn,
                v4::Packet::Subscribe(subscribe) => {
                    let mut codes = Vec::new();
                    let mut guard = sessions.lock().unwrap();
                    let filters = guard.filters.entry(id).or_default();
                    for filter in subscribe.filters {
                        if valid_filter(&filter.path) {
                            filters.push(filter.path);
                            codes.push(SubscribeReasonCode::Success(QoS::AtMostOnce));
                        } else {
                            codes.push(SubscribeReasonCode::Failure);
                        }
                    }
                    encode(|b| SubAck::new(subscribe.pkid, codes).write(b))
                }
                v4::Packet::Unsubscribe(unsubscribe) => {
                    if let Some(filters) = sessions.lock().unwrap().filters.get_mut(&id) {
                        filters.retain(|f| !unsubscribe.topics.contains(f));
                    }
                    encode(|b| UnsubAck::new(unsubscribe.pkid).write(b))
                }
                v4::Packet::Publish(publish) => {
                    routed.fetch_add(1, Ordering::Relaxed);
                    route(&sessions, &publish);
                    match publish.qos {
                        QoS::AtMostOnce => None,
                        _ => encode(|b| PubAck::new(publish.pkid).write(b)),
                    }
                }
                v4::Packet::PingReq => encode(|b| v4::PingResp.write(b)),
                v4::Packet::Disconnect => break 'conn,
                _ => None,
            };
            if let Some(frame) = reply {
                if tx.send(frame).is_err() {
                    break 'conn;
                }
            }
        }
        match reader.read_buf(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
    }
    {
        let mut guard = sessions.lock().unwrap();
        guard.filters.remove(&id);
        guard.outboxes.remove(&id);
    }
    drop(tx);
    let _ = writer_task.await;
}

fn route(sessions: &Mutex<Sessions>, publish: &Publish) {
    let mut outgoing = Publish::new(publish.topic.clone(), QoS::AtMostOnce, publish.payload.to_vec());
    outgoing.retain = false;
    let Some(frame) = encode(|b| outgoing.write(b)) else {
        return;
    };
    let guard = sessions.lock().unwrap();
    for (session, filters) in &guard.filters {
        if filters.iter().any(|f| matches(&publish.topic, f)) {
            if let Some(outbox) = guard.outboxes.get(session) {
                let _ = outbox.send(frame.clone());
            }
        }
    }
}
