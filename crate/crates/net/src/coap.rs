//! CoAP ingest: devices POST readings to `coap://host/ingest`. Confirmable
//! requests get a piggybacked ACK carrying the receipt or an error body.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use coap_lite::{CoapRequest, ContentFormat, MessageClass, MessageType, Packet, RequestType, ResponseType};
use knotgate_core::gateway::{InboundMessage, Transport};
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;
use tracing::debug;

use crate::error::{gateway_error, ErrorBody, ErrorKind};
use crate::runtime::{now_millis, AppState};

pub const INGEST_PATH: &str = "ingest";

fn status_for(kind: ErrorKind) -> ResponseType {
    match kind {
        ErrorKind::BadRequest => ResponseType::BadRequest,
        ErrorKind::NotFound => ResponseType::NotFound,
        ErrorKind::Conflict => ResponseType::Conflict,
        ErrorKind::Unprocessable => ResponseType::UnprocessableEntity,
    }
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("response serializes")
}

/// Recently seen (peer, message id) pairs, so retransmitted requests are
/// answered again (or ignored while in flight) without being re-ingested.
#[derive(Default)]
struct Dedup {
    order: VecDeque<(SocketAddr, u16)>,
    responses: HashMap<(SocketAddr, u16), Option<Vec<u8>>>,
}

const DEDUP_LIMIT: usize = 512;

impl Dedup {
    fn begin(&mut self, key: (SocketAddr, u16)) {
        if self.order.len() == DEDUP_LIMIT {
            if let Some(old) = self.order.pop_front() {
                self.responses.remove(&old);
            }
        }
        self.order.push_back(key);
        self.responses.insert(key, None);
    }

    fn finish(&mut self, key: (SocketAddr, u16), bytes: Vec<u8>) {
        if let Some(slot) = self.responses.get_mut(&key) {
            *slot = Some(bytes);
        }
    }
}

async fn handle(state: &AppState, packet: Packet, peer: SocketAddr) -> Option<Packet> {
    let request: CoapRequest<SocketAddr> = CoapRequest::from_packet(packet, peer);
    let mut response = request.response.clone()?;
    let (status, body) = if request.get_path() != INGEST_PATH {
        (ResponseType::NotFound, json(&ErrorBody::new("NotFound", format!("no resource /{}", request.get_path()))))
    } else if *request.get_method() != RequestType::Post {
        (ResponseType::MethodNotAllowed, json(&ErrorBody::new("MethodNotAllowed", "use POST")))
    } else {
        let message = InboundMessage {
            transport: Transport::Coap,
            route: format!("/{INGEST_PATH}"),
            payload: request.message.payload.clone(),
            received_at: now_millis(),
        };
        match state.ingest(message).await {
            Some(Ok(receipt)) => (ResponseType::Changed, json(&receipt)),
            Some(Err(e)) => {
                let (kind, body) = gateway_error(&e);
                (status_for(kind), json(&body))
            }
            None => (ResponseType::ServiceUnavailable, json(&ErrorBody::new("Unavailable", "pipeline stopped"))),
        }
    };
    response.set_status(status);
    response.message.set_content_format(ContentFormat::ApplicationJSON);
    response.message.payload = body;
    Some(response.message)
}

pub fn spawn_server(socket: UdpSocket, state: AppState) -> JoinHandle<()> {
    let socket = Arc::new(socket);
    let dedup = Arc::new(Mutex::new(Dedup::default()));
    tokio::spawn(async move {
        let mut buf = vec![0u8; 65_535];
        loop {
            let Ok((n, peer)) = socket.recv_from(&mut buf).await else {
                continue;
            };
            let packet = match Packet::from_bytes(&buf[..n]) {
                Ok(packet) => packet,
                Err(e) => {
                    debug!(%peer, error = ?e, "CoAP: undecodable datagram");
                    continue;
                }
            };
            if !matches!(packet.header.get_type(), MessageType::Confirmable | MessageType::NonConfirmable) {
                continue;
            }
            let key = (peer, packet.header.message_id);
            let seen = {
                let mut guard = dedup.lock().unwrap();
                let seen = guard.responses.get(&key).cloned();
                if seen.is_none() {
                    guard.begin(key);
                }
                seen
            };
            match seen {
                Some(Some(bytes)) => {
                    let _ = socket.send_to(&bytes, peer).await;
                    continue;
                }
                Some(None) => continue,
                None => {}
            }
            let socket = socket.clone();
            let state = state.clone();
            let dedup = dedup.clone();
            tokio::spawn(async move {
                if let Some(response) = handle(&state, packet, peer).await {
                    if let Ok(bytes) = response.to_bytes() {
                        dedup.lock().unwrap().finish(key, bytes.clone());
                        let _ = socket.send_to(&bytes, peer).await;
                    }
                }
            });
        }
    })
}

/// Response to a confirmable request: `code` in `c.dd` form and the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoapReply {
    pub code: String,
    pub payload: Vec<u8>,
}

/// Sends one confirmable POST and waits for the matching ACK, retransmitting
/// every 500 ms until `timeout`.
pub async fn post(server: SocketAddr, path: &str, payload: &[u8], timeout: Duration) -> std::io::Result<CoapReply> {
    let local: SocketAddr = if server.is_ipv4() { ([0, 0, 0, 0], 0).into() } else { "[::]:0".parse().unwrap() };
    let socket = UdpSocket::bind(local).await?;
    let mut request: CoapRequest<SocketAddr> = CoapRequest::new();
    request.message.header.set_type(MessageType::Confirmable);
    request.set_method(RequestType::Post);
    request.set_path(path);
    let message_id = (now_millis() & 0xffff) as u16;
    request.message.header.message_id = message_id;
    request.message.set_token(message_id.to_be_bytes().to_vec());
    request.message.payload = payload.to_vec();
    let bytes = request
        .message
        .to_bytes()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{e:?}")))?;
    let deadline = tokio::time::Instant::now() + timeout;
    let mut buf = vec![0u8; 65_535];
    loop {
        socket.send_to(&bytes, server).await?;
        let wait = tokio::time::sleep(Duration::from_millis(500));
        tokio::pin!(wait);
        loop {
            tokio::select! {
                received = socket.recv_from(&mut buf) => {
                    let (n, _) = received?;
                    if let Ok(reply) = Packet::from_bytes(&buf[..n]) {
                        if reply.header.message_id == message_id && reply.header.get_type() == MessageType::Acknowledgement {
                            let code = match reply.header.code {
                                MessageClass::Response(_) => reply.header.get_code(),
                                _ => String::from("0.00"),
                            };
                            return Ok(CoapReply { code, payload: reply.payload });
                        }
                    }
                }
                _ = &mut wait => break,
            }
        }
        if tokio::time::Instant::now() >= deadline {
            return Err(std::io::Error::new(std::io::ErrorKind::TimedOut, "no CoAP acknowledgement"));
        }
    }
}
