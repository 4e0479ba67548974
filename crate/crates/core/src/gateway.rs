//! Gateway pipeline: payload decoding, topic routing and the ordered
//! annotate → insert → chain → notify ingest path, plus egress delivery
//! with a fixed retry budget.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::annotation::{device_iri, AnnotationError, Annotator, RawReading, SensorRegistration};
use crate::model::{serialize_triples, vocab, Term, Triple};
use crate::query::{evaluate_query, parse_query, QueryError, ResultTable};
use crate::rules::{chain_incremental, forward_chain_tracked, ChainOutcome, ChainStats, RuleError, RulePack};
use crate::services::{ServiceError, Services};
use crate::store::{Provenance, ProvenanceFilter, Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Mqtt,
    Coap,
    Http,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Mqtt => "mqtt",
            Transport::Coap => "coap",
            Transport::Http => "http",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMessage {
    pub transport: Transport,
    /// MQTT topic or request path.
    pub route: String,
    pub payload: Vec<u8>,
    pub received_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadFormat {
    Json,
    Csv,
}

impl PayloadFormat {
    /// JSON when the payload starts with `{`, CSV otherwise.
    pub fn sniff(payload: &[u8]) -> PayloadFormat {
        match payload.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => PayloadFormat::Json,
            _ => PayloadFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("payload is empty")]
    Empty,
    #[error("payload is not valid UTF-8")]
    Encoding,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("bad number in field {field:?}: {detail}")]
    BadNumber { field: &'static str, detail: String },
    #[error("bad field {field:?}: {detail}")]
    BadField { field: &'static str, detail: String },
    #[error("expected 4 or 5 CSV columns, found {0}")]
    Columns(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad topic {0:?}: expected iot/{{device_id}}/{{sensor_kind}}")]
pub struct BadTopic(pub String);

/// Reading fields as found in a payload, before defaults and routing.
#[derive(Debug, Clone, Default, PartialEq)]
struct PartialReading {
    device_id: Option<String>,
    sensor_kind: Option<String>,
    value: Option<f64>,
    unit: Option<String>,
    timestamp: Option<u64>,
}

impl PartialReading {
    fn complete(self, received_at: u64) -> Result<RawReading, DecodeError> {
        let nonempty = |v: Option<String>, field: &'static str| match v {
            Some(s) if !s.is_empty() => Ok(s),
            Some(_) => Err(DecodeError::BadField { field, detail: "must not be empty".into() }),
            None => Err(DecodeError::MissingField(field)),
        };
        Ok(RawReading {
            device_id: nonempty(self.device_id, "device_id")?,
            sensor_kind: nonempty(self.sensor_kind, "sensor_kind")?,
            value: self.value.ok_or(DecodeError::MissingField("value"))?,
            unit: nonempty(self.unit, "unit")?,
            timestamp: self.timestamp.unwrap_or(received_at),
        })
    }
}

fn decode_partial(payload: &[u8], format: PayloadFormat) -> Result<PartialReading, DecodeError> {
    if payload.iter().all(u8::is_ascii_whitespace) {
        return Err(DecodeError::Empty);
    }
    let text = std::str::from_utf8(payload).map_err(|_| DecodeError::Encoding)?;
    match format {
        PayloadFormat::Json => decode_json(text),
        PayloadFormat::Csv => decode_csv(text),
    }
}

fn decode_json(text: &str) -> Result<PartialReading, DecodeError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DecodeError::Json(e.to_string()))?;
    let Value::Object(object) = value else {
        return Err(DecodeError::Json("expected a JSON object".into()));
    };
    let string = |field: &'static str| -> Result<Option<String>, DecodeError> {
        match object.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(DecodeError::BadField { field, detail: format!("expected a string, found {other}") }),
        }
    };
    let value = match object.get("value") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(
            n.as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DecodeError::BadNumber { field: "value", detail: n.to_string() })?,
        ),
        Some(other) => return Err(DecodeError::BadNumber { field: "value", detail: other.to_string() }),
    };
    let timestamp = match object.get("timestamp") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            Some(n.as_u64().ok_or_else(|| DecodeError::BadNumber { field: "timestamp", detail: n.to_string() })?)
        }
        Some(other) => return Err(DecodeError::BadNumber { field: "timestamp", detail: other.to_string() }),
    };
    Ok(PartialReading {
        device_id: string("device_id")?,
        sensor_kind: string("sensor_kind")?,
        value,
        unit: string("unit")?,
        timestamp,
    })
}

fn decode_csv(text: &str) -> Result<PartialReading, DecodeError> {
    let fields: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(DecodeError::Columns(fields.len()));
    }
    let value = fields[2]
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DecodeError::BadNumber { field: "value", detail: fields[2].to_string() })?;
    let timestamp = match fields.get(4) {
        Some(ts) if !ts.is_empty() => {
            Some(ts.parse::<u64>().map_err(|_| DecodeError::BadNumber { field: "timestamp", detail: ts.to_string() })?)
        }
        _ => None,
    };
    Ok(PartialReading {
        device_id: Some(fields[0].to_string()),
        sensor_kind: Some(fields[1].to_string()),
        value: Some(value),
        unit: Some(fields[3].to_string()),
        timestamp,
    })
}

/// Decodes a JSON object or CSV line into a reading; a missing timestamp
/// defaults to `received_at`.
pub fn decode_reading(payload: &[u8], format: PayloadFormat, received_at: u64) -> Result<RawReading, DecodeError> {
    decode_partial(payload, format)?.complete(received_at)
}

/// Splits `iot/{device_id}/{sensor_kind}`.
pub fn topic_to_route(topic: &str) -> Result<(String, String), BadTopic> {
    let segments: Vec<&str> = topic.split('/').collect();
    match segments.as_slice() {
        ["iot", device, kind] if !device.is_empty() && !kind.is_empty() => Ok((device.to_string(), kind.to_string())),
        _ => Err(BadTopic(topic.to_string())),
    }
}

/// Decodes an adapter message. CoAP and HTTP bodies are JSON; MQTT payloads
/// may be JSON or CSV and may omit the device and kind, which then come from
/// the topic. When both are present the payload wins.
pub fn decode_message(message: &InboundMessage) -> Result<RawReading, GatewayError> {
    match message.transport {
        Transport::Mqtt => {
            let format = PayloadFormat::sniff(&message.payload);
            let (device, kind) = topic_to_route(&message.route)?;
            let mut partial = decode_partial(&message.payload, format)?;
            for (field, from_topic, slot) in
                [("device_id", device, &mut partial.device_id), ("sensor_kind", kind, &mut partial.sensor_kind)]
            {
                match slot {
                    Some(v) if *v != from_topic => {
                        warn!(topic = %message.route, field, payload = %v, "payload disagrees with topic; using payload");
                    }
                    Some(_) => {}
                    None => *slot = Some(from_topic),
                }
            }
            Ok(partial.complete(message.received_at)?)
        }
        Transport::Coap | Transport::Http => {
            Ok(decode_reading(&message.payload, PayloadFormat::Json, message.received_at)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgressTarget {
    MqttTopic(String),
    Webhook(String),
}

impl EgressTarget {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            EgressTarget::MqttTopic(topic) => {
                if topic.is_empty() || topic.contains(['+', '#', '\0']) {
                    Err(format!("invalid MQTT topic {topic:?}"))
                } else {
                    Ok(())
                }
            }
            EgressTarget::Webhook(url) => {
                let rest = url
                    .strip_prefix("http://")
                    .or_else(|| url.strip_prefix("https://"))
                    .ok_or_else(|| format!("webhook URL must be http(s): {url:?}"))?;
                if rest.is_empty() || rest.starts_with('/') || url.chars().any(char::is_whitespace) {
                    Err(format!("invalid webhook URL {url:?}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for EgressTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EgressTarget::MqttTopic(t) => write!(f, "mqtt:{t}"),
            EgressTarget::Webhook(u) => write!(f, "webhook:{u}"),
        }
    }
}

/// JSON body published for a derived fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub triple: String,
    pub rule_id: String,
    pub observation_iri: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeliveryOrigin {
    Bridge { domain: String },
    Subscription { id: String },
    Composition { id: String },
}

/// A payload waiting to be handed to an egress transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub target: EgressTarget,
    pub body: Vec<u8>,
    pub origin: DeliveryOrigin,
    /// Ordering key: deliveries with the same key go out in queue order.
    pub device_id: String,
}

impl Delivery {
    pub fn json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryRecord {
    pub target: EgressTarget,
    pub success: bool,
    pub attempts: u32,
    pub error: Option<String>,
}

/// Something that can push a payload to a target once.
pub trait Egress {
    fn send(&self, target: &EgressTarget, body: &[u8]) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub spacing: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, spacing: Duration::from_millis(200) }
    }
}

/// Sends `body` with up to `policy.attempts` tries; never panics on failure.
pub fn deliver(egress: &dyn Egress, target: &EgressTarget, body: &[u8], policy: RetryPolicy) -> DeliveryRecord {
    let mut last_error = None;
    for attempt in 1..=policy.attempts.max(1) {
        match egress.send(target, body) {
            Ok(()) => return DeliveryRecord { target: target.clone(), success: true, attempts: attempt, error: None },
            Err(e) => {
                warn!(%target, attempt, error = %e, "delivery attempt failed");
                last_error = Some(e);
                if attempt < policy.attempts {
                    std::thread::sleep(policy.spacing);
                }
            }
        }
    }
    DeliveryRecord { target: target.clone(), success: false, attempts: policy.attempts.max(1), error: last_error }
}

/// Observation IRI and timestamp a derived fact is about: its subject and
/// that subject's result time, when recorded.
pub fn fact_context(store: &Store, fact: &Triple) -> (String, u64) {
    let subject = match fact.subject() {
        Term::Iri(iri) => iri.clone(),
        other => other.to_string(),
    };
    let pattern = crate::pattern::TriplePattern {
        subject: fact.subject().clone().into(),
        predicate: Term::Iri(vocab::SSN_RESULT_TIME.into()).into(),
        object: crate::pattern::PatternTerm::Var("t".into()),
    };
    let timestamp = store
        .match_pattern(&pattern)
        .first()
        .and_then(|(t, _)| t.object().numeric_value())
        .map(|v| v as u64)
        .unwrap_or(0);
    (subject, timestamp)
}

pub fn envelope_for(store: &Store, fact: &Triple) -> Envelope {
    let (observation_iri, timestamp) = fact_context(store, fact);
    let rule_id = match store.provenance(fact) {
        Some(Provenance::Inferred(rule)) => rule.clone(),
        _ => String::new(),
    };
    Envelope { triple: fact.to_string(), rule_id, observation_iri, timestamp }
}

/// Publishes one fact to a target, building the envelope from the store.
pub fn bridge_publish(
    store: &Store,
    fact: &Triple,
    target: &EgressTarget,
    egress: &dyn Egress,
    policy: RetryPolicy,
) -> DeliveryRecord {
    let envelope = envelope_for(store, fact);
    let body = serde_json::to_vec(&envelope).expect("envelope serializes");
    deliver(egress, target, &body, policy)
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Topic(#[from] BadTopic),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("rule id {rule_id:?} is already defined by active pack {pack_id:?}")]
    RuleIdConflict { rule_id: String, pack_id: String },
    #[error("no active rule pack {0:?}")]
    UnknownRulePack(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReceipt {
    pub observation_iri: String,
    /// Store growth caused by this reading (observation plus derived triples).
    pub triples_added: usize,
    /// Newly derived triples, as triple-file lines.
    pub derived: Vec<String>,
    pub notifications_queued: usize,
    #[serde(skip)]
    pub derived_triples: Vec<Triple>,
    #[serde(skip)]
    pub per_rule: BTreeMap<String, usize>,
}

/// Outcome of an administrative change that re-ran inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rechain {
    pub stats: ChainStats,
    pub deliveries: Vec<Delivery>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub store_size: usize,
    pub asserted: usize,
    pub inferred: usize,
    pub loaded: usize,
    pub per_rule: BTreeMap<String, usize>,
    pub rule_packs: Vec<String>,
    pub subscriptions: usize,
    pub compositions: usize,
}

/// The single-writer pipeline state: store, sensor registry, active rule
/// packs and registered services.
#[derive(Debug, Clone, Default)]
pub struct Gateway {
    store: Store,
    annotator: Annotator,
    packs: Vec<RulePack>,
    services: Services,
    /// Publish every derived fact to `derived/{domain}` for its pack's domains.
    pub bridge_domains: bool,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn annotator(&self) -> &Annotator {
        &self.annotator
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn services_mut(&mut self) -> &mut Services {
        &mut self.services
    }

    pub fn rule_packs(&self) -> &[RulePack] {
        &self.packs
    }

    pub fn register_sensor(&mut self, reg: SensorRegistration) -> Result<(), GatewayError> {
        Ok(self.annotator.register_sensor(reg)?)
    }

    /// Runs one reading through annotate → insert → chain → notify. On error
    /// the store and sequence counters are untouched.
    pub fn ingest(&mut self, reading: &RawReading) -> Result<(IngestReceipt, Vec<Delivery>), GatewayError> {
        let graph = self.annotator.prepare(reading)?;
        self.annotator.commit(&reading.device_id);
        let size_before = self.store.len();
        let provenance = Provenance::Asserted(device_iri(&reading.device_id));
        let mut delta = Vec::new();
        for triple in graph.triples {
            let canonical = self.store.canonicalize(&triple);
            if self.store.insert(triple, provenance.clone()) {
                delta.push(canonical);
            }
        }
        let outcome = chain_incremental(&mut self.store, &self.packs, delta);
        let deliveries = self.notify(&outcome, &reading.device_id);
        let receipt = IngestReceipt {
            observation_iri: graph.observation_iri,
            triples_added: self.store.len() - size_before,
            derived: outcome.derived.iter().map(Triple::to_string).collect(),
            notifications_queued: deliveries.len(),
            derived_triples: outcome.derived,
            per_rule: outcome.stats.per_rule,
        };
        Ok((receipt, deliveries))
    }

    pub fn ingest_message(&mut self, message: &InboundMessage) -> Result<(IngestReceipt, Vec<Delivery>), GatewayError> {
        let reading = decode_message(message)?;
        self.ingest(&reading)
    }

    fn domains_of(&self, rule_id: &str) -> Vec<String> {
        self.packs
            .iter()
            .filter(|p| p.rules.iter().any(|r| r.id == rule_id))
            .flat_map(|p| p.domains.iter().cloned())
            .collect()
    }

    fn notify(&mut self, outcome: &ChainOutcome, fallback_device: &str) -> Vec<Delivery> {
        let mut deliveries = Vec::new();
        for fact in &outcome.derived {
            let envelope = envelope_for(&self.store, fact);
            let device = device_of(&self.store, fact).unwrap_or_else(|| fallback_device.to_string());
            if self.bridge_domains {
                for domain in self.domains_of(&envelope.rule_id) {
                    deliveries.push(Delivery {
                        target: EgressTarget::MqttTopic(format!("derived/{domain}")),
                        body: serde_json::to_vec(&envelope).expect("envelope serializes"),
                        origin: DeliveryOrigin::Bridge { domain },
                        device_id: device.clone(),
                    });
                }
            }
            deliveries.extend(self.services.on_derived(&self.store, fact, &envelope, &device));
        }
        deliveries
    }

    /// Re-derives everything from scratch with the active packs and notifies
    /// for facts that were not delivered before.
    fn rechain(&mut self) -> Rechain {
        self.store.retract(&ProvenanceFilter::AnyInferred);
        let outcome = forward_chain_tracked(&mut self.store, &self.packs);
        let deliveries = self.notify(&outcome, "");
        Rechain { stats: outcome.stats, deliveries }
    }

    /// Adds a rule pack, replacing an active pack with the same id. Inferred
    /// triples are retracted and the store is re-chained.
    pub fn register_rulepack(&mut self, pack: RulePack) -> Result<Rechain, GatewayError> {
        for other in self.packs.iter().filter(|p| p.pack_id != pack.pack_id) {
            if let Some(rule) = pack.rules.iter().find(|r| other.rules.iter().any(|o| o.id == r.id)) {
                return Err(GatewayError::RuleIdConflict { rule_id: rule.id.clone(), pack_id: other.pack_id.clone() });
            }
        }
        match self.packs.iter_mut().find(|p| p.pack_id == pack.pack_id) {
            Some(slot) => *slot = pack,
            None => {
                self.packs.push(pack);
                self.packs.sort_by(|a, b| a.pack_id.cmp(&b.pack_id));
            }
        }
        Ok(self.rechain())
    }

    pub fn remove_rulepack(&mut self, pack_id: &str) -> Result<Rechain, GatewayError> {
        let before = self.packs.len();
        self.packs.retain(|p| p.pack_id != pack_id);
        if self.packs.len() == before {
            return Err(GatewayError::UnknownRulePack(pack_id.to_string()));
        }
        Ok(self.rechain())
    }

    /// Loads a knowledge pack and chains over the enlarged store.
    pub fn load_pack(&mut self, document: &str, pack_id: &str) -> Result<(usize, Rechain), GatewayError> {
        let loaded = self.store.load_pack(document, pack_id)?;
        let outcome = forward_chain_tracked(&mut self.store, &self.packs);
        let deliveries = self.notify(&outcome, "");
        Ok((loaded, Rechain { stats: outcome.stats, deliveries }))
    }

    /// Retracts a knowledge pack and everything inferred, then re-chains.
    pub fn unload_pack(&mut self, pack_id: &str) -> (usize, Rechain) {
        let removed = self.store.retract(&ProvenanceFilter::Loaded(pack_id.to_string()));
        (removed, self.rechain())
    }

    pub fn query(&self, text: &str) -> Result<ResultTable, GatewayError> {
        let query = parse_query(text)?;
        Ok(evaluate_query(&query, &self.store))
    }

    pub fn export(&self) -> String {
        serialize_triples(&self.store.triples())
    }

    /// Restarts observation numbering, e.g. before a replay.
    pub fn reset_sequences(&mut self) {
        self.annotator.reset_sequences();
    }

    pub fn stats(&self) -> GatewayStats {
        let mut stats = GatewayStats {
            store_size: self.store.len(),
            rule_packs: self.packs.iter().map(|p| p.pack_id.clone()).collect(),
            subscriptions: self.services.subscription_count(),
            compositions: self.services.composition_count(),
            ..GatewayStats::default()
        };
        for rule in self.packs.iter().flat_map(|p| &p.rules) {
            stats.per_rule.insert(rule.id.clone(), 0);
        }
        for (_, provenance) in self.store.iter() {
            match provenance {
                Provenance::Asserted(_) => stats.asserted += 1,
                Provenance::Loaded(_) => stats.loaded += 1,
                Provenance::Inferred(rule) => {
                    stats.inferred += 1;
                    *stats.per_rule.entry(rule.clone()).or_insert(0) += 1;
                }
            }
        }
        stats
    }
}

/// Device that produced the observation a fact is about, from ssn:observedBy.
fn device_of(store: &Store, fact: &Triple) -> Option<String> {
    let pattern = crate::pattern::TriplePattern {
        subject: fact.subject().clone().into(),
        predicate: Term::Iri(vocab::SSN_OBSERVED_BY.into()).into(),
        object: crate::pattern::PatternTerm::Var("d".into()),
    };
    store
        .match_pattern(&pattern)
        .first()
        .and_then(|(t, _)| t.object().as_iri().map(|i| i.trim_start_matches("urn:dev:").to_string()))
}
