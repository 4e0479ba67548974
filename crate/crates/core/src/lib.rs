//! Core of the knotgate semantic IoT gateway.
//!
//! Raw sensor readings are annotated into observation triples, stored with
//! provenance, interpreted by shareable forward-chaining rule packs and
//! exposed through queries, subscriptions and composed services.

pub mod alias;
pub mod annotation;
pub mod gateway;
pub mod model;
pub mod pattern;
pub mod query;
pub mod replay;
pub mod rules;
pub mod services;
pub mod store;
pub mod syntax;

pub use annotation::{normalize_unit, Annotator, ObservationGraph, RawReading, SensorRegistration};
pub use gateway::{decode_reading, topic_to_route, Gateway, GatewayError, IngestReceipt, PayloadFormat};
pub use model::{make_iri, make_numeric, parse_triples, serialize_triples, Term, Triple};
pub use pattern::{Bindings, Guard, GuardOp, PatternTerm, TriplePattern};
pub use query::{evaluate_query, parse_query, Query, ResultTable};
pub use replay::{replay, ReplaySpeed, ReplaySummary};
pub use rules::{check_safety, evaluate_rule, forward_chain, parse_rulepack, ChainStats, Rule, RulePack};
pub use services::{CompositionSpec, Services, Subscription};
pub use store::{Provenance, ProvenanceFilter, Store};
