//! Network side of knotgate: the HTTP API, the MQTT and CoAP ingest
//! adapters, webhook and MQTT egress, and server configuration.

pub mod api;
pub mod broker;
pub mod coap;
pub mod config;
pub mod error;
pub mod mqtt;
pub mod runtime;

pub use broker::LoopbackBroker;
pub use config::{Config, ConfigError};
pub use runtime::{start, AppState, MqttSettings, Running, ServeOptions, StartError};
