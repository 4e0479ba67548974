//! Server configuration file and startup loading.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use knotgate_core::annotation::parse_registrations;
use knotgate_core::gateway::{Gateway, RetryPolicy};
use knotgate_core::rules::parse_rulepack;
use knotgate_core::services::CompositionSpec;
use serde::Deserialize;
use thiserror::Error;

use crate::runtime::{MqttSettings, ServeOptions};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    pub bind: IpAddr,
    pub port: u16,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig { bind: IpAddr::V4(Ipv4Addr::LOCALHOST), port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MqttConfig {
    pub enabled: bool,
    pub broker_url: String,
    pub client_id: String,
    /// Publish derived facts to `derived/{domain}`.
    pub publish_derived: bool,
}

impl Default for MqttConfig {
    fn default() -> Self {
        MqttConfig {
            enabled: false,
            broker_url: "mqtt://127.0.0.1:1883".into(),
            client_id: "knotgate".into(),
            publish_derived: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoapConfig {
    pub enabled: bool,
    pub bind: IpAddr,
    pub port: u16,
}

impl Default for CoapConfig {
    fn default() -> Self {
        CoapConfig { enabled: false, bind: IpAddr::V4(Ipv4Addr::LOCALHOST), port: 5683 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadConfig {
    pub sensors: Vec<PathBuf>,
    pub rulepacks: Vec<PathBuf>,
    /// Knowledge packs; the pack id is the file stem.
    pub packs: Vec<PathBuf>,
    pub compositions: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub http: HttpConfig,
    pub mqtt: MqttConfig,
    pub coap: CoapConfig,
    pub load: LoadConfig,
    /// Directory that relative paths in `[load]` are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Syntax { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Load { path: PathBuf, detail: String },
}

impl ConfigError {
    pub fn path(&self) -> &Path {
        match self {
            ConfigError::Read { path, .. } | ConfigError::Syntax { path, .. } | ConfigError::Load { path, .. } => path,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Config, ConfigError> {
        let mut config: Config = toml::from_str(text)
            .map_err(|e| ConfigError::Syntax { path: path.to_path_buf(), detail: e.to_string() })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        Config::parse(&read(path)?, path)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Builds a gateway with every listed file loaded: sensors, rule packs,
    /// knowledge packs, then compositions.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new();
        gateway.bridge_domains = self.mqtt.enabled && self.mqtt.publish_derived;
        let fail = |path: &Path, detail: String| ConfigError::Load { path: path.to_path_buf(), detail };
        for file in &self.load.sensors {
            let path = self.resolve(file);
            for reg in parse_registrations(&read(&path)?).map_err(|e| fail(&path, e.to_string()))? {
                gateway.register_sensor(reg).map_err(|e| fail(&path, e.to_string()))?;
            }
        }
        for file in &self.load.rulepacks {
            let path = self.resolve(file);
            let pack = parse_rulepack(&read(&path)?).map_err(|e| fail(&path, e.to_string()))?;
            gateway.register_rulepack(pack).map_err(|e| fail(&path, e.to_string()))?;
        }
        for file in &self.load.packs {
            let path = self.resolve(file);
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            gateway.load_pack(&read(&path)?, &id).map_err(|e| fail(&path, e.to_string()))?;
        }
        for file in &self.load.compositions {
            let path = self.resolve(file);
            let spec: CompositionSpec = serde_json::from_str(&read(&path)?).map_err(|e| fail(&path, e.to_string()))?;
            gateway.services_mut().register_composition(spec).map_err(|e| fail(&path, e.to_string()))?;
        }
        Ok(gateway)
    }

    pub fn serve_options(&self) -> ServeOptions {
        ServeOptions {
            http: SocketAddr::new(self.http.bind, self.http.port),
            coap: self.coap.enabled.then(|| SocketAddr::new(self.coap.bind, self.coap.port)),
            mqtt: self.mqtt.enabled.then(|| MqttSettings {
                broker_url: self.mqtt.broker_url.clone(),
                client_id: self.mqtt.client_id.clone(),
            }),
            retry: RetryPolicy::default(),
        }
    }
}
