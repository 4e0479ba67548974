//! Semantic annotation of raw readings: unit normalization and the
//! six-triple observation shape.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{make_iri, validate_iri, vocab, ModelError, Term, Triple};

/// One decoded sensor message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub device_id: String,
    pub sensor_kind: String,
    pub value: f64,
    pub unit: String,
    pub timestamp: u64,
}

impl RawReading {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.device_id.is_empty() || self.sensor_kind.is_empty() {
            return Err(AnnotationError::InvalidReading("device_id and sensor_kind must be nonempty".into()));
        }
        if !self.device_id.chars().all(is_device_id_char) {
            return Err(AnnotationError::InvalidReading(format!(
                "device_id {:?} contains characters not allowed in an IRI",
                self.device_id
            )));
        }
        if !self.value.is_finite() {
            return Err(AnnotationError::InvalidReading("value must be finite".into()));
        }
        Ok(())
    }
}

fn is_device_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '~')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorRegistration {
    pub device_id: String,
    pub observed_property: String,
    pub feature_of_interest: String,
    pub canonical_unit: String,
}

impl SensorRegistration {
    /// Builds a registration, expanding prefixed names in the IRI fields.
    pub fn new(
        device_id: &str,
        observed_property: &str,
        feature_of_interest: &str,
        canonical_unit: &str,
    ) -> Result<Self, AnnotationError> {
        let expand = |text: &str| -> Result<String, AnnotationError> {
            match make_iri(text.trim()) {
                Ok(Term::Iri(iri)) => Ok(iri),
                Ok(_) => unreachable!("make_iri yields IRIs"),
                Err(e) => Err(AnnotationError::InvalidRegistration(e.to_string())),
            }
        };
        let reg = SensorRegistration {
            device_id: device_id.trim().to_string(),
            observed_property: expand(observed_property)?,
            feature_of_interest: expand(feature_of_interest)?,
            canonical_unit: expand(canonical_unit)?,
        };
        reg.validate()?;
        Ok(reg)
    }

    fn validate(&self) -> Result<(), AnnotationError> {
        if self.device_id.is_empty() || !self.device_id.chars().all(is_device_id_char) {
            return Err(AnnotationError::InvalidRegistration(format!("bad device id {:?}", self.device_id)));
        }
        for iri in [&self.observed_property, &self.feature_of_interest, &self.canonical_unit] {
            validate_iri(iri).map_err(|e| AnnotationError::InvalidRegistration(e.to_string()))?;
        }
        Ok(())
    }

    pub fn device_iri(&self) -> String {
        device_iri(&self.device_id)
    }
}

pub fn device_iri(device_id: &str) -> String {
    format!("urn:dev:{device_id}")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("invalid registration: {0}")]
    InvalidRegistration(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
    #[error("device {0:?} is not registered")]
    UnregisteredDevice(String),
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("cannot convert {from:?} to <{to}>")]
    UnsupportedConversion { from: String, to: String },
    #[error("sensor registry line {line}: {reason}")]
    RegistryFile { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rounds away binary noise from the conversion formulas (e.g. 39.00000000000001).
fn round_significant(value: f64) -> f64 {
    format!("{value:.14e}").parse().unwrap_or(value)
}

/// Converts `value` from a unit code into a canonical unit IRI using the
/// closed conversion table.
pub fn normalize_unit(value: f64, from: &str, to: &str) -> Result<f64, AnnotationError> {
    let to = crate::model::expand(to);
    let unsupported = || AnnotationError::UnsupportedConversion { from: from.to_string(), to: to.clone() };
    match from {
        "cel" => match to.as_str() {
            vocab::UNIT_DEGREE_CELSIUS => Ok(value),
            vocab::UNIT_DEGREE_FAHRENHEIT => Ok(round_significant(value * 9.0 / 5.0 + 32.0)),
            _ => Err(unsupported()),
        },
        "far" => match to.as_str() {
            vocab::UNIT_DEGREE_CELSIUS => Ok(round_significant((value - 32.0) * 5.0 / 9.0)),
            vocab::UNIT_DEGREE_FAHRENHEIT => Ok(value),
            _ => Err(unsupported()),
        },
        "mmhg" => match to.as_str() {
            vocab::UNIT_MMHG => Ok(value),
            _ => Err(unsupported()),
        },
        other => Err(AnnotationError::UnknownUnit(other.to_string())),
    }
}

/// The six triples describing one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGraph {
    pub observation_iri: String,
    pub triples: Vec<Triple>,
}

/// Sensor registry plus the per-device observation counters.
#[derive(Debug, Clone, Default)]
pub struct Annotator {
    registry: HashMap<String, SensorRegistration>,
    sequences: HashMap<String, u64>,
}

impl Annotator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the registration for `reg.device_id`.
    pub fn register_sensor(&mut self, reg: SensorRegistration) -> Result<(), AnnotationError> {
        reg.validate()?;
        self.registry.insert(reg.device_id.clone(), reg);
        Ok(())
    }

    pub fn lookup(&self, device_id: &str) -> Option<&SensorRegistration> {
        self.registry.get(device_id)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &SensorRegistration> {
        self.registry.values()
    }

    pub fn reset_sequences(&mut self) {
        self.sequences.clear();
    }

    /// Builds the observation graph without consuming a sequence number.
    pub fn prepare(&self, reading: &RawReading) -> Result<ObservationGraph, AnnotationError> {
        reading.validate()?;
        let reg = self
            .registry
            .get(&reading.device_id)
            .ok_or_else(|| AnnotationError::UnregisteredDevice(reading.device_id.clone()))?;
        let value = normalize_unit(reading.value, &reading.unit, &reg.canonical_unit)?;
        let sequence = self.sequences.get(&reading.device_id).copied().unwrap_or(0) + 1;
        let observation_iri = format!("urn:obs:{}:{sequence}", reading.device_id);

        let obs = Term::Iri(observation_iri.clone());
        let iri = |s: &str| Term::Iri(s.to_string());
        let timestamp = i64::try_from(reading.timestamp)
            .map_err(|_| AnnotationError::InvalidReading("timestamp out of range".into()))?;
        let rows = [
            (vocab::RDF_TYPE, iri(vocab::SSN_OBSERVATION)),
            (vocab::SSN_OBSERVED_PROPERTY, iri(&reg.observed_property)),
            (vocab::SSN_OBSERVATION_RESULT, Term::double(value)?),
            (vocab::M3_HAS_UNIT, iri(&reg.canonical_unit)),
            (vocab::SSN_OBSERVED_BY, iri(&reg.device_iri())),
            (vocab::SSN_RESULT_TIME, Term::long(timestamp)),
        ];
        let triples =
            rows.into_iter().map(|(p, o)| Triple::new(obs.clone(), iri(p), o)).collect::<Result<Vec<_>, _>>()?;
        Ok(ObservationGraph { observation_iri, triples })
    }

    /// Marks the observation prepared for `device_id` as committed.
    pub fn commit(&mut self, device_id: &str) {
        *self.sequences.entry(device_id.to_string()).or_insert(0) += 1;
    }

    /// Annotates a reading, minting the next observation IRI for its device.
    pub fn annotate(&mut self, reading: &RawReading) -> Result<ObservationGraph, AnnotationError> {
        let graph = self.prepare(reading)?;
        self.commit(&reading.device_id);
        Ok(graph)
    }
}

/// Parses a sensor registry file: one `device_id,observed_property,
/// feature_of_interest,canonical_unit` row per line, `#` comments allowed.
pub fn parse_registrations(text: &str) -> Result<Vec<SensorRegistration>, AnnotationError> {
    let mut out = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |reason: String| AnnotationError::RegistryFile { line: index + 1, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(fail(format!("expected 4 columns, found {}", fields.len())));
        }
        // tolerate a header row
        if index == 0 && fields[0] == "device_id" {
            continue;
        }
        let reg =
            SensorRegistration::new(fields[0], fields[1], fields[2], fields[3]).map_err(|e| fail(e.to_string()))?;
        out.push(reg);
    }
    Ok(out)
}
