//! Deterministic replay of recorded readings through the gateway pipeline.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::annotation::RawReading;
use crate::gateway::{decode_reading, DecodeError, Gateway, GatewayError, PayloadFormat};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {source}")]
    Decode { line: usize, source: DecodeError },
    #[error("line {line}: {source}")]
    Ingest { line: usize, source: GatewayError },
}

impl ReplayError {
    pub fn line(&self) -> usize {
        match self {
            ReplayError::Decode { line, .. } | ReplayError::Ingest { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplaySpeed {
    /// Sleep for the timestamp gap between consecutive readings.
    Realtime,
    #[default]
    Max,
}

/// Parses a replay log: one CSV reading per line, blank lines and `#`
/// comments skipped. Returns readings with their 1-based line numbers.
pub fn parse_log(text: &str) -> Result<Vec<(usize, RawReading)>, ReplayError> {
    let mut readings = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let reading = decode_reading(line.as_bytes(), PayloadFormat::Csv, 0)
            .map_err(|source| ReplayError::Decode { line: index + 1, source })?;
        readings.push((index + 1, reading));
    }
    Ok(readings)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub readings: usize,
    /// Triples added to the store, observations and derivations together.
    pub triples: usize,
    pub derived: usize,
    pub notifications: usize,
    pub per_rule: BTreeMap<String, usize>,
}

/// Feeds a log through `gateway.ingest` in order. The log is fully decoded
/// before anything is ingested; observation numbering restarts at 1.
pub fn replay(gateway: &mut Gateway, log: &str, speed: ReplaySpeed) -> Result<ReplaySummary, ReplayError> {
    let readings = parse_log(log)?;
    gateway.reset_sequences();
    let mut summary = ReplaySummary::default();
    for rule in gateway.rule_packs().iter().flat_map(|p| &p.rules) {
        summary.per_rule.insert(rule.id.clone(), 0);
    }
    let mut previous: Option<u64> = None;
    for (line, reading) in readings {
        if speed == ReplaySpeed::Realtime {
            if let Some(gap) = previous.and_then(|p| reading.timestamp.checked_sub(p)) {
                std::thread::sleep(Duration::from_millis(gap));
            }
            previous = Some(reading.timestamp);
        }
        let (receipt, deliveries) = gateway.ingest(&reading).map_err(|source| ReplayError::Ingest { line, source })?;
        summary.readings += 1;
        summary.triples += receipt.triples_added;
        summary.derived += receipt.derived_triples.len();
        summary.notifications += deliveries.len();
        for (rule, count) in receipt.per_rule {
            *summary.per_rule.entry(rule).or_insert(0) += count;
        }
    }
    Ok(summary)
}
