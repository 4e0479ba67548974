//! Browser bindings: annotate and chain a reading log, query the result, and
//! validate a rule pack. Every function returns a JSON string so the page
//! and the native tests read the same output.

use knotgate_core::annotation::parse_registrations;
use knotgate_core::gateway::Gateway;
use knotgate_core::rules::parse_rulepack;
use knotgate_core::{replay, ReplaySpeed};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(stage: &str, detail: impl ToString) -> Value {
    json!({"ok": false, "stage": stage, "error": detail.to_string()})
}

fn build(sensors: &str, rulepack: &str, knowledge: &str, log: &str) -> Result<(Gateway, Value), Value> {
    let mut gateway = Gateway::new();
    for reg in parse_registrations(sensors).map_err(|e| error("sensors", e))? {
        gateway.register_sensor(reg).map_err(|e| error("sensors", e))?;
    }
    if !rulepack.trim().is_empty() {
        let pack = parse_rulepack(rulepack).map_err(|e| error("rulepack", e))?;
        gateway.register_rulepack(pack).map_err(|e| error("rulepack", e))?;
    }
    if !knowledge.trim().is_empty() {
        gateway.load_pack(knowledge, "knowledge").map_err(|e| error("knowledge", e))?;
    }
    let summary = replay(&mut gateway, log, ReplaySpeed::Max).map_err(|e| error("readings", e))?;
    let summary = json!({
        "readings": summary.readings,
        "triples": summary.triples,
        "derived": summary.derived,
        "per_rule": summary.per_rule,
    });
    Ok((gateway, summary))
}

fn derived_facts(gateway: &Gateway) -> Vec<String> {
    gateway
        .store()
        .iter()
        .filter(|(_, p)| matches!(p, knotgate_core::Provenance::Inferred(_)))
        .map(|(t, _)| t.to_string())
        .collect()
}

/// Registers `sensors` (CSV), loads the rule pack and knowledge pack, replays
/// `log` and returns `{ok, summary, derived, export}`.
#[wasm_bindgen]
pub fn annotate_and_chain(sensors: &str, rulepack: &str, knowledge: &str, log: &str) -> String {
    let result = build(sensors, rulepack, knowledge, log).map(|(gateway, summary)| {
        json!({"ok": true, "summary": summary, "derived": derived_facts(&gateway), "export": gateway.export()})
    });
    result.unwrap_or_else(|e| e).to_string()
}

/// Same setup as `annotate_and_chain`, then runs `query` and returns
/// `{ok, columns, rows}`.
#[wasm_bindgen]
pub fn run_query(sensors: &str, rulepack: &str, knowledge: &str, log: &str, query: &str) -> String {
    let result = build(sensors, rulepack, knowledge, log).and_then(|(gateway, _)| {
        let table = gateway.query(query).map_err(|e| error("query", e))?;
        Ok(json!({"ok": true, "columns": table.columns, "rows": table.string_rows()}))
    });
    result.unwrap_or_else(|e| e).to_string()
}

/// Parses and safety-checks a rule pack: `{ok, pack_id, domains, rules}` or
/// `{ok: false, error, position?}`.
#[wasm_bindgen]
pub fn validate_rulepack(text: &str) -> String {
    match parse_rulepack(text) {
        Ok(pack) => json!({
            "ok": true,
            "pack_id": pack.pack_id,
            "domains": pack.domains,
            "rules": pack.rules.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
        }),
        Err(e) => {
            let mut out = error("rulepack", &e);
            if let Some(position) = e.position() {
                out["position"] = json!({"line": position.line, "column": position.column});
            }
            out
        }
    }
    .to_string()
}
