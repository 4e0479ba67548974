use knotgate_demo::{annotate_and_chain, run_query, validate_rulepack};
use serde_json::{json, Value};

fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../packs").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn parse(text: String) -> Value {
    serde_json::from_str(&text).unwrap()
}

#[test]
fn chain_the_golden_log() {
    let out =
        parse(annotate_and_chain(&fixture("sensors.csv"), &fixture("slor-health.rules"), "", &fixture("golden.log")));
    assert_eq!(out["ok"], true);
    assert_eq!(out["summary"]["readings"], 6);
    assert_eq!(out["summary"]["per_rule"], json!({"fever": 2}));
    assert_eq!(
        out["derived"],
        json!([
            "<urn:obs:thermo1:1> <urn:knotgate:m3#indicates> <urn:knotgate:m3#Fever> .",
            "<urn:obs:thermo1:3> <urn:knotgate:m3#indicates> <urn:knotgate:m3#Fever> ."
        ])
    );
    let export = out["export"].as_str().unwrap();
    assert_eq!(
        knotgate_core::parse_triples(export).unwrap().len(),
        6 * 6 + 2,
        "six triples per observation plus two derived"
    );
    assert_eq!(out["summary"]["triples"], 38);
}

#[test]
fn errors_name_the_stage() {
    let out = parse(annotate_and_chain(&fixture("sensors.csv"), "", "", "ghost,temperature,39,cel,1\n"));
    assert_eq!(out["ok"], false);
    assert_eq!(out["stage"], "readings");
    assert!(out["error"].as_str().unwrap().contains("line 1"));
    let out = parse(annotate_and_chain("not,a,csv", "", "", ""));
    assert_eq!(out["stage"], "sensors");
}

#[test]
fn query_after_chaining() {
    let out = parse(run_query(
        &fixture("sensors.csv"),
        &fixture("slor-health.rules"),
        &fixture("remedies.nt"),
        "thermo1,temperature,39.2,cel,1\n",
        "SELECT ?o ?r WHERE { ?o m3:indicates ?s . ?s m3:hasRemedy ?r }",
    ));
    assert_eq!(out["columns"], json!(["o", "r"]));
    assert_eq!(out["rows"].as_array().unwrap().len(), 3);
    let out = parse(run_query(&fixture("sensors.csv"), "", "", "", "SELECT ?x WHERE"));
    assert_eq!(out["stage"], "query");
}

#[test]
fn validate_packs() {
    assert_eq!(
        parse(validate_rulepack(&fixture("fire.rules"))),
        json!({"ok": true, "pack_id": "fire-detection", "domains": ["fire", "weather"], "rules": ["fire-risk"]})
    );
    let out = parse(validate_rulepack("PACK bad\nRULE leak : IF ?o m3:indicates m3:Fever THEN ?o m3:alarm ?z ."));
    assert_eq!(out["ok"], false);
    assert!(out["error"].as_str().unwrap().contains("?z"));
    assert!(out.get("position").is_none());
    let out = parse(validate_rulepack("PACK bad\nRULE x : IF ?o ?p THEN ?o ?p ?o ."));
    assert_eq!(out["position"]["line"], 2);
}
