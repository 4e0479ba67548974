//! Random instance generators and brute-force reference oracles.
//!
//! The oracles deliberately avoid the engine's own matching, joining and
//! chaining code: they enumerate tuples of triples with nested loops and
//! compare terms directly.

use std::collections::{BTreeMap, BTreeSet};

use knotgate_core::model::{vocab, Term, Triple};
use knotgate_core::pattern::{Bindings, Guard, GuardOp, PatternTerm, TriplePattern};
use knotgate_core::query::Query;
use knotgate_core::rules::{Rule, RulePack};
use knotgate_core::RawReading;
use rand::seq::SliceRandom;
use rand::Rng;

pub const SUBJECTS: [&str; 5] = ["urn:t:a", "urn:t:b", "urn:t:c", "urn:t:d", "urn:t:e"];
pub const PREDICATES: [&str; 4] = ["urn:t:p0", "urn:t:p1", "urn:t:p2", "urn:t:p3"];
const VARIABLES: [&str; 4] = ["a", "b", "c", "d"];
const OPS: [GuardOp; 6] = [GuardOp::Lt, GuardOp::Le, GuardOp::Gt, GuardOp::Ge, GuardOp::Eq, GuardOp::Ne];

pub fn iri(text: &str) -> Term {
    Term::iri(text).expect("valid IRI")
}

pub fn random_subject(rng: &mut impl Rng) -> Term {
    if rng.gen_bool(0.1) {
        Term::blank(&format!("b{}", rng.gen_range(0..3))).expect("valid label")
    } else {
        iri(SUBJECTS.choose(rng).unwrap())
    }
}

pub fn random_predicate(rng: &mut impl Rng) -> Term {
    iri(PREDICATES.choose(rng).unwrap())
}

pub fn random_object(rng: &mut impl Rng) -> Term {
    match rng.gen_range(0..10) {
        0..=4 => iri(SUBJECTS.choose(rng).unwrap()),
        5..=6 => Term::double(rng.gen_range(0..8) as f64 + if rng.gen_bool(0.3) { 0.5 } else { 0.0 }).unwrap(),
        7 => Term::long(rng.gen_range(-3..8)),
        8 => Term::string(["x", "y z", "quote\"d", "tab\tline\n"].choose(rng).unwrap().to_string()),
        _ => Term::blank(&format!("b{}", rng.gen_range(0..3))).unwrap(),
    }
}

pub fn random_triple(rng: &mut impl Rng) -> Triple {
    Triple::new(random_subject(rng), random_predicate(rng), random_object(rng)).expect("generated triple is valid")
}

/// Up to `max` random triples (duplicates possible).
pub fn random_graph(rng: &mut impl Rng, max: usize) -> Vec<Triple> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| random_triple(rng)).collect()
}

pub fn random_pattern(rng: &mut impl Rng, vars: &[&str]) -> TriplePattern {
    let subject = if rng.gen_bool(0.55) {
        PatternTerm::Var(vars.choose(rng).unwrap().to_string())
    } else {
        PatternTerm::Const(iri(SUBJECTS.choose(rng).unwrap()))
    };
    let predicate = if rng.gen_bool(0.25) {
        PatternTerm::Var(vars.choose(rng).unwrap().to_string())
    } else {
        PatternTerm::Const(random_predicate(rng))
    };
    let object = if rng.gen_bool(0.6) {
        PatternTerm::Var(vars.choose(rng).unwrap().to_string())
    } else {
        PatternTerm::Const(random_object(rng))
    };
    TriplePattern { subject, predicate, object }
}

fn pattern_vars(patterns: &[TriplePattern]) -> Vec<String> {
    let set: BTreeSet<String> = patterns
        .iter()
        .flat_map(|p| p.positions().into_iter().filter_map(|t| t.as_var().map(str::to_string)))
        .collect();
    set.into_iter().collect()
}

fn random_guard(rng: &mut impl Rng, vars: &[String]) -> Guard {
    Guard {
        variable: vars.choose(rng).unwrap().clone(),
        op: *OPS.choose(rng).unwrap(),
        constant: rng.gen_range(0..8) as f64,
    }
}

/// A safe rule: every head and guard variable occurs in the body.
pub fn random_safe_rule(rng: &mut impl Rng, id: &str) -> Rule {
    let vars = &VARIABLES[..rng.gen_range(1..=3)];
    let body: Vec<TriplePattern> = (0..rng.gen_range(1..=3)).map(|_| random_pattern(rng, vars)).collect();
    let mut bound = pattern_vars(&body);
    if bound.is_empty() {
        bound.push("a".into());
        return random_safe_rule_with(rng, id, body_with_var(body), bound);
    }
    random_safe_rule_with(rng, id, body, bound)
}

fn body_with_var(mut body: Vec<TriplePattern>) -> Vec<TriplePattern> {
    body[0].subject = PatternTerm::Var("a".into());
    body
}

fn random_safe_rule_with(rng: &mut impl Rng, id: &str, body: Vec<TriplePattern>, bound: Vec<String>) -> Rule {
    let guards = if rng.gen_bool(0.4) { vec![random_guard(rng, &bound)] } else { Vec::new() };
    let head = (0..rng.gen_range(1..=2))
        .map(|_| {
            let pick = |rng: &mut _| PatternTerm::Var(bound.choose(rng).unwrap().clone());
            let subject =
                if rng.gen_bool(0.7) { pick(rng) } else { PatternTerm::Const(iri(SUBJECTS.choose(rng).unwrap())) };
            let object = if rng.gen_bool(0.7) { pick(rng) } else { PatternTerm::Const(random_object(rng)) };
            TriplePattern { subject, predicate: PatternTerm::Const(random_predicate(rng)), object }
        })
        .collect();
    Rule { id: id.to_string(), body, guards, head }
}

/// One pack of up to `max_rules` random safe rules with ids r0, r1, ...
pub fn random_pack(rng: &mut impl Rng, max_rules: usize) -> RulePack {
    let n = rng.gen_range(1..=max_rules);
    RulePack {
        pack_id: "random".into(),
        domains: vec!["test".into()],
        rules: (0..n).map(|i| random_safe_rule(rng, &format!("r{i}"))).collect(),
    }
}

/// A safe query of 1..=3 patterns selecting a nonempty subset of its variables.
pub fn random_query(rng: &mut impl Rng) -> Query {
    let vars = &VARIABLES[..rng.gen_range(1..=4)];
    let mut patterns: Vec<TriplePattern> = (0..rng.gen_range(1..=3)).map(|_| random_pattern(rng, vars)).collect();
    if pattern_vars(&patterns).is_empty() {
        patterns = body_with_var(patterns);
    }
    let bound = pattern_vars(&patterns);
    let mut select: Vec<String> = bound.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
    if select.is_empty() {
        select.push(bound.choose(rng).unwrap().clone());
    }
    select.shuffle(rng);
    let filters = if rng.gen_bool(0.3) { vec![random_guard(rng, &bound)] } else { Vec::new() };
    Query { select, patterns, filters, limit: None }
}

/// Devices used by [`random_readings`]: id, sensor kind, unit choices.
pub const DEVICES: [(&str, &str, &[&str]); 3] = [
    ("thermo1", "temperature", &["cel", "far"]),
    ("bp1", "blood-pressure", &["mmhg"]),
    ("station1", "temperature", &["cel"]),
];

/// Registry rows for [`DEVICES`], in the sensors file format.
pub const SENSORS_CSV: &str = "thermo1,m3:BodyTemperature,m3:Patient,unit:DegreeCelsius\n\
bp1,m3:SystolicBloodPressure,m3:Patient,unit:MmHg\n\
station1,m3:AmbientTemperature,m3:Forest,unit:DegreeCelsius\n";

pub fn random_readings(rng: &mut impl Rng, max: usize) -> Vec<RawReading> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|i| {
            let (device, kind, units) = DEVICES.choose(rng).unwrap();
            let unit = *units.choose(rng).unwrap();
            let value = match (*device, unit) {
                (_, "far") => rng.gen_range(95.0..105.0_f64),
                ("bp1", _) => rng.gen_range(100..181) as f64,
                ("station1", _) => rng.gen_range(20..80) as f64,
                _ => rng.gen_range(360..410) as f64 / 10.0,
            };
            RawReading {
                device_id: device.to_string(),
                sensor_kind: kind.to_string(),
                value,
                unit: unit.to_string(),
                timestamp: 1_700_000_000_000 + i as u64 * 1000,
            }
        })
        .collect()
}

/// Binds a pattern position against a term, or reports a conflict.
fn bind(position: &PatternTerm, term: &Term, bindings: &mut Bindings) -> bool {
    match position {
        PatternTerm::Const(c) => c == term,
        PatternTerm::Var(v) => match bindings.get(v) {
            Some(existing) => existing == term,
            None => {
                bindings.insert(v.clone(), term.clone());
                true
            }
        },
    }
}

/// Bindings of one pattern against one triple, starting from `bindings`.
pub fn match_one(pattern: &TriplePattern, triple: &Triple, bindings: &Bindings) -> Option<Bindings> {
    let mut out = bindings.clone();
    let ok = bind(&pattern.subject, triple.subject(), &mut out)
        && bind(&pattern.predicate, triple.predicate(), &mut out)
        && bind(&pattern.object, triple.object(), &mut out);
    ok.then_some(out)
}

/// Linear scan: all bindings for one pattern over a triple list.
pub fn scan(triples: &[Triple], pattern: &TriplePattern) -> BTreeSet<Bindings> {
    triples.iter().filter_map(|t| match_one(pattern, t, &Bindings::new())).collect()
}

/// Every tuple of triples (one per pattern) that matches consistently.
pub fn nested_loop(triples: &[Triple], patterns: &[TriplePattern]) -> BTreeSet<Bindings> {
    fn go(triples: &[Triple], patterns: &[TriplePattern], bindings: Bindings, out: &mut BTreeSet<Bindings>) {
        let Some((first, rest)) = patterns.split_first() else {
            out.insert(bindings);
            return;
        };
        for triple in triples {
            if let Some(next) = match_one(first, triple, &bindings) {
                go(triples, rest, next, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    go(triples, patterns, Bindings::new(), &mut out);
    out
}

fn numeric(term: &Term) -> Option<f64> {
    match term {
        Term::Literal { lexical, datatype } if datatype == vocab::XSD_DOUBLE || datatype == vocab::XSD_LONG => {
            lexical.parse::<f64>().ok().filter(|v| v.is_finite())
        }
        _ => None,
    }
}

/// Guard semantics: an unbound or non-numeric variable never passes.
pub fn guard_passes(guard: &Guard, bindings: &Bindings) -> bool {
    let Some(v) = bindings.get(&guard.variable).and_then(numeric) else {
        return false;
    };
    let c = guard.constant;
    match guard.op {
        GuardOp::Lt => v < c,
        GuardOp::Le => v <= c,
        GuardOp::Gt => v > c,
        GuardOp::Ge => v >= c,
        GuardOp::Eq => v == c,
        GuardOp::Ne => v != c,
    }
}

fn ground(position: &PatternTerm, bindings: &Bindings) -> Option<Term> {
    match position {
        PatternTerm::Const(c) => Some(c.clone()),
        PatternTerm::Var(v) => bindings.get(v).cloned(),
    }
}

/// Head triples one rule produces over `triples`.
pub fn rule_oracle(rule: &Rule, triples: &[Triple]) -> BTreeSet<Triple> {
    let mut out = BTreeSet::new();
    for bindings in nested_loop(triples, &rule.body) {
        if !rule.guards.iter().all(|g| guard_passes(g, &bindings)) {
            continue;
        }
        for template in &rule.head {
            let parts = (
                ground(&template.subject, &bindings),
                ground(&template.predicate, &bindings),
                ground(&template.object, &bindings),
            );
            if let (Some(s), Some(p), Some(o)) = parts {
                if let Ok(triple) = Triple::new(s, p, o) {
                    out.insert(triple);
                }
            }
        }
    }
    out
}

/// Least fixpoint of `rules` over `base` by repeated full re-evaluation.
pub fn closure(base: &BTreeSet<Triple>, rules: &[Rule]) -> BTreeSet<Triple> {
    let mut current = base.clone();
    loop {
        let list: Vec<Triple> = current.iter().cloned().collect();
        let mut next = current.clone();
        for rule in rules {
            next.extend(rule_oracle(rule, &list));
        }
        if next.len() == current.len() {
            return current;
        }
        current = next;
    }
}

/// Query rows by nested-loop enumeration, projection and set semantics.
pub fn query_oracle(triples: &[Triple], query: &Query) -> BTreeSet<Vec<Term>> {
    nested_loop(triples, &query.patterns)
        .into_iter()
        .filter(|b| query.filters.iter().all(|g| guard_passes(g, b)))
        .filter_map(|b| query.select.iter().map(|v| b.get(v).cloned()).collect::<Option<Vec<Term>>>())
        .collect()
}

/// Naive equivalence classes: merge any two classes that share a member
/// until stable; the representative is the smallest member.
pub fn alias_classes(pairs: &[(Term, Term)]) -> BTreeMap<Term, Term> {
    let mut classes: Vec<BTreeSet<Term>> = pairs.iter().map(|(a, b)| [a.clone(), b.clone()].into()).collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                if !classes[i].is_disjoint(&classes[j]) {
                    let other = classes.remove(j);
                    classes[i].extend(other);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut map = BTreeMap::new();
    for class in classes {
        let representative = class.iter().min_by(|a, b| a.to_string().cmp(&b.to_string())).unwrap().clone();
        for member in class {
            map.insert(member, representative.clone());
        }
    }
    map
}
