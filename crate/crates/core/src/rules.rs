//! Shareable sensor-interpretation rule packs and naive forward chaining.
//!
//! A pack looks like
//!
//! ```text
//! PACK slor-health DOMAIN health
//! RULE fever : IF ?o rdf:type ssn:Observation . ?o ssn:observedProperty m3:BodyTemperature .
//!     ?o ssn:observationResult ?v FILTER ?v > 38.0 THEN ?o m3:indicates m3:Fever .
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::model::Triple;
use crate::pattern::{Bindings, Guard, TriplePattern};
use crate::store::{Provenance, Store};
use crate::syntax::{Position, SyntaxError, Token, TokenStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub body: Vec<TriplePattern>,
    pub guards: Vec<Guard>,
    pub head: Vec<TriplePattern>,
}

impl Rule {
    pub fn body_variables(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(TriplePattern::variables).collect()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RULE {} : IF ", self.id)?;
        for (i, p) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(" . ")?;
            }
            write!(f, "{p}")?;
        }
        for g in &self.guards {
            write!(f, " FILTER {g}")?;
        }
        f.write_str(" THEN ")?;
        for p in &self.head {
            write!(f, "{p} . ")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulePack {
    pub pack_id: String,
    pub domains: Vec<String>,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("rule {rule_id:?} is unsafe: variable ?{variable} is not bound by the rule body")]
    Safety { rule_id: String, variable: String },
}

impl RuleError {
    pub fn position(&self) -> Option<Position> {
        match self {
            RuleError::Syntax(e) => Some(e.position),
            RuleError::Safety { .. } => None,
        }
    }
}

/// Every head or guard variable that no body pattern binds, sorted.
pub fn check_safety(rule: &Rule) -> Result<(), Vec<String>> {
    let bound = rule.body_variables();
    let mut used: BTreeSet<&str> = rule.head.iter().flat_map(TriplePattern::variables).collect();
    used.extend(rule.guards.iter().map(|g| g.variable.as_str()));
    let violations: Vec<String> = used.difference(&bound).map(|v| v.to_string()).collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

pub fn parse_rulepack(text: &str) -> Result<RulePack, RuleError> {
    let mut tokens = TokenStream::new(text)?;
    tokens.expect_keyword("PACK")?;
    let pack_id = tokens.identifier("a pack id")?;
    let mut domains = Vec::new();
    while tokens.eat_keyword("DOMAIN") {
        domains.push(tokens.identifier("a domain tag")?);
    }
    let mut rules: Vec<Rule> = Vec::new();
    let mut seen = HashSet::new();
    while !tokens.at_end() {
        let position = tokens.position();
        let rule = parse_rule(&mut tokens)?;
        if !seen.insert(rule.id.clone()) {
            return Err(SyntaxError::new(position, format!("duplicate rule id {:?}", rule.id)).into());
        }
        if let Err(violations) = check_safety(&rule) {
            return Err(RuleError::Safety { rule_id: rule.id, variable: violations[0].clone() });
        }
        rules.push(rule);
    }
    Ok(RulePack { pack_id, domains, rules })
}

fn parse_rule(tokens: &mut TokenStream) -> Result<Rule, SyntaxError> {
    tokens.expect_keyword("RULE")?;
    let id = tokens.identifier("a rule id")?;
    tokens.expect(&Token::Colon)?;
    tokens.expect_keyword("IF")?;
    let mut body = vec![tokens.pattern()?];
    while tokens.eat(&Token::Dot) {
        if tokens.is_keyword("FILTER") || tokens.is_keyword("THEN") {
            break;
        }
        body.push(tokens.pattern()?);
    }
    let mut guards = Vec::new();
    while tokens.eat_keyword("FILTER") {
        guards.push(tokens.guard()?);
    }
    tokens.expect_keyword("THEN")?;
    let mut head = vec![tokens.pattern()?];
    loop {
        tokens.expect(&Token::Dot)?;
        if tokens.at_end() || tokens.is_keyword("RULE") {
            break;
        }
        head.push(tokens.pattern()?);
    }
    Ok(Rule { id, body, guards, head })
}

/// Ground head instantiations of one rule over the current store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleOutput {
    pub triples: BTreeSet<Triple>,
    /// Bindings skipped because a guard variable was bound to a non-numeric term.
    pub guard_type_errors: usize,
    /// Head instantiations that did not form a valid triple (e.g. literal subject).
    pub invalid_heads: usize,
}

fn fire(rule: &Rule, solutions: Vec<Bindings>, out: &mut RuleOutput) {
    'solutions: for bindings in solutions {
        for guard in &rule.guards {
            match guard.check(&bindings) {
                Ok(true) => {}
                Ok(false) => continue 'solutions,
                Err(_) => {
                    out.guard_type_errors += 1;
                    continue 'solutions;
                }
            }
        }
        for template in &rule.head {
            match template.instantiate(&bindings) {
                Some(triple) => {
                    out.triples.insert(triple);
                }
                None => out.invalid_heads += 1,
            }
        }
    }
}

pub fn evaluate_rule(rule: &Rule, store: &Store) -> RuleOutput {
    let mut out = RuleOutput::default();
    fire(rule, store.solve(&rule.body, &Bindings::new()), &mut out);
    out
}

/// Like [`evaluate_rule`] but only over body matches that use at least one
/// triple from `delta`.
fn evaluate_rule_delta(rule: &Rule, store: &Store, delta: &[Triple]) -> RuleOutput {
    let mut out = RuleOutput::default();
    let mut seen = HashSet::new();
    for (i, pattern) in rule.body.iter().enumerate() {
        let rest: Vec<TriplePattern> =
            rule.body.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p.clone()).collect();
        for triple in delta {
            let Some(seed) = pattern.unify(triple, &Bindings::new()) else {
                continue;
            };
            let solutions: Vec<Bindings> =
                store.solve(&rest, &seed).into_iter().filter(|b| seen.insert(b.clone())).collect();
            fire(rule, solutions, &mut out);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainStats {
    pub rounds: usize,
    pub derived: usize,
    /// New triples credited to each rule (first rule to insert a triple owns
    /// it). Every rule that was evaluated has an entry, possibly zero.
    pub per_rule: BTreeMap<String, usize>,
    pub guard_type_errors: usize,
}

impl ChainStats {
    pub fn absorb(&mut self, other: &ChainStats) {
        self.rounds += other.rounds;
        self.derived += other.derived;
        self.guard_type_errors += other.guard_type_errors;
        for (rule, count) in &other.per_rule {
            *self.per_rule.entry(rule.clone()).or_insert(0) += count;
        }
    }
}

/// Result of a chaining run: stats plus the triples it inserted, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainOutcome {
    pub stats: ChainStats,
    pub derived: Vec<Triple>,
}

fn all_rules(packs: &[RulePack]) -> impl Iterator<Item = &Rule> {
    packs.iter().flat_map(|p| p.rules.iter())
}

/// Runs every rule of every pack until a round inserts nothing. Each round
/// evaluates all rules against the store as it was at the start of the
/// round, then inserts the results with `Inferred(rule_id)` provenance.
pub fn forward_chain(store: &mut Store, packs: &[RulePack]) -> ChainStats {
    forward_chain_tracked(store, packs).stats
}

pub fn forward_chain_tracked(store: &mut Store, packs: &[RulePack]) -> ChainOutcome {
    run_rounds(store, packs, None)
}

/// Semi-naive continuation after `delta` was added to a store that was
/// already closed under `packs`. Produces the same fixpoint as
/// [`forward_chain`].
pub fn chain_incremental(store: &mut Store, packs: &[RulePack], delta: Vec<Triple>) -> ChainOutcome {
    run_rounds(store, packs, Some(delta))
}

fn run_rounds(store: &mut Store, packs: &[RulePack], mut delta: Option<Vec<Triple>>) -> ChainOutcome {
    let mut outcome = ChainOutcome::default();
    for rule in all_rules(packs) {
        outcome.stats.per_rule.entry(rule.id.clone()).or_insert(0);
    }
    loop {
        outcome.stats.rounds += 1;
        let mut produced: Vec<(&Rule, RuleOutput)> = Vec::new();
        for rule in all_rules(packs) {
            let output = match &delta {
                None => evaluate_rule(rule, store),
                Some(delta) => evaluate_rule_delta(rule, store, delta),
            };
            outcome.stats.guard_type_errors += output.guard_type_errors;
            produced.push((rule, output));
        }
        let mut inserted = Vec::new();
        for (rule, output) in produced {
            for triple in output.triples {
                if store.insert(triple.clone(), Provenance::Inferred(rule.id.clone())) {
                    *outcome.stats.per_rule.entry(rule.id.clone()).or_insert(0) += 1;
                    inserted.push(store.canonicalize(&triple));
                }
            }
        }
        if inserted.is_empty() {
            break;
        }
        outcome.stats.derived += inserted.len();
        outcome.derived.extend(inserted.iter().cloned());
        delta = delta.map(|_| inserted);
    }
    outcome
}
