//! Outbound services: pattern subscriptions and composition pipelines that
//! turn a derived fact into an enriched response.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Delivery, DeliveryOrigin, EgressTarget, Envelope};
use crate::model::{Term, Triple};
use crate::pattern::{Bindings, TriplePattern};
use crate::query::{evaluate_query_with, parse_query_unchecked, Query, QueryError, ResultTable};
use crate::store::Store;
use crate::syntax::{SyntaxError, TokenStream};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("pattern must have at least one concrete position")]
    UnboundedPattern,
    #[error("invalid endpoint: {0}")]
    Endpoint(String),
    #[error("trigger: {0}")]
    Trigger(SyntaxError),
    #[error("lookup: {0}")]
    Lookup(QueryError),
    #[error("lookup variable ?{0} is bound neither by the lookup nor the trigger")]
    UnboundLookupVariable(String),
    #[error("placeholder {{{0}}} is not a trigger variable")]
    UnknownScalar(String),
    #[error("placeholder {{{0}[]}} is not a selected lookup column")]
    UnknownList(String),
    #[error("duplicate service id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscription {
    pub id: String,
    pub pattern: TriplePattern,
    pub endpoint: EgressTarget,
}

/// Registration body for a composition, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpec {
    #[serde(default)]
    pub id: Option<String>,
    /// A single triple pattern, e.g. `?o m3:indicates ?state`.
    pub trigger: String,
    /// A query evaluated with the trigger bindings preset.
    pub lookup: String,
    pub response_template: Value,
    pub endpoint: EgressTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionPipeline {
    pub id: String,
    pub trigger: TriplePattern,
    pub lookup: Query,
    pub response_template: Value,
    pub endpoint: EgressTarget,
}

/// Parses a lone triple pattern.
pub fn parse_pattern(text: &str) -> Result<TriplePattern, SyntaxError> {
    let mut tokens = TokenStream::new(text)?;
    let pattern = tokens.pattern()?;
    if !tokens.at_end() {
        return Err(tokens.error("unexpected trailing input"));
    }
    Ok(pattern)
}

enum Placeholder<'a> {
    List(&'a str),
    Scalar(&'a str),
}

/// Placeholders in a template string: `{name[]}` when it is the whole
/// string, otherwise every `{name}` occurrence.
fn placeholders(s: &str) -> Vec<Placeholder<'_>> {
    if let Some(name) = s.strip_prefix('{').and_then(|r| r.strip_suffix("[]}")) {
        if is_name(name) {
            return vec![Placeholder::List(name)];
        }
    }
    let mut found = Vec::new();
    let mut rest = s;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_name(&after[..end]) => {
                found.push(Placeholder::Scalar(&after[..end]));
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    found
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn template_strings<'a>(value: &'a Value, out: &mut Vec<&'a str>) {
    match value {
        Value::String(s) => out.push(s),
        Value::Array(items) => items.iter().for_each(|v| template_strings(v, out)),
        Value::Object(map) => map.values().for_each(|v| template_strings(v, out)),
        _ => {}
    }
}

fn render(term: &Term) -> String {
    match term {
        Term::Iri(_) => term.compact(),
        Term::Literal { lexical, .. } => lexical.clone(),
        Term::Blank(_) => term.to_string(),
    }
}

/// Fills `{var}` from the trigger bindings and `{var[]}` with the lookup
/// column `var` as a JSON array.
pub fn fill_template(template: &Value, bindings: &Bindings, table: &ResultTable) -> Value {
    match template {
        Value::String(s) => {
            if let [Placeholder::List(name)] = placeholders(s).as_slice() {
                if s.len() == name.len() + 4 {
                    return Value::Array(table.column(name).iter().map(|t| Value::String(render(t))).collect());
                }
            }
            let mut out = s.clone();
            for placeholder in placeholders(s) {
                if let Placeholder::Scalar(name) = placeholder {
                    if let Some(term) = bindings.get(name) {
                        out = out.replace(&format!("{{{name}}}"), &render(term));
                    }
                }
            }
            Value::String(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill_template(v, bindings, table)).collect()),
        Value::Object(map) => {
            Value::Object(map.iter().map(|(k, v)| (k.clone(), fill_template(v, bindings, table))).collect())
        }
        other => other.clone(),
    }
}

impl CompositionPipeline {
    pub fn from_spec(spec: CompositionSpec, id: String) -> Result<Self, ServiceError> {
        spec.endpoint.validate().map_err(ServiceError::Endpoint)?;
        let trigger = parse_pattern(&spec.trigger).map_err(ServiceError::Trigger)?;
        let lookup = parse_query_unchecked(&spec.lookup).map_err(ServiceError::Lookup)?;
        let trigger_vars: BTreeSet<&str> = trigger.variables();
        if let Some(v) = lookup.unsafe_variable(&trigger_vars) {
            return Err(ServiceError::UnboundLookupVariable(v));
        }
        let mut strings = Vec::new();
        template_strings(&spec.response_template, &mut strings);
        for s in strings {
            for placeholder in placeholders(s) {
                match placeholder {
                    Placeholder::Scalar(name) if !trigger_vars.contains(name) => {
                        return Err(ServiceError::UnknownScalar(name.to_string()));
                    }
                    Placeholder::List(name) if !lookup.select.iter().any(|c| c == name) => {
                        return Err(ServiceError::UnknownList(name.to_string()));
                    }
                    _ => {}
                }
            }
        }
        Ok(CompositionPipeline {
            id,
            trigger,
            lookup,
            response_template: spec.response_template,
            endpoint: spec.endpoint,
        })
    }

    /// Response for a fact matching the trigger, or `None` when it does not match.
    pub fn respond(&self, store: &Store, fact: &Triple) -> Option<Value> {
        let bindings = self.trigger.unify(fact, &Bindings::new())?;
        let table = evaluate_query_with(&self.lookup, store, &bindings);
        Some(fill_template(&self.response_template, &bindings, &table))
    }
}

/// Registered subscriptions and compositions plus the at-most-once ledger.
#[derive(Debug, Clone, Default)]
pub struct Services {
    subscriptions: BTreeMap<String, Subscription>,
    compositions: BTreeMap<String, CompositionPipeline>,
    delivered: HashSet<(String, Triple)>,
    next_id: u64,
}

impl Services {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh_id(&mut self, prefix: &str) -> String {
        loop {
            self.next_id += 1;
            let id = format!("{prefix}-{}", self.next_id);
            if !self.subscriptions.contains_key(&id) && !self.compositions.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn subscribe(&mut self, pattern: TriplePattern, endpoint: EgressTarget) -> Result<String, ServiceError> {
        if pattern.concrete_positions() == 0 {
            return Err(ServiceError::UnboundedPattern);
        }
        endpoint.validate().map_err(ServiceError::Endpoint)?;
        let id = self.fresh_id("sub");
        self.subscriptions.insert(id.clone(), Subscription { id: id.clone(), pattern, endpoint });
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: &str) -> bool {
        self.delivered.retain(|(sub, _)| sub != id);
        self.subscriptions.remove(id).is_some()
    }

    pub fn register_composition(&mut self, spec: CompositionSpec) -> Result<String, ServiceError> {
        let id = match &spec.id {
            Some(id) if self.compositions.contains_key(id) || self.subscriptions.contains_key(id) => {
                return Err(ServiceError::DuplicateId(id.clone()));
            }
            Some(id) => id.clone(),
            None => self.fresh_id("comp"),
        };
        let pipeline = CompositionPipeline::from_spec(spec, id.clone())?;
        self.compositions.insert(id.clone(), pipeline);
        Ok(id)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values()
    }

    pub fn compositions(&self) -> impl Iterator<Item = &CompositionPipeline> {
        self.compositions.values()
    }

    pub fn subscription_count(&self) -> usize {
        self.subscriptions.len()
    }

    pub fn composition_count(&self) -> usize {
        self.compositions.len()
    }

    /// Deliveries caused by one newly derived fact. Each subscription gets a
    /// fact at most once; compositions fire whenever their trigger matches.
    pub fn on_derived(&mut self, store: &Store, fact: &Triple, envelope: &Envelope, device_id: &str) -> Vec<Delivery> {
        let mut out = Vec::new();
        for sub in self.subscriptions.values() {
            if sub.pattern.matches(fact) && self.delivered.insert((sub.id.clone(), fact.clone())) {
                out.push(Delivery {
                    target: sub.endpoint.clone(),
                    body: serde_json::to_vec(envelope).expect("envelope serializes"),
                    origin: DeliveryOrigin::Subscription { id: sub.id.clone() },
                    device_id: device_id.to_string(),
                });
            }
        }
        for pipeline in self.compositions.values() {
            if self.delivered.contains(&(pipeline.id.clone(), fact.clone())) {
                continue;
            }
            if let Some(response) = pipeline.respond(store, fact) {
                self.delivered.insert((pipeline.id.clone(), fact.clone()));
                out.push(Delivery {
                    target: pipeline.endpoint.clone(),
                    body: serde_json::to_vec(&response).expect("response serializes"),
                    origin: DeliveryOrigin::Composition { id: pipeline.id.clone() },
                    device_id: device_id.to_string(),
                });
            }
        }
        out
    }
}
