//! In-memory triple store with subject/predicate/object indexes and a
//! provenance tag per triple.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::alias::AliasMap;
use crate::model::{parse_triples, vocab, ParseError, Term, Triple};
use crate::pattern::{Bindings, PatternTerm, TriplePattern};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    /// Reported by a device (the device IRI).
    Asserted(String),
    /// Derived by the named rule.
    Inferred(String),
    /// Loaded from the named knowledge pack.
    Loaded(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Asserted(source) => write!(f, "asserted:{source}"),
            Provenance::Inferred(rule) => write!(f, "inferred:{rule}"),
            Provenance::Loaded(pack) => write!(f, "loaded:{pack}"),
        }
    }
}

/// Selects triples by provenance for retraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProvenanceFilter {
    AnyAsserted,
    Asserted(String),
    AnyInferred,
    Inferred(String),
    AnyLoaded,
    Loaded(String),
}

impl ProvenanceFilter {
    pub fn matches(&self, provenance: &Provenance) -> bool {
        match (self, provenance) {
            (ProvenanceFilter::AnyAsserted, Provenance::Asserted(_))
            | (ProvenanceFilter::AnyInferred, Provenance::Inferred(_))
            | (ProvenanceFilter::AnyLoaded, Provenance::Loaded(_)) => true,
            (ProvenanceFilter::Asserted(a), Provenance::Asserted(b))
            | (ProvenanceFilter::Inferred(a), Provenance::Inferred(b))
            | (ProvenanceFilter::Loaded(a), Provenance::Loaded(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("pack id must not be empty")]
    EmptyPackId,
}

type Index = HashMap<Term, BTreeSet<Triple>>;

#[derive(Debug, Clone, Default)]
pub struct Store {
    facts: BTreeMap<Triple, Provenance>,
    by_subject: Index,
    by_predicate: Index,
    by_object: Index,
    aliases: AliasMap,
}

impl PartialEq for Store {
    fn eq(&self, other: &Self) -> bool {
        self.facts == other.facts && self.aliases == other.aliases
    }
}

fn is_alias_statement(triple: &Triple) -> bool {
    triple.predicate().as_iri() == Some(vocab::M3_EQUIVALENT_TO)
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.contains_key(triple)
    }

    pub fn provenance(&self, triple: &Triple) -> Option<&Provenance> {
        self.facts.get(triple)
    }

    /// All triples with their provenance, in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&Triple, &Provenance)> {
        self.facts.iter()
    }

    pub fn triples(&self) -> Vec<Triple> {
        self.facts.keys().cloned().collect()
    }

    /// Triple set without provenance, for set-equality comparisons.
    pub fn triple_set(&self) -> BTreeSet<Triple> {
        self.facts.keys().cloned().collect()
    }

    /// Inserts `triple` after alias canonicalization. Returns `false` and
    /// keeps the original provenance when the triple is already stored.
    pub fn insert(&mut self, triple: Triple, provenance: Provenance) -> bool {
        let triple = self.canonicalize(&triple);
        self.insert_raw(triple, provenance)
    }

    fn insert_raw(&mut self, triple: Triple, provenance: Provenance) -> bool {
        if self.facts.contains_key(&triple) {
            return false;
        }
        for (index, term) in [
            (&mut self.by_subject, triple.subject()),
            (&mut self.by_predicate, triple.predicate()),
            (&mut self.by_object, triple.object()),
        ] {
            index.entry(term.clone()).or_default().insert(triple.clone());
        }
        self.facts.insert(triple, provenance);
        true
    }

    fn remove(&mut self, triple: &Triple) -> Option<Provenance> {
        let provenance = self.facts.remove(triple)?;
        for (index, term) in [
            (&mut self.by_subject, triple.subject()),
            (&mut self.by_predicate, triple.predicate()),
            (&mut self.by_object, triple.object()),
        ] {
            if let Some(set) = index.get_mut(term) {
                set.remove(triple);
                if set.is_empty() {
                    index.remove(term);
                }
            }
        }
        Some(provenance)
    }

    /// Canonical form of a triple. Alias statements themselves are kept
    /// verbatim so they survive export and re-load.
    pub fn canonicalize(&self, triple: &Triple) -> Triple {
        if self.aliases.is_empty() || is_alias_statement(triple) {
            return triple.clone();
        }
        triple.map_terms(|t| self.aliases.resolve(t)).unwrap_or_else(|_| triple.clone())
    }

    pub fn resolve_alias(&self, term: &Term) -> Term {
        self.aliases.resolve(term)
    }

    fn canonicalize_pattern(&self, pattern: &TriplePattern) -> TriplePattern {
        if self.aliases.is_empty() {
            return pattern.clone();
        }
        let canon = |p: &PatternTerm| match p {
            PatternTerm::Const(term) => PatternTerm::Const(self.aliases.resolve(term)),
            var => var.clone(),
        };
        TriplePattern {
            subject: canon(&pattern.subject),
            predicate: canon(&pattern.predicate),
            object: canon(&pattern.object),
        }
    }

    /// Stored triples that may unify with `pattern`, drawn from the
    /// narrowest index among its concrete positions.
    fn candidates<'a>(&'a self, pattern: &TriplePattern) -> Box<dyn Iterator<Item = &'a Triple> + 'a> {
        let mut best: Option<&'a BTreeSet<Triple>> = None;
        for (index, position) in [
            (&self.by_subject, &pattern.subject),
            (&self.by_predicate, &pattern.predicate),
            (&self.by_object, &pattern.object),
        ] {
            if let PatternTerm::Const(term) = position {
                match index.get(term) {
                    None => return Box::new(std::iter::empty()),
                    Some(set) => {
                        if best.is_none_or(|b| set.len() < b.len()) {
                            best = Some(set);
                        }
                    }
                }
            }
        }
        match best {
            Some(set) => Box::new(set.iter()),
            None => Box::new(self.facts.keys()),
        }
    }

    pub fn count_matches(&self, pattern: &TriplePattern) -> usize {
        let pattern = self.canonicalize_pattern(pattern);
        self.candidates(&pattern).filter(|t| pattern.matches(t)).count()
    }

    /// Stored triples unifying with `pattern`, each with its bindings.
    pub fn match_pattern(&self, pattern: &TriplePattern) -> Vec<(Triple, Bindings)> {
        let pattern = self.canonicalize_pattern(pattern);
        let empty = Bindings::new();
        self.candidates(&pattern).filter_map(|t| pattern.unify(t, &empty).map(|b| (t.clone(), b))).collect()
    }

    /// Solves a conjunction of patterns, extending `seed`. Evaluation starts
    /// from the pattern with the fewest matches and then proceeds left to
    /// right, propagating bindings.
    pub fn solve(&self, patterns: &[TriplePattern], seed: &Bindings) -> Vec<Bindings> {
        let patterns: Vec<TriplePattern> = patterns.iter().map(|p| self.canonicalize_pattern(p)).collect();
        let Some(first) = (0..patterns.len()).min_by_key(|&i| self.count_matches(&patterns[i].substitute(seed))) else {
            return vec![seed.clone()];
        };
        let order = std::iter::once(first).chain((0..patterns.len()).filter(|&i| i != first));

        let mut rows = vec![seed.clone()];
        for index in order {
            let pattern = &patterns[index];
            let mut next = Vec::new();
            for bindings in &rows {
                let bound = pattern.substitute(bindings);
                for triple in self.candidates(&bound) {
                    if let Some(extended) = pattern.unify(triple, bindings) {
                        next.push(extended);
                    }
                }
            }
            rows = next;
            if rows.is_empty() {
                break;
            }
        }
        rows
    }

    /// Removes every triple whose provenance matches `filter`.
    pub fn retract(&mut self, filter: &ProvenanceFilter) -> usize {
        let doomed: Vec<Triple> =
            self.facts.iter().filter(|(_, p)| filter.matches(p)).map(|(t, _)| t.clone()).collect();
        let touched_aliases = doomed.iter().any(is_alias_statement);
        for triple in &doomed {
            self.remove(triple);
        }
        if touched_aliases {
            self.rebuild_aliases();
        }
        doomed.len()
    }

    fn rebuild_aliases(&mut self) {
        let mut aliases = AliasMap::new();
        for triple in self.facts.keys().filter(|t| is_alias_statement(t)) {
            if triple.subject().is_iri() && triple.object().is_iri() {
                aliases.union(triple.subject(), triple.object());
            }
        }
        self.aliases = aliases;
    }

    /// Declares `a` and `b` equivalent and rewrites stored triples to the
    /// new canonical representatives.
    pub fn add_alias(&mut self, a: &Term, b: &Term) -> bool {
        if !self.aliases.union(a, b) {
            return false;
        }
        self.recanonicalize();
        true
    }

    fn recanonicalize(&mut self) {
        let stale: Vec<(Triple, Triple)> = self
            .facts
            .keys()
            .filter_map(|t| {
                let canonical = self.canonicalize(t);
                (canonical != *t).then(|| (t.clone(), canonical))
            })
            .collect();
        for (old, canonical) in stale {
            if let Some(provenance) = self.remove(&old) {
                self.insert_raw(canonical, provenance);
            }
        }
    }

    /// Loads a knowledge pack. Nothing is inserted unless the whole document
    /// parses. Returns the number of newly inserted triples.
    pub fn load_pack(&mut self, document: &str, pack_id: &str) -> Result<usize, StoreError> {
        if pack_id.is_empty() {
            return Err(StoreError::EmptyPackId);
        }
        let triples = parse_triples(document)?;
        let mut aliases_changed = false;
        for triple in triples.iter().filter(|t| is_alias_statement(t)) {
            if triple.subject().is_iri() && triple.object().is_iri() {
                aliases_changed |= self.aliases.union(triple.subject(), triple.object());
            }
        }
        if aliases_changed {
            self.recanonicalize();
        }
        let provenance = Provenance::Loaded(pack_id.to_string());
        let mut loaded = 0;
        for triple in triples {
            if self.insert(triple, provenance.clone()) {
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Checks that the three indexes agree exactly with the fact set.
    pub fn check_indexes(&self) -> bool {
        let count = |index: &Index| index.values().map(BTreeSet::len).sum::<usize>();
        if [&self.by_subject, &self.by_predicate, &self.by_object].iter().any(|index| count(index) != self.facts.len())
        {
            return false;
        }
        self.facts.keys().all(|t| {
            self.by_subject.get(t.subject()).is_some_and(|s| s.contains(t))
                && self.by_predicate.get(t.predicate()).is_some_and(|s| s.contains(t))
                && self.by_object.get(t.object()).is_some_and(|s| s.contains(t))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_iri;

    fn iri(s: &str) -> Term {
        make_iri(s).unwrap()
    }

    fn t(s: &str, p: &str, o: &str) -> Triple {
        Triple::new(iri(s), iri(p), iri(o)).unwrap()
    }

    fn asserted() -> Provenance {
        Provenance::Asserted("urn:dev:x".into())
    }

    #[test]
    fn insert_set_semantics() {
        let mut store = Store::new();
        assert!(store.insert(t("urn:a", "urn:p", "urn:b"), asserted()));
        assert_eq!(store.len(), 1);
        assert!(!store.insert(t("urn:a", "urn:p", "urn:b"), Provenance::Inferred("r".into())));
        assert_eq!(store.len(), 1);
        assert_eq!(store.provenance(&t("urn:a", "urn:p", "urn:b")), Some(&asserted()));
    }

    #[test]
    fn match_on_empty_and_concrete() {
        let mut store = Store::new();
        let any = TriplePattern::new(PatternTerm::var("s"), PatternTerm::var("p"), PatternTerm::var("o")).unwrap();
        assert!(store.match_pattern(&any).is_empty());
        let triple = t("urn:a", "urn:p", "urn:b");
        store.insert(triple.clone(), asserted());
        store.insert(t("urn:a", "urn:p", "urn:c"), asserted());
        let exact = TriplePattern::new(iri("urn:a").into(), iri("urn:p").into(), iri("urn:b").into()).unwrap();
        assert_eq!(store.match_pattern(&exact), vec![(triple, Bindings::new())]);
        assert_eq!(store.match_pattern(&any).len(), 2);
    }

    #[test]
    fn retract_by_rule() {
        let mut store = Store::new();
        assert_eq!(store.retract(&ProvenanceFilter::AnyInferred), 0);
        for o in ["urn:1", "urn:2", "urn:3"] {
            store.insert(t("urn:a", "urn:p", o), asserted());
        }
        for o in ["urn:4", "urn:5"] {
            store.insert(t("urn:a", "urn:p", o), Provenance::Inferred("r1".into()));
        }
        assert_eq!(store.retract(&ProvenanceFilter::Inferred("r1".into())), 2);
        assert_eq!(store.len(), 3);
        assert!(store.check_indexes());
    }

    #[test]
    fn load_pack_all_or_nothing() {
        let mut store = Store::new();
        assert_eq!(store.load_pack("", "empty").unwrap(), 0);
        let doc = "<urn:a> <urn:p> <urn:b> .\n<urn:a> <urn:p> broken\n";
        assert!(matches!(store.load_pack(doc, "bad"), Err(StoreError::Parse(e)) if e.line == 2));
        assert!(store.is_empty());
        assert!(matches!(store.load_pack("", ""), Err(StoreError::EmptyPackId)));
    }

    #[test]
    fn alias_canonicalization_on_load_and_insert() {
        let mut store = Store::new();
        store.insert(t("urn:z", "urn:p", "urn:o"), asserted());
        let doc = format!(
            "<urn:z> <{}> <urn:b> .\n<urn:b> <{}> <urn:a> .\n",
            vocab::M3_EQUIVALENT_TO,
            vocab::M3_EQUIVALENT_TO
        );
        assert_eq!(store.load_pack(&doc, "links").unwrap(), 2);
        assert_eq!(store.resolve_alias(&iri("urn:z")), iri("urn:a"));
        assert_eq!(store.resolve_alias(&iri("urn:b")), iri("urn:a"));
        // pre-existing triple was rewritten
        assert!(store.contains(&t("urn:a", "urn:p", "urn:o")));
        assert!(!store.contains(&t("urn:z", "urn:p", "urn:o")));
        // queries with an alias constant find the canonical triple
        let pattern = TriplePattern::new(iri("urn:b").into(), iri("urn:p").into(), PatternTerm::var("o")).unwrap();
        assert_eq!(store.match_pattern(&pattern).len(), 1);
        // new inserts are canonicalized on the way in
        assert!(!store.insert(t("urn:b", "urn:p", "urn:o"), asserted()));
        assert!(store.check_indexes());

        store.retract(&ProvenanceFilter::Loaded("links".into()));
        assert_eq!(store.resolve_alias(&iri("urn:z")), iri("urn:z"));
    }

    #[test]
    fn solve_joins_on_shared_variables() {
        let mut store = Store::new();
        store.insert(t("urn:a", "urn:p", "urn:b"), asserted());
        store.insert(t("urn:b", "urn:q", "urn:c"), asserted());
        store.insert(t("urn:x", "urn:p", "urn:y"), asserted());
        let patterns = vec![
            TriplePattern::new(PatternTerm::var("s"), iri("urn:p").into(), PatternTerm::var("m")).unwrap(),
            TriplePattern::new(PatternTerm::var("m"), iri("urn:q").into(), PatternTerm::var("e")).unwrap(),
        ];
        let rows = store.solve(&patterns, &Bindings::new());
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0]["e"], iri("urn:c"));
        assert_eq!(store.solve(&[], &Bindings::new()), vec![Bindings::new()]);
    }
}
