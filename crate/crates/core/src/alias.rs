//! Equivalence classes of IRIs declared with `m3:equivalentTo`.

use std::collections::HashMap;

use crate::model::Term;

/// Union-find over terms. Every class is rooted at its lexicographically
/// smallest member, so the canonical representative never depends on the
/// order in which equivalences were declared.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    parent: HashMap<Term, Term>,
}

impl AliasMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn resolve(&self, term: &Term) -> Term {
        let mut current = term;
        // Roots are strictly smaller than their children, so this walk terminates.
        while let Some(next) = self.parent.get(current) {
            current = next;
        }
        current.clone()
    }

    /// Merges the classes of `a` and `b`; returns whether anything changed.
    pub fn union(&mut self, a: &Term, b: &Term) -> bool {
        let root_a = self.resolve(a);
        let root_b = self.resolve(b);
        if root_a == root_b {
            return false;
        }
        let (small, large) = if sort_key(&root_a) <= sort_key(&root_b) { (root_a, root_b) } else { (root_b, root_a) };
        self.parent.insert(large, small.clone());
        self.compress(&small);
        true
    }

    fn compress(&mut self, root: &Term) {
        let members: Vec<Term> = self.parent.keys().filter(|t| self.resolve(t) == *root).cloned().collect();
        for member in members {
            self.parent.insert(member, root.clone());
        }
    }
}

fn sort_key(term: &Term) -> String {
    match term {
        Term::Iri(iri) => iri.clone(),
        other => other.to_string(),
    }
}
