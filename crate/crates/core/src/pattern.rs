//! Triple patterns shared by rules, queries, subscriptions and compositions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{is_valid_label, ModelError, Term, Triple};

/// Variable name (without the leading `?`) to bound term.
pub type Bindings = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternTerm {
    Const(Term),
    Var(String),
}

impl PatternTerm {
    pub fn var(name: &str) -> PatternTerm {
        PatternTerm::Var(name.trim_start_matches('?').to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            PatternTerm::Var(name) => Some(name),
            PatternTerm::Const(_) => None,
        }
    }

    pub fn as_const(&self) -> Option<&Term> {
        match self {
            PatternTerm::Const(term) => Some(term),
            PatternTerm::Var(_) => None,
        }
    }

    fn resolve<'a>(&'a self, bindings: &'a Bindings) -> Option<&'a Term> {
        match self {
            PatternTerm::Const(term) => Some(term),
            PatternTerm::Var(name) => bindings.get(name),
        }
    }
}

impl From<Term> for PatternTerm {
    fn from(term: Term) -> Self {
        PatternTerm::Const(term)
    }
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Const(term) => write!(f, "{term}"),
            PatternTerm::Var(name) => write!(f, "?{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(subject: PatternTerm, predicate: PatternTerm, object: PatternTerm) -> Result<TriplePattern, ModelError> {
        for position in [&subject, &predicate, &object] {
            if let PatternTerm::Var(name) = position {
                if !is_valid_label(name) {
                    return Err(ModelError::InvalidVariable(name.clone()));
                }
            }
        }
        if let PatternTerm::Const(term) = &predicate {
            if !term.is_iri() {
                return Err(ModelError::InvalidTriple("predicate must be an IRI"));
            }
        }
        Ok(TriplePattern { subject, predicate, object })
    }

    pub fn positions(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.positions().into_iter().filter_map(PatternTerm::as_var).collect()
    }

    pub fn concrete_positions(&self) -> usize {
        self.positions().iter().filter(|p| p.as_const().is_some()).count()
    }

    /// Extends `bindings` so that the pattern equals `triple`, or `None` when
    /// a constant or an already bound variable disagrees.
    pub fn unify(&self, triple: &Triple, bindings: &Bindings) -> Option<Bindings> {
        let mut out = bindings.clone();
        for (position, term) in self.positions().into_iter().zip(triple.terms()) {
            match position {
                PatternTerm::Const(c) => {
                    if c != term {
                        return None;
                    }
                }
                PatternTerm::Var(name) => match out.get(name) {
                    Some(bound) if bound != term => return None,
                    Some(_) => {}
                    None => {
                        out.insert(name.clone(), term.clone());
                    }
                },
            }
        }
        Some(out)
    }

    /// Replaces bound variables by their terms.
    pub fn substitute(&self, bindings: &Bindings) -> TriplePattern {
        let sub = |p: &PatternTerm| match p {
            PatternTerm::Var(name) => match bindings.get(name) {
                Some(term) => PatternTerm::Const(term.clone()),
                None => p.clone(),
            },
            PatternTerm::Const(_) => p.clone(),
        };
        TriplePattern { subject: sub(&self.subject), predicate: sub(&self.predicate), object: sub(&self.object) }
    }

    /// Ground triple for this template, if every variable is bound and the
    /// result is a well-formed triple.
    pub fn instantiate(&self, bindings: &Bindings) -> Option<Triple> {
        let s = self.subject.resolve(bindings)?;
        let p = self.predicate.resolve(bindings)?;
        let o = self.object.resolve(bindings)?;
        Triple::new(s.clone(), p.clone(), o.clone()).ok()
    }

    pub fn matches(&self, triple: &Triple) -> bool {
        self.unify(triple, &Bindings::new()).is_some()
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuardOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl GuardOp {
    pub fn symbol(self) -> &'static str {
        match self {
            GuardOp::Lt => "<",
            GuardOp::Le => "<=",
            GuardOp::Gt => ">",
            GuardOp::Ge => ">=",
            GuardOp::Eq => "=",
            GuardOp::Ne => "!=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            GuardOp::Lt => lhs < rhs,
            GuardOp::Le => lhs <= rhs,
            GuardOp::Gt => lhs > rhs,
            GuardOp::Ge => lhs >= rhs,
            GuardOp::Eq => lhs == rhs,
            GuardOp::Ne => lhs != rhs,
        }
    }
}

/// Numeric comparison of a bound variable against a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub variable: String,
    pub op: GuardOp,
    pub constant: f64,
}

/// Why a guard could not be evaluated for a binding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardTypeError {
    Unbound(String),
    NotNumeric(String),
}

impl Guard {
    /// Compares the numeric value bound to the guard variable. Lexical forms
    /// do not matter: "38.0" and "38" compare equal.
    pub fn check(&self, bindings: &Bindings) -> Result<bool, GuardTypeError> {
        let term = bindings.get(&self.variable).ok_or_else(|| GuardTypeError::Unbound(self.variable.clone()))?;
        let value = term.numeric_value().ok_or_else(|| GuardTypeError::NotNumeric(self.variable.clone()))?;
        Ok(self.op.holds(value, self.constant))
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{} {} {:?}", self.variable, self.op.symbol(), self.constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_iri;

    fn iri(s: &str) -> Term {
        make_iri(s).unwrap()
    }

    #[test]
    fn repeated_variable_must_agree() {
        let p = TriplePattern::new(PatternTerm::var("x"), iri("urn:p").into(), PatternTerm::var("x")).unwrap();
        let same = Triple::new(iri("urn:a"), iri("urn:p"), iri("urn:a")).unwrap();
        let diff = Triple::new(iri("urn:a"), iri("urn:p"), iri("urn:b")).unwrap();
        assert!(p.matches(&same));
        assert!(!p.matches(&diff));
    }

    #[test]
    fn guard_compares_values_not_lexicals() {
        let guard = Guard { variable: "v".into(), op: GuardOp::Eq, constant: 38.0 };
        let mut b = Bindings::new();
        b.insert("v".into(), Term::literal("38.0", "xsd:double").unwrap());
        assert_eq!(guard.check(&b), Ok(true));
        b.insert("v".into(), Term::long(38));
        assert_eq!(guard.check(&b), Ok(true));
        b.insert("v".into(), Term::string("38"));
        assert_eq!(guard.check(&b), Err(GuardTypeError::NotNumeric("v".into())));
        assert_eq!(guard.check(&Bindings::new()), Err(GuardTypeError::Unbound("v".into())));
        let strict = Guard { variable: "v".into(), op: GuardOp::Gt, constant: 38.0 };
        b.insert("v".into(), Term::double(38.0).unwrap());
        assert_eq!(strict.check(&b), Ok(false));
    }

    #[test]
    fn literal_predicate_rejected() {
        assert!(TriplePattern::new(PatternTerm::var("x"), Term::string("p").into(), PatternTerm::var("y")).is_err());
        assert!(TriplePattern::new(PatternTerm::var("bad name"), iri("urn:p").into(), PatternTerm::var("y")).is_err());
    }

    #[test]
    fn instantiate_rejects_literal_subject() {
        let p = TriplePattern::new(PatternTerm::var("v"), iri("urn:p").into(), iri("urn:o").into()).unwrap();
        let mut b = Bindings::new();
        assert_eq!(p.instantiate(&b), None);
        b.insert("v".into(), Term::string("x"));
        assert_eq!(p.instantiate(&b), None);
        b.insert("v".into(), iri("urn:s"));
        assert!(p.instantiate(&b).is_some());
    }
}
