//! SELECT queries over basic graph patterns with numeric filters.

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::model::Term;
use crate::pattern::{Bindings, Guard, TriplePattern};
use crate::store::Store;
use crate::syntax::{Position, SyntaxError, Token, TokenStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Guard>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("variable ?{0} is not bound by any pattern")]
    UnsafeQuery(String),
}

impl QueryError {
    pub fn position(&self) -> Option<Position> {
        match self {
            QueryError::Syntax(e) => Some(e.position),
            QueryError::UnsafeQuery(_) => None,
        }
    }
}

impl Query {
    pub fn pattern_variables(&self) -> BTreeSet<&str> {
        self.patterns.iter().flat_map(TriplePattern::variables).collect()
    }

    /// First selected or filtered variable that no pattern binds, also
    /// counting variables supplied externally in `preset`.
    pub fn unsafe_variable(&self, preset: &BTreeSet<&str>) -> Option<String> {
        let bound = self.pattern_variables();
        self.select
            .iter()
            .map(String::as_str)
            .chain(self.filters.iter().map(|g| g.variable.as_str()))
            .find(|v| !bound.contains(v) && !preset.contains(v))
            .map(str::to_string)
    }
}

/// Parses `SELECT ?v+ WHERE { pattern (. pattern)* } (FILTER guard)* (LIMIT n)?`.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let query = parse_query_unchecked(text)?;
    if let Some(variable) = query.unsafe_variable(&BTreeSet::new()) {
        return Err(QueryError::UnsafeQuery(variable));
    }
    Ok(query)
}

/// Parses without the safety check; callers that bind variables from
/// elsewhere (composition lookups) check safety themselves.
pub fn parse_query_unchecked(text: &str) -> Result<Query, QueryError> {
    let mut tokens = TokenStream::new(text)?;
    tokens.expect_keyword("SELECT")?;
    let mut select = Vec::new();
    while let Some(Token::Var(name)) = tokens.peek() {
        if !select.contains(name) {
            select.push(name.clone());
        }
        tokens.advance();
    }
    if select.is_empty() {
        return Err(tokens.error("expected at least one selected variable").into());
    }
    tokens.expect_keyword("WHERE")?;
    tokens.expect(&Token::LBrace)?;
    let mut patterns = vec![tokens.pattern()?];
    while tokens.eat(&Token::Dot) {
        if tokens.peek() == Some(&Token::RBrace) {
            break;
        }
        patterns.push(tokens.pattern()?);
    }
    tokens.expect(&Token::RBrace)?;
    let mut filters = Vec::new();
    while tokens.eat_keyword("FILTER") {
        filters.push(tokens.guard()?);
    }
    let mut limit = None;
    if tokens.eat_keyword("LIMIT") {
        let position = tokens.position();
        let value = tokens.number()?;
        if value < 1.0 || value.fract() != 0.0 {
            return Err(SyntaxError::new(position, "LIMIT must be a positive integer").into());
        }
        limit = Some(value as usize);
    }
    if !tokens.at_end() {
        return Err(tokens.error("unexpected trailing input").into());
    }
    Ok(Query { select, patterns, filters, limit })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Term>>,
}

impl ResultTable {
    /// Rows rendered with the triple-file term syntax.
    pub fn string_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.iter().map(Term::to_string).collect()).collect()
    }

    /// Values of one column, in row order.
    pub fn column(&self, name: &str) -> Vec<Term> {
        match self.columns.iter().position(|c| c == name) {
            Some(i) => self.rows.iter().map(|r| r[i].clone()).collect(),
            None => Vec::new(),
        }
    }
}

pub fn evaluate_query(query: &Query, store: &Store) -> ResultTable {
    evaluate_query_with(query, store, &Bindings::new())
}

/// Evaluates with some variables already bound (e.g. from a trigger match).
pub fn evaluate_query_with(query: &Query, store: &Store, preset: &Bindings) -> ResultTable {
    let mut keyed: Vec<(Vec<String>, Vec<Term>)> = Vec::new();
    let mut seen = HashSet::new();
    'rows: for bindings in store.solve(&query.patterns, preset) {
        for filter in &query.filters {
            if filter.check(&bindings) != Ok(true) {
                continue 'rows;
            }
        }
        let Some(row) = query.select.iter().map(|v| bindings.get(v).cloned()).collect::<Option<Vec<Term>>>() else {
            continue;
        };
        let key: Vec<String> = row.iter().map(Term::to_string).collect();
        if seen.insert(key.clone()) {
            keyed.push((key, row));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(limit) = query.limit {
        keyed.truncate(limit);
    }
    ResultTable { columns: query.select.clone(), rows: keyed.into_iter().map(|(_, r)| r).collect() }
}
