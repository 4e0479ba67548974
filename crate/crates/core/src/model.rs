//! Terms, triples, the fixed prefix table and the line-oriented triple format
//! shared by every file the gateway reads or writes.

use std::fmt;

use thiserror::Error;

/// Namespace IRIs of the closed prefix table.
pub mod ns {
    pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
    pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
    pub const SSN: &str = "urn:knotgate:ssn#";
    pub const M3: &str = "urn:knotgate:m3#";
    pub const UNIT: &str = "urn:knotgate:unit#";
}

/// Frequently used IRIs, already expanded.
pub mod vocab {
    pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    pub const XSD_DOUBLE: &str = "http://www.w3.org/2001/XMLSchema#double";
    pub const XSD_LONG: &str = "http://www.w3.org/2001/XMLSchema#long";
    pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";
    pub const SSN_OBSERVATION: &str = "urn:knotgate:ssn#Observation";
    pub const SSN_OBSERVED_PROPERTY: &str = "urn:knotgate:ssn#observedProperty";
    pub const SSN_OBSERVATION_RESULT: &str = "urn:knotgate:ssn#observationResult";
    pub const SSN_OBSERVED_BY: &str = "urn:knotgate:ssn#observedBy";
    pub const SSN_RESULT_TIME: &str = "urn:knotgate:ssn#resultTime";
    pub const M3_HAS_UNIT: &str = "urn:knotgate:m3#hasUnit";
    pub const M3_EQUIVALENT_TO: &str = "urn:knotgate:m3#equivalentTo";
    pub const UNIT_DEGREE_CELSIUS: &str = "urn:knotgate:unit#DegreeCelsius";
    pub const UNIT_DEGREE_FAHRENHEIT: &str = "urn:knotgate:unit#DegreeFahrenheit";
    pub const UNIT_MMHG: &str = "urn:knotgate:unit#MmHg";
}

/// The closed prefix table: label to namespace.
pub const PREFIXES: [(&str, &str); 5] =
    [("rdf", ns::RDF), ("ssn", ns::SSN), ("m3", ns::M3), ("unit", ns::UNIT), ("xsd", ns::XSD)];

pub fn namespace_for(label: &str) -> Option<&'static str> {
    PREFIXES.iter().find(|(l, _)| *l == label).map(|(_, namespace)| *namespace)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed IRI {0:?}")]
    MalformedIri(String),
    #[error("unknown prefix {0:?}")]
    UnknownPrefix(String),
    #[error("numeric value is not finite")]
    NonFiniteValue,
    #[error("{0} is not an integral value for xsd:long")]
    NotIntegral(f64),
    #[error("unsupported numeric datatype {0:?}")]
    UnsupportedDatatype(String),
    #[error("lexical form {lexical:?} is not valid for datatype <{datatype}>")]
    MalformedLiteral { lexical: String, datatype: String },
    #[error("invalid blank node label {0:?}")]
    InvalidBlank(String),
    #[error("invalid variable name {0:?}")]
    InvalidVariable(String),
    #[error("invalid triple: {0}")]
    InvalidTriple(&'static str),
}

/// Expands `prefix:name` when `prefix` is in the table; any other text is
/// returned unchanged, so expanding an absolute IRI is the identity.
pub fn expand(text: &str) -> String {
    if let Some((label, local)) = text.split_once(':') {
        if let Some(namespace) = namespace_for(label) {
            return format!("{namespace}{local}");
        }
    }
    text.to_string()
}

/// Like [`expand`] but requires the prefix to be one of the five known labels.
/// Used by the rule and query grammars where absolute IRIs go in angle brackets.
pub fn expand_prefixed(text: &str) -> Result<String, ModelError> {
    let (label, local) = text.split_once(':').ok_or_else(|| ModelError::MalformedIri(text.to_string()))?;
    let namespace = namespace_for(label).ok_or_else(|| ModelError::UnknownPrefix(label.to_string()))?;
    let iri = format!("{namespace}{local}");
    validate_iri(&iri)?;
    Ok(iri)
}

/// Shortens an IRI with the prefix table where possible (`m3:Fever`).
pub fn compact_iri(iri: &str) -> String {
    for (label, namespace) in PREFIXES {
        if let Some(local) = iri.strip_prefix(namespace) {
            if !local.is_empty() {
                return format!("{label}:{local}");
            }
        }
    }
    iri.to_string()
}

pub fn validate_iri(text: &str) -> Result<(), ModelError> {
    let bad = || ModelError::MalformedIri(text.to_string());
    let (scheme, _) = text.split_once(':').ok_or_else(bad)?;
    let mut chars = scheme.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return Err(bad()),
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.')) {
        return Err(bad());
    }
    if text.chars().any(|c| c.is_whitespace() || c.is_control() || c == '<' || c == '>') {
        return Err(bad());
    }
    Ok(())
}

pub fn is_valid_label(label: &str) -> bool {
    !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn is_numeric_datatype(datatype: &str) -> bool {
    datatype == vocab::XSD_DOUBLE || datatype == vocab::XSD_LONG
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(String),
    Literal { lexical: String, datatype: String },
    Blank(String),
}

/// Builds an IRI term, expanding a known prefix first.
pub fn make_iri(text: &str) -> Result<Term, ModelError> {
    let expanded = expand(text);
    validate_iri(&expanded)?;
    Ok(Term::Iri(expanded))
}

/// Builds a numeric literal whose lexical form is the shortest decimal
/// rendering that parses back to `value`.
pub fn make_numeric(value: f64, datatype: &str) -> Result<Term, ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFiniteValue);
    }
    let datatype = expand(datatype);
    let lexical = match datatype.as_str() {
        vocab::XSD_DOUBLE => format!("{value}"),
        vocab::XSD_LONG => {
            if value.fract() != 0.0 || value < i64::MIN as f64 || value >= i64::MAX as f64 {
                return Err(ModelError::NotIntegral(value));
            }
            format!("{}", value as i64)
        }
        _ => return Err(ModelError::UnsupportedDatatype(datatype)),
    };
    Ok(Term::Literal { lexical, datatype })
}

impl Term {
    pub fn iri(text: &str) -> Result<Term, ModelError> {
        make_iri(text)
    }

    pub fn double(value: f64) -> Result<Term, ModelError> {
        make_numeric(value, vocab::XSD_DOUBLE)
    }

    pub fn long(value: i64) -> Term {
        Term::Literal { lexical: value.to_string(), datatype: vocab::XSD_LONG.to_string() }
    }

    pub fn string(lexical: impl Into<String>) -> Term {
        Term::Literal { lexical: lexical.into(), datatype: vocab::XSD_STRING.to_string() }
    }

    /// Literal with an explicit datatype; numeric datatypes must carry a
    /// finite, parseable lexical form.
    pub fn literal(lexical: impl Into<String>, datatype: &str) -> Result<Term, ModelError> {
        let lexical = lexical.into();
        let datatype = expand(datatype);
        validate_iri(&datatype)?;
        let term = Term::Literal { lexical, datatype };
        if let Term::Literal { lexical, datatype } = &term {
            if is_numeric_datatype(datatype) && term.numeric_value().is_none() {
                return Err(ModelError::MalformedLiteral { lexical: lexical.clone(), datatype: datatype.clone() });
            }
        }
        Ok(term)
    }

    pub fn blank(label: &str) -> Result<Term, ModelError> {
        if is_valid_label(label) {
            Ok(Term::Blank(label.to_string()))
        } else {
            Err(ModelError::InvalidBlank(label.to_string()))
        }
    }

    pub fn is_iri(&self) -> bool {
        matches!(self, Term::Iri(_))
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal { .. })
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(iri) => Some(iri),
            _ => None,
        }
    }

    /// Numeric value of a double or long literal; `None` for anything else.
    pub fn numeric_value(&self) -> Option<f64> {
        match self {
            Term::Literal { lexical, datatype } if datatype == vocab::XSD_DOUBLE => {
                lexical.parse::<f64>().ok().filter(|v| v.is_finite())
            }
            Term::Literal { lexical, datatype } if datatype == vocab::XSD_LONG => {
                lexical.parse::<i64>().ok().map(|v| v as f64)
            }
            _ => None,
        }
    }

    /// Human-facing rendering: prefixed IRIs, bare literal lexicals.
    pub fn compact(&self) -> String {
        match self {
            Term::Iri(iri) => compact_iri(iri),
            Term::Literal { lexical, .. } => lexical.clone(),
            Term::Blank(label) => format!("_:{label}"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(iri) => write!(f, "<{iri}>"),
            Term::Blank(label) => write!(f, "_:{label}"),
            Term::Literal { lexical, datatype } => {
                f.write_str("\"")?;
                for c in lexical.chars() {
                    match c {
                        '\\' => f.write_str("\\\\")?,
                        '"' => f.write_str("\\\"")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                write!(f, "\"^^<{datatype}>")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    subject: Term,
    predicate: Term,
    object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Triple, ModelError> {
        if subject.is_literal() {
            return Err(ModelError::InvalidTriple("subject must not be a literal"));
        }
        if !predicate.is_iri() {
            return Err(ModelError::InvalidTriple("predicate must be an IRI"));
        }
        Ok(Triple { subject, predicate, object })
    }

    pub fn subject(&self) -> &Term {
        &self.subject
    }

    pub fn predicate(&self) -> &Term {
        &self.predicate
    }

    pub fn object(&self) -> &Term {
        &self.object
    }

    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn into_parts(self) -> (Term, Term, Term) {
        (self.subject, self.predicate, self.object)
    }

    /// Rebuilds the triple with `f` applied to each position.
    pub fn map_terms(&self, mut f: impl FnMut(&Term) -> Term) -> Result<Triple, ModelError> {
        Triple::new(f(&self.subject), f(&self.predicate), f(&self.object))
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} .", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

pub fn serialize_triples(triples: &[Triple]) -> String {
    let mut out = String::new();
    for triple in triples {
        out.push_str(&triple.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_triples(document: &str) -> Result<Vec<Triple>, ParseError> {
    let mut triples = Vec::new();
    for (index, raw) in document.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let triple = parse_line(line).map_err(|reason| ParseError { line: index + 1, reason })?;
        triples.push(triple);
    }
    Ok(triples)
}

/// Parses a single `<s> <p> o .` statement.
pub fn parse_triple_line(line: &str) -> Result<Triple, String> {
    parse_line(line.trim())
}

fn parse_line(line: &str) -> Result<Triple, String> {
    let mut cursor = LineCursor { rest: line };
    let subject = cursor.term()?;
    let predicate = cursor.term()?;
    let object = cursor.term()?;
    cursor.skip_ws();
    cursor.expect('.')?;
    cursor.skip_ws();
    if !cursor.rest.is_empty() {
        return Err(format!("unexpected trailing text {:?}", cursor.rest));
    }
    Triple::new(subject, predicate, object).map_err(|e| e.to_string())
}

struct LineCursor<'a> {
    rest: &'a str,
}

impl<'a> LineCursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        match self.rest.strip_prefix(c) {
            Some(rest) => {
                self.rest = rest;
                Ok(())
            }
            None => Err(format!("expected '{c}'")),
        }
    }

    fn iri_ref(&mut self) -> Result<String, String> {
        self.expect('<')?;
        let end = self.rest.find('>').ok_or("unterminated IRI")?;
        let iri = &self.rest[..end];
        validate_iri(iri).map_err(|e| e.to_string())?;
        self.rest = &self.rest[end + 1..];
        Ok(iri.to_string())
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        match self.rest.chars().next() {
            Some('<') => self.iri_ref().map(Term::Iri),
            Some('_') => {
                let body = self.rest.strip_prefix("_:").ok_or("expected '_:'")?;
                let end = body.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(body.len());
                let label = &body[..end];
                self.rest = &body[end..];
                Term::blank(label).map_err(|e| e.to_string())
            }
            Some('"') => {
                let lexical = self.quoted()?;
                let rest = self.rest.strip_prefix("^^").ok_or("expected '^^' after literal")?;
                self.rest = rest;
                let datatype = self.iri_ref()?;
                Term::literal(lexical, &datatype).map_err(|e| e.to_string())
            }
            Some(c) => Err(format!("unexpected character '{c}'")),
            None => Err("unexpected end of line".to_string()),
        }
    }

    fn quoted(&mut self) -> Result<String, String> {
        self.expect('"')?;
        let mut out = String::new();
        let mut chars = self.rest.char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.rest = &self.rest[i + 1..];
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, '"')) => out.push('"'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, 't')) => out.push('\t'),
                    Some((_, other)) => return Err(format!("unknown escape '\\{other}'")),
                    None => break,
                },
                c => out.push(c),
            }
        }
        Err("unterminated literal".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_iri_examples() {
        assert_eq!(make_iri("urn:dev:thermo1"), Ok(Term::Iri("urn:dev:thermo1".into())));
        assert_eq!(make_iri("ssn:Observation"), Ok(Term::Iri(format!("{}Observation", ns::SSN))));
        assert!(matches!(make_iri("not an iri"), Err(ModelError::MalformedIri(_))));
        assert!(matches!(make_iri("noscheme"), Err(ModelError::MalformedIri(_))));
        assert!(matches!(make_iri("urn:a<b"), Err(ModelError::MalformedIri(_))));
        assert!(matches!(make_iri(":x"), Err(ModelError::MalformedIri(_))));
    }

    #[test]
    fn expansion_is_idempotent() {
        for text in ["rdf:type", "m3:Fever", "urn:dev:x", "http://example.org/a"] {
            let once = expand(text);
            assert_eq!(expand(&once), once);
        }
    }

    #[test]
    fn unknown_prefix_in_grammar_context() {
        assert_eq!(expand_prefixed("foo:bar"), Err(ModelError::UnknownPrefix("foo".into())));
        assert_eq!(expand_prefixed("m3:Fever").unwrap(), vocab::M3_HAS_UNIT.replace("hasUnit", "Fever"));
    }

    #[test]
    fn make_numeric_examples() {
        assert_eq!(
            make_numeric(38.0, "xsd:double"),
            Ok(Term::Literal { lexical: "38".into(), datatype: vocab::XSD_DOUBLE.into() })
        );
        assert_eq!(
            make_numeric(0.0, vocab::XSD_LONG),
            Ok(Term::Literal { lexical: "0".into(), datatype: vocab::XSD_LONG.into() })
        );
        assert_eq!(make_numeric(f64::NAN, "xsd:double"), Err(ModelError::NonFiniteValue));
        assert_eq!(make_numeric(f64::INFINITY, "xsd:long"), Err(ModelError::NonFiniteValue));
        assert_eq!(make_numeric(1.5, "xsd:long"), Err(ModelError::NotIntegral(1.5)));
        assert!(matches!(make_numeric(1.0, "xsd:string"), Err(ModelError::UnsupportedDatatype(_))));
        assert_eq!(make_numeric(0.1, "xsd:double").unwrap().numeric_value(), Some(0.1));
    }

    #[test]
    fn numeric_literal_invariant() {
        assert!(Term::literal("38.5", "xsd:double").is_ok());
        assert!(Term::literal("NaN", "xsd:double").is_err());
        assert!(Term::literal("1.5", "xsd:long").is_err());
        assert!(Term::literal("anything", "xsd:string").is_ok());
        assert_eq!(Term::literal("38.0", "xsd:double").unwrap().numeric_value(), Some(38.0));
    }

    #[test]
    fn triple_positions_are_checked() {
        let iri = make_iri("urn:a").unwrap();
        let lit = Term::string("x");
        assert!(Triple::new(lit.clone(), iri.clone(), iri.clone()).is_err());
        assert!(Triple::new(iri.clone(), Term::blank("b").unwrap(), iri.clone()).is_err());
        assert!(Triple::new(Term::blank("b").unwrap(), iri.clone(), lit).is_ok());
        assert!(Term::blank("").is_err());
        assert!(Term::blank("a-b").is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_triples(""), Ok(vec![]));
        let doc = format!("<urn:dev:t1> <{}type> <{}Sensor> .", ns::RDF, ns::SSN);
        let parsed = parse_triples(&doc).unwrap();
        assert_eq!(
            parsed,
            vec![Triple::new(
                make_iri("urn:dev:t1").unwrap(),
                make_iri("rdf:type").unwrap(),
                make_iri("ssn:Sensor").unwrap()
            )
            .unwrap()]
        );
    }

    #[test]
    fn parse_comments_duplicates_and_order() {
        let doc = "# header\n\n<urn:a> <urn:p> _:b1 .\n<urn:a> <urn:p> _:b1 .\n  # indented comment\n<urn:c> <urn:p> \"x \\\"y\\\"\"^^<http://www.w3.org/2001/XMLSchema#string> .\n";
        let parsed = parse_triples(doc).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0], parsed[1]);
        assert_eq!(parsed[2].object(), &Term::string("x \"y\""));
    }

    #[test]
    fn parse_errors_report_first_bad_line() {
        let doc = "<urn:a> <urn:p> <urn:b> .\n<urn:a> <urn:p> <urn:b>\n<bad\n";
        let err = parse_triples(doc).unwrap_err();
        assert_eq!(err.line, 2);

        let err = parse_triples("\"lit\"^^<urn:t> <urn:p> <urn:b> .").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(parse_triples("<urn:a> _:x <urn:b> .").is_err());
        assert!(parse_triples("<urn:a> <urn:p> \"1.5\"^^<http://www.w3.org/2001/XMLSchema#long> .").is_err());
        assert!(parse_triples("<urn:a> <urn:p> <urn:b> . extra").is_err());
        assert!(parse_triples("<urn:a> <urn:p> \"open").is_err());
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(serialize_triples(&[]), "");
        let t = Triple::new(
            make_iri("urn:obs:thermo1:1").unwrap(),
            make_iri("ssn:observationResult").unwrap(),
            make_numeric(39.0, "xsd:double").unwrap(),
        )
        .unwrap();
        let out = serialize_triples(std::slice::from_ref(&t));
        assert_eq!(
            out,
            "<urn:obs:thermo1:1> <urn:knotgate:ssn#observationResult> \"39\"^^<http://www.w3.org/2001/XMLSchema#double> .\n"
        );
        assert!(out.trim_end_matches('\n').ends_with(" ."));
        assert_eq!(out.lines().count(), 1);
    }

    #[test]
    fn compact_rendering() {
        assert_eq!(make_iri("m3:Fever").unwrap().compact(), "m3:Fever");
        assert_eq!(make_iri("urn:dev:x").unwrap().compact(), "urn:dev:x");
        assert_eq!(Term::double(39.5).unwrap().compact(), "39.5");
    }
}
