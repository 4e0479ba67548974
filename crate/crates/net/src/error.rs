//! Machine-readable error bodies shared by the HTTP and CoAP front ends.

use knotgate_core::annotation::AnnotationError;
use knotgate_core::gateway::GatewayError;
use knotgate_core::query::QueryError;
use knotgate_core::rules::RuleError;
use knotgate_core::services::ServiceError;
use knotgate_core::store::StoreError;
use knotgate_core::syntax::Position;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    BadRequest,
    NotFound,
    Conflict,
    Unprocessable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorPosition {
    pub line: usize,
    pub column: usize,
}

impl From<Position> for ErrorPosition {
    fn from(p: Position) -> Self {
        ErrorPosition { line: p.line, column: p.column }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<ErrorPosition>,
}

impl ErrorBody {
    pub fn new(error: &str, detail: impl ToString) -> Self {
        ErrorBody { error: error.to_string(), detail: detail.to_string(), position: None }
    }

    pub fn at(mut self, position: Option<Position>) -> Self {
        self.position = position.map(ErrorPosition::from);
        self
    }
}

pub fn annotation_error(e: &AnnotationError) -> (ErrorKind, ErrorBody) {
    let (kind, name) = match e {
        AnnotationError::UnregisteredDevice(_) => (ErrorKind::NotFound, "UnregisteredDevice"),
        AnnotationError::UnknownUnit(_) => (ErrorKind::Unprocessable, "UnknownUnit"),
        AnnotationError::UnsupportedConversion { .. } => (ErrorKind::Unprocessable, "UnsupportedConversion"),
        AnnotationError::InvalidReading(_) => (ErrorKind::BadRequest, "InvalidReading"),
        AnnotationError::InvalidRegistration(_) => (ErrorKind::BadRequest, "InvalidRegistration"),
        AnnotationError::RegistryFile { .. } => (ErrorKind::BadRequest, "RegistryFile"),
        AnnotationError::Model(_) => (ErrorKind::BadRequest, "ModelError"),
    };
    (kind, ErrorBody::new(name, e))
}

pub fn rule_error(e: &RuleError) -> (ErrorKind, ErrorBody) {
    let name = match e {
        RuleError::Syntax(_) => "SyntaxError",
        RuleError::Safety { .. } => "UnsafeRule",
    };
    (ErrorKind::BadRequest, ErrorBody::new(name, e).at(e.position()))
}

pub fn query_error(e: &QueryError) -> (ErrorKind, ErrorBody) {
    let name = match e {
        QueryError::Syntax(_) => "SyntaxError",
        QueryError::UnsafeQuery(_) => "UnsafeQuery",
    };
    (ErrorKind::BadRequest, ErrorBody::new(name, e).at(e.position()))
}

pub fn store_error(e: &StoreError) -> (ErrorKind, ErrorBody) {
    let position = match e {
        StoreError::Parse(p) => Some(Position { line: p.line, column: 1 }),
        _ => None,
    };
    (ErrorKind::BadRequest, ErrorBody::new("ParseError", e).at(position))
}

pub fn service_error(e: &ServiceError) -> (ErrorKind, ErrorBody) {
    let position = match e {
        ServiceError::Trigger(s) => Some(s.position),
        ServiceError::Lookup(q) => q.position(),
        _ => None,
    };
    let kind = match e {
        ServiceError::DuplicateId(_) => ErrorKind::Conflict,
        _ => ErrorKind::BadRequest,
    };
    (kind, ErrorBody::new("ServiceError", e).at(position))
}

pub fn gateway_error(e: &GatewayError) -> (ErrorKind, ErrorBody) {
    match e {
        GatewayError::Decode(d) => (ErrorKind::BadRequest, ErrorBody::new("DecodeError", d)),
        GatewayError::Topic(t) => (ErrorKind::BadRequest, ErrorBody::new("BadTopic", t)),
        GatewayError::Annotation(a) => annotation_error(a),
        GatewayError::Rule(r) => rule_error(r),
        GatewayError::Query(q) => query_error(q),
        GatewayError::Store(s) => store_error(s),
        GatewayError::Service(s) => service_error(s),
        GatewayError::RuleIdConflict { .. } => (ErrorKind::Conflict, ErrorBody::new("RuleIdConflict", e)),
        GatewayError::UnknownRulePack(_) => (ErrorKind::NotFound, ErrorBody::new("UnknownRulePack", e)),
    }
}
