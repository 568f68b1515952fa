use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the service and the CLI to pick a status
/// code or exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Validation,
    Busy,
    InfeasibleScale,
    Cancelled,
    Internal,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::NotFound => "not_found",
            ErrorKind::Conflict => "conflict",
            ErrorKind::Validation => "validation",
            ErrorKind::Busy => "busy",
            ErrorKind::InfeasibleScale => "infeasible_scale",
            ErrorKind::Cancelled => "cancelled",
            ErrorKind::Internal => "internal",
        }
    }
}

/// Position of the first column where two headers disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMismatch {
    pub index: usize,
    pub expected: Option<String>,
    pub found: Option<String>,
}

impl fmt::Display for ColumnMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |c: &Option<String>| c.clone().unwrap_or_else(|| "<none>".to_owned());
        write!(
            f,
            "column {} differs: expected `{}`, found `{}`",
            self.index,
            show(&self.expected),
            show(&self.found)
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("feature `{feature}`: {detail}")]
    Encoding { feature: String, detail: String },

    #[error("entity `{entity}`: {source}")]
    Entity {
        entity: String,
        #[source]
        source: Box<Error>,
    },

    #[error("entity `{entity}` has no value for feature `{feature}`")]
    MissingValue { entity: String, feature: String },

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("dimension mismatch: expected {expected} values, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("schema mismatch: {0}")]
    Compatibility(ColumnMismatch),

    #[error("{what} `{name}` not found")]
    NotFound { what: &'static str, name: String },

    #[error("{what} `{name}` already exists")]
    Conflict { what: &'static str, name: String },

    #[error("project `{0}` is locked by another writer")]
    Busy(String),

    #[error(
        "exact search needs {candidates} candidate evaluations (budget {budget}); use the heuristic solver"
    )]
    InfeasibleScale { candidates: u128, budget: u128 },

    #[error("fit cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotFound { .. } => ErrorKind::NotFound,
            Error::Conflict { .. } => ErrorKind::Conflict,
            Error::Busy(_) => ErrorKind::Busy,
            Error::InfeasibleScale { .. } => ErrorKind::InfeasibleScale,
            Error::Cancelled => ErrorKind::Cancelled,
            Error::Entity { source, .. } => source.kind(),
            Error::Config(_)
            | Error::Validation(_)
            | Error::Encoding { .. }
            | Error::MissingValue { .. }
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Compatibility(_) => ErrorKind::Validation,
            Error::Io(_) | Error::Json(_) => ErrorKind::Internal,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn encoding(feature: &str, detail: impl Into<String>) -> Self {
        Error::Encoding {
            feature: feature.to_owned(),
            detail: detail.into(),
        }
    }

    pub(crate) fn not_found(what: &'static str, name: impl Into<String>) -> Self {
        Error::NotFound {
            what,
            name: name.into(),
        }
    }

    pub(crate) fn conflict(what: &'static str, name: impl Into<String>) -> Self {
        Error::Conflict {
            what,
            name: name.into(),
        }
    }
}

/// Wire form of an error: a stable code, a human-readable message and
/// optional structured detail. Internal errors are opaque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDocument {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl From<&Error> for ErrorDocument {
    fn from(e: &Error) -> Self {
        let kind = e.kind();
        if kind == ErrorKind::Internal {
            return Self {
                code: kind.code().into(),
                message: "internal error".into(),
                detail: Value::Null,
            };
        }
        Self {
            code: kind.code().into(),
            message: e.to_string(),
            detail: detail_of(e),
        }
    }
}

fn detail_of(e: &Error) -> Value {
    match e {
        Error::Entity { entity, source } => {
            let mut inner = detail_of(source);
            match inner.as_object_mut() {
                Some(obj) => {
                    obj.insert("entity".into(), json!(entity));
                    inner
                }
                None => json!({ "entity": entity }),
            }
        }
        Error::Encoding { feature, .. } => json!({ "feature": feature }),
        Error::MissingValue { feature, .. } => json!({ "feature": feature }),
        Error::Parse { line, .. } => json!({ "line": line }),
        Error::Dimension { expected, found } => json!({ "expected": expected, "found": found }),
        Error::Compatibility(m) => json!({
            "index": m.index,
            "expected": m.expected,
            "found": m.found,
        }),
        Error::NotFound { what, name } | Error::Conflict { what, name } => {
            json!({ "entity_type": what, "name": name })
        }
        Error::InfeasibleScale { candidates, budget } => json!({
            "candidates": u64::try_from(*candidates).unwrap_or(u64::MAX),
            "budget": u64::try_from(*budget).unwrap_or(u64::MAX),
        }),
        _ => Value::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_carry_structured_detail() {
        let e = Error::Entity {
            entity: "p7".into(),
            source: Box::new(Error::Compatibility(ColumnMismatch {
                index: 2,
                expected: Some("age".into()),
                found: None,
            })),
        };
        let doc = ErrorDocument::from(&e);
        assert_eq!(doc.code, "validation");
        assert_eq!(doc.detail, json!({"entity": "p7", "index": 2, "expected": "age", "found": null}));
    }

    #[test]
    fn internal_errors_are_opaque() {
        let e = Error::Io(std::io::Error::other("/secret/path"));
        let doc = ErrorDocument::from(&e);
        assert_eq!(doc.code, "internal");
        assert!(!doc.message.contains("secret"));
    }
}
