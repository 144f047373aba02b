//! Provenance chain: one JSON record per adaptation episode, appended to a
//! JSONL store and retrieved later by context similarity. Also holds the
//! expert-knowledge snippet registry consulted by the moderator.

mod diff;
mod features;
mod snippets;
mod store;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use diff::{case_edits, describe_change, edits_from_record, ChangeSummary};
pub use features::{FeatureDef, FeatureRegistry, FEATURE_DIM};
pub use snippets::{ExpertSnippet, GridItem, SnippetRegistry};
pub use store::{ProvenanceStore, StoreError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("schema violation at `{path}`: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn new(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub timestamp: String,
    pub logical_primitive: String,
    pub environmental_context: Map<String, Value>,
    pub program_adaptation: ProgramAdaptation,
    pub validation_results: ValidationResults,
    pub outcome: Outcome,
    pub interpretable_rationale: Rationale,
    pub agent_version: String,
    pub program_version: String,
    pub rag_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramAdaptation {
    pub original_program: String,
    pub selected_program: SelectedProgram,
    pub generated_program: Option<Value>,
    pub adaptation_details: AdaptationDetails,
    pub confidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedProgram {
    pub programs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDetails {
    /// Program id -> comma-separated `name=value` assignments.
    pub parameter_changes: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResults {
    pub shadow_mode: String,
    pub success_rate: String,
    pub response_time: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: String,
    pub performance_improvement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub detection_reason: String,
    pub adaptation_logic: String,
    pub rollback_available: bool,
}

#[derive(Clone, Copy)]
enum Kind {
    Text,
    Bool,
    TextList,
    TextMap,
    Context,
    Nullable,
    Object(&'static [(&'static str, Kind)]),
}

const SELECTED: &[(&str, Kind)] = &[("programs", Kind::TextList)];
const DETAILS: &[(&str, Kind)] = &[("parameter_changes", Kind::TextMap)];
const ADAPTATION: &[(&str, Kind)] = &[
    ("original_program", Kind::Text),
    ("selected_program", Kind::Object(SELECTED)),
    ("generated_program", Kind::Nullable),
    ("adaptation_details", Kind::Object(DETAILS)),
    ("confidence", Kind::Text),
];
const VALIDATION: &[(&str, Kind)] = &[
    ("shadow_mode", Kind::Text),
    ("success_rate", Kind::Text),
    ("response_time", Kind::Text),
];
const OUTCOME: &[(&str, Kind)] = &[("status", Kind::Text), ("performance_improvement", Kind::Text)];
const RATIONALE: &[(&str, Kind)] = &[
    ("detection_reason", Kind::Text),
    ("adaptation_logic", Kind::Text),
    ("rollback_available", Kind::Bool),
];
/// Top-level layout of a provenance record.
const RECORD: &[(&str, Kind)] = &[
    ("timestamp", Kind::Text),
    ("logical_primitive", Kind::Text),
    ("environmental_context", Kind::Context),
    ("program_adaptation", Kind::Object(ADAPTATION)),
    ("validation_results", Kind::Object(VALIDATION)),
    ("outcome", Kind::Object(OUTCOME)),
    ("interpretable_rationale", Kind::Object(RATIONALE)),
    ("agent_version", Kind::Text),
    ("program_version", Kind::Text),
    ("rag_version", Kind::Text),
];

fn check(v: &Value, kind: Kind, path: &str) -> Result<(), SchemaError> {
    match kind {
        Kind::Text if v.is_string() => Ok(()),
        Kind::Text => Err(SchemaError::new(path, "expected a string")),
        Kind::Bool if v.is_boolean() => Ok(()),
        Kind::Bool => Err(SchemaError::new(path, "expected a boolean")),
        Kind::Nullable => Ok(()),
        Kind::TextList => match v.as_array() {
            Some(items) if items.iter().all(Value::is_string) => Ok(()),
            _ => Err(SchemaError::new(path, "expected a list of strings")),
        },
        Kind::TextMap => match v.as_object() {
            Some(m) => match m.iter().find(|(_, x)| !x.is_string()) {
                Some((k, _)) => Err(SchemaError::new(&format!("{path}.{k}"), "expected a string")),
                None => Ok(()),
            },
            None => Err(SchemaError::new(path, "expected an object")),
        },
        Kind::Context => {
            let m = v
                .as_object()
                .ok_or_else(|| SchemaError::new(path, "expected an object"))?;
            for (k, x) in m {
                let ok = match x {
                    Value::String(_) | Value::Number(_) => true,
                    Value::Array(r) => r.len() == 2 && r.iter().all(Value::is_number),
                    _ => false,
                };
                if !ok {
                    return Err(SchemaError::new(
                        &format!("{path}.{k}"),
                        "expected text, a number or a [min, max] range",
                    ));
                }
            }
            Ok(())
        }
        Kind::Object(fields) => {
            let m = v
                .as_object()
                .ok_or_else(|| SchemaError::new(path, "expected an object"))?;
            for (name, sub) in fields {
                let child = if path.is_empty() {
                    name.to_string()
                } else {
                    format!("{path}.{name}")
                };
                let x = m.get(*name).ok_or_else(|| SchemaError::new(&child, "missing field"))?;
                check(x, *sub, &child)?;
            }
            if let Some(extra) = m.keys().find(|k| !fields.iter().any(|(n, _)| n == k)) {
                let child = if path.is_empty() {
                    extra.clone()
                } else {
                    format!("{path}.{extra}")
                };
                return Err(SchemaError::new(&child, "unknown field"));
            }
            Ok(())
        }
    }
}

/// Checks a JSON value against the record layout: exact field names and
/// nesting, no missing or extra fields.
pub fn validate_record_value(v: &Value) -> Result<(), SchemaError> {
    check(v, Kind::Object(RECORD), "")
}

impl ProvenanceRecord {
    pub fn from_json(text: &str) -> Result<ProvenanceRecord, SchemaError> {
        let v: Value = serde_json::from_str(text).map_err(|e| SchemaError::new("", e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<ProvenanceRecord, SchemaError> {
        validate_record_value(&v)?;
        serde_json::from_value(v).map_err(|e| SchemaError::new("", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        validate_record_value(&self.to_value())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("record serializes")
    }

    /// Compact single-line JSON.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Parses `parameter_changes` into program id -> ordered assignments.
    pub fn parameter_changes(&self) -> Result<Vec<(String, Assignments)>, SchemaError> {
        let mut out = Vec::new();
        for (id, v) in &self.program_adaptation.adaptation_details.parameter_changes {
            let text = v.as_str().unwrap_or_default();
            out.push((
                id.clone(),
                parse_assignments(text).map_err(|m| {
                    SchemaError::new(
                        &format!("program_adaptation.adaptation_details.parameter_changes.{id}"),
                        m,
                    )
                })?,
            ));
        }
        Ok(out)
    }

    /// Numeric `success_rate` (a percentage).
    pub fn success_rate(&self) -> Option<f64> {
        parse_percent(&self.validation_results.success_rate)
    }

    pub fn context_number(&self, key: &str) -> Option<f64> {
        self.environmental_context.get(key).and_then(Value::as_f64)
    }

    pub fn context_text(&self, key: &str) -> Option<&str> {
        self.environmental_context.get(key).and_then(Value::as_str)
    }
}

/// `"a=1,b=2.5"` -> `[("a", 1.0), ("b", 2.5)]`.
/// Ordered `name=value` pairs.
pub type Assignments = Vec<(String, f64)>;

pub fn parse_assignments(text: &str) -> Result<Vec<(String, f64)>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("`{part}` is not name=value"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

pub fn format_assignments<'a>(items: impl IntoIterator<Item = (&'a String, &'a f64)>) -> String {
    items
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// `"95%"`, `"+12.5%"` -> the number; `None` if malformed.
pub fn parse_percent(text: &str) -> Option<f64> {
    text.trim().strip_suffix('%')?.trim().parse().ok()
}

pub fn format_percent(v: f64) -> String {
    format!("{v}%")
}

#[cfg(test)]
mod tests;
