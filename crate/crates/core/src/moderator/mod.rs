//! Program-synthesis moderators: a deterministic scripted synthesizer and a
//! JSON-over-HTTP client for external endpoints. Both return edit scripts
//! only; nothing executable crosses this boundary.

mod external;
mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::programs::{Edit, Pipeline, PrimitiveId, Registry};
use crate::provenance::{ExpertSnippet, ProvenanceRecord};

pub use external::{ExternalConfig, ExternalModerator, URL_ENV};
pub use scripted::{scripted_synthesize, ScriptedModerator};

pub const SCHEMA_VERSION: &str = "tapa-moderator/1";

/// Default cap on a serialized request.
pub const DEFAULT_REQUEST_CAP: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeratorError {
    #[error("moderator protocol error: {0}")]
    Protocol(String),
    #[error("invalid moderator request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_ek: bool,
    pub use_pc: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_ek: true,
            use_pc: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CandidateOrigin {
    RetrievedCase,
    ExpertGrid,
    ModeratorNovel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestContext {
    /// Normalized context feature vector.
    pub features: Vec<f64>,
    /// Raw telemetry by name.
    pub telemetry: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub record_id: usize,
    pub distance: f64,
    pub record: ProvenanceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorRequest {
    pub schema_version: String,
    pub primitive: PrimitiveId,
    pub context: RequestContext,
    pub current_pipeline: String,
    pub retrieved_cases: Vec<RetrievedCase>,
    pub expert_snippets: Vec<ExpertSnippet>,
    pub budget: usize,
}

impl ModeratorRequest {
    pub fn validate(&self, cap: usize) -> Result<(), ModeratorError> {
        if self.budget == 0 {
            return Err(ModeratorError::InvalidRequest("budget must be >= 1".into()));
        }
        let size = serde_json::to_vec(self).map(|v| v.len()).unwrap_or(usize::MAX);
        if size > cap {
            return Err(ModeratorError::InvalidRequest(format!(
                "request is {size} bytes, cap is {cap}"
            )));
        }
        Ok(())
    }

    pub fn telemetry_number(&self, key: &str) -> Option<f64> {
        self.context.telemetry.get(key).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProposal {
    pub edits: Vec<Edit>,
    pub rationale: String,
    pub confidence: f64,
    #[serde(default = "novel")]
    pub origin: CandidateOrigin,
}

fn novel() -> CandidateOrigin {
    CandidateOrigin::ModeratorNovel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorResponse {
    pub schema_version: String,
    pub candidates: Vec<CandidateProposal>,
}

/// Anything that turns a request into candidate edit scripts.
pub trait Moderator: Send + Sync {
    fn name(&self) -> &str;
    fn synthesize(&self, req: &ModeratorRequest) -> Result<ModeratorResponse, ModeratorError>;
}

/// Drops candidates whose edits do not apply to the current pipeline under
/// the registry, then enforces `1 <= len <= budget`.
pub fn validate_response(
    resp: ModeratorResponse,
    req: &ModeratorRequest,
    reg: &Registry,
) -> Result<ModeratorResponse, ModeratorError> {
    if resp.schema_version != SCHEMA_VERSION {
        return Err(ModeratorError::Protocol(format!(
            "schema_version `{}`, expected `{SCHEMA_VERSION}`",
            resp.schema_version
        )));
    }
    let current =
        Pipeline::parse(&req.current_pipeline, reg).map_err(|e| ModeratorError::InvalidRequest(e.to_string()))?;
    let candidates: Vec<CandidateProposal> = resp
        .candidates
        .into_iter()
        .filter(|c| !c.edits.is_empty())
        .filter(|c| (0.0..=1.0).contains(&c.confidence))
        .filter(|c| current.apply_edits(&c.edits, reg).is_ok())
        .take(req.budget)
        .collect();
    if candidates.is_empty() {
        return Err(ModeratorError::Protocol("no valid candidates".into()));
    }
    Ok(ModeratorResponse {
        schema_version: resp.schema_version,
        candidates,
    })
}

/// Tries each moderator in order; returns the first validated response and
/// the name of the moderator that produced it, or every error seen.
pub fn synthesize_with_fallback(
    chain: &[&dyn Moderator],
    req: &ModeratorRequest,
    reg: &Registry,
) -> Result<(ModeratorResponse, String), Vec<(String, ModeratorError)>> {
    let mut errors = Vec::new();
    for m in chain {
        match m.synthesize(req).and_then(|r| validate_response(r, req, reg)) {
            Ok(r) => return Ok((r, m.name().to_string())),
            Err(e) => errors.push((m.name().to_string(), e)),
        }
    }
    Err(errors)
}

#[cfg(test)]
mod tests;
