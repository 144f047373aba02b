//! JSON-over-HTTP moderator client. POSTs a [`ModeratorRequest`] to
//! `{base_url}/synthesize` and expects a [`ModeratorResponse`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_response, Moderator, ModeratorError, ModeratorRequest, ModeratorResponse, DEFAULT_REQUEST_CAP};
use crate::programs::Registry;

pub const URL_ENV: &str = "TAPA_MODERATOR_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Base URL; `/synthesize` is appended.
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Extra headers passed through verbatim, e.g. an API key.
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default = "default_cap")]
    pub max_request_bytes: usize,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_cap() -> usize {
    DEFAULT_REQUEST_CAP
}

impl ExternalConfig {
    pub fn new(url: &str) -> Self {
        Self {
            url: url.to_string(),
            timeout_s: default_timeout(),
            headers: Vec::new(),
            max_request_bytes: default_cap(),
        }
    }
}

pub struct ExternalModerator {
    cfg: ExternalConfig,
    agent: ureq::Agent,
}

impl ExternalModerator {
    pub fn new(cfg: ExternalConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s.max(0.001))))
            .build()
            .into();
        Self { cfg, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/synthesize", self.cfg.url.trim_end_matches('/'))
    }
}

impl Moderator for ExternalModerator {
    fn name(&self) -> &str {
        "external"
    }

    /// Sends the request and returns only registry-valid candidates.
    fn synthesize(&self, req: &ModeratorRequest) -> Result<ModeratorResponse, ModeratorError> {
        req.validate(self.cfg.max_request_bytes)?;
        let mut call = self.agent.post(&self.endpoint());
        for (k, v) in &self.cfg.headers {
            call = call.header(k.as_str(), v.as_str());
        }
        let mut resp = call
            .send_json(req)
            .map_err(|e| ModeratorError::Protocol(e.to_string()))?;
        let parsed: ModeratorResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ModeratorError::Protocol(format!("malformed response: {e}")))?;
        validate_response(parsed, req, Registry::builtin())
    }
}
