//! Scenario configuration documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adaptation::AdaptConfig;
use crate::metaagent::MetaPolicy;
use crate::moderator::{AblationFlags, ExternalConfig};
use crate::scoring::ScoringParams;
use crate::world::{ConfigError, ControlParams, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeratorKind {
    #[default]
    Scripted,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModeratorConfig {
    pub kind: ModeratorKind,
    /// Seed of the scripted moderator's random perturbations.
    pub seed: u64,
    /// Required for the external kind unless `TAPA_MODERATOR_URL` is set.
    pub external: Option<ExternalConfig>,
}

impl ModeratorConfig {
    pub fn external_config(&self) -> Result<ExternalConfig, HarnessError> {
        if let Some(c) = &self.external {
            return Ok(c.clone());
        }
        match std::env::var(crate::moderator::URL_ENV) {
            Ok(url) if !url.is_empty() => Ok(ExternalConfig::new(&url)),
            _ => Err(HarnessError::config(
                "scenario",
                "moderator.external",
                "external moderator needs an endpoint URL",
            )),
        }
    }
}

fn default_eval_window() -> u64 {
    500
}

fn default_world() -> WorldConfig {
    WorldConfig::e1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `E1`, `E2`, `E3` or a custom name.
    pub scenario_id: String,
    #[serde(default = "default_world")]
    pub world: WorldConfig,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub scoring: ScoringParams,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub moderator: ModeratorConfig,
    #[serde(default)]
    pub flags: AblationFlags,
    #[serde(default = "default_eval_window")]
    pub eval_window: u64,
    #[serde(default)]
    pub seed: u64,
    /// Meta-policy rule table; the shipped default when absent.
    #[serde(default)]
    pub policy: Option<MetaPolicy>,
    /// File the config was loaded from, recorded in provenance.
    #[serde(skip)]
    pub source_file: Option<String>,
}

impl ScenarioConfig {
    /// `e1`, `e2` or `e3` (case-insensitive).
    pub fn preset(name: &str, seed: u64) -> Option<ScenarioConfig> {
        let (id, world) = match name.to_ascii_lowercase().as_str() {
            "e1" => ("E1", WorldConfig::e1()),
            "e2" => ("E2", WorldConfig::e2()),
            "e3" => ("E3", WorldConfig::e3()),
            _ => return None,
        };
        Some(ScenarioConfig {
            scenario_id: id.into(),
            world,
            control: ControlParams::default(),
            scoring: ScoringParams::default(),
            adapt: AdaptConfig::default(),
            moderator: ModeratorConfig::default(),
            flags: AblationFlags::default(),
            eval_window: default_eval_window(),
            seed,
            policy: None,
            source_file: None,
        })
    }

    pub fn from_json(text: &str, file: &str) -> Result<ScenarioConfig, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            HarnessError::config(file, &field, e.into_inner().to_string())
        })?;
        cfg.source_file = Some(file.to_string());
        cfg.validate(file)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self, file: &str) -> Result<(), HarnessError> {
        let world_err = |prefix: &str, e: ConfigError| {
            let ConfigError::Invalid { field, reason } = e;
            HarnessError::config(file, &format!("{prefix}.{field}"), reason)
        };
        self.world.validate().map_err(|e| world_err("world", e))?;
        self.control.validate().map_err(|e| world_err("control", e))?;
        self.scoring
            .validate()
            .map_err(|e| HarnessError::config(file, "scoring", e.to_string()))?;
        self.adapt
            .validate()
            .map_err(|e| HarnessError::config(file, "adapt", e.to_string()))?;
        if self.eval_window < self.adapt.window {
            return Err(HarnessError::config(
                file,
                "eval_window",
                format!(
                    "eval_window {} is shorter than the detector window {}",
                    self.eval_window, self.adapt.window
                ),
            ));
        }
        if let Some(p) = &self.policy {
            if p.policy_id.is_empty() {
                return Err(HarnessError::config(file, "policy.policy_id", "must not be empty"));
            }
        }
        Ok(())
    }
}
