//! Template parameter ranges and the program pool.
//!
//! Loaded from `data/program_registry.json`. Out-of-range parameters are a
//! hard error; nothing is clamped.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{PrimitiveId, ProgramError, ProgramSpec, Template};

const BUILTIN: &str = include_str!("../../data/program_registry.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub primitive: PrimitiveId,
    pub params: BTreeMap<String, ParamRange>,
    #[serde(default)]
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub version: String,
    pub templates: BTreeMap<Template, TemplateSpec>,
    pub pool: Vec<ProgramSpec>,
}

impl Registry {
    pub fn builtin() -> &'static Registry {
        static REG: OnceLock<Registry> = OnceLock::new();
        REG.get_or_init(|| Registry::from_json(BUILTIN).expect("builtin program registry is valid"))
    }

    pub fn from_json(text: &str) -> Result<Registry, ProgramError> {
        let reg: Registry = serde_json::from_str(text).map_err(ProgramError::from_json)?;
        for t in Template::ALL {
            if !reg.templates.contains_key(&t) {
                return Err(ProgramError::Invalid(format!("registry lacks template {t:?}")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &reg.pool {
            if !seen.insert(p.program_id.clone()) {
                return Err(ProgramError::DuplicateProgram(p.program_id.clone()));
            }
            reg.validate_spec(p)?;
        }
        Ok(reg)
    }

    pub fn template(&self, t: Template) -> &TemplateSpec {
        &self.templates[&t]
    }

    pub fn pool_get(&self, program_id: &str) -> Option<&ProgramSpec> {
        self.pool.iter().find(|p| p.program_id == program_id)
    }

    /// Checks template membership, parameter names, completeness and ranges.
    pub fn validate_spec(&self, spec: &ProgramSpec) -> Result<(), ProgramError> {
        let ts = self.template(spec.template);
        if ts.primitive != spec.primitive {
            return Err(ProgramError::TemplateMismatch {
                program_id: spec.program_id.clone(),
                template: spec.template,
                primitive: spec.primitive,
            });
        }
        if spec.program_id.trim().is_empty() {
            return Err(ProgramError::Invalid("empty program_id".into()));
        }
        if spec.params.is_empty() {
            return Err(ProgramError::MissingParam {
                program_id: spec.program_id.clone(),
                param: "<any>".into(),
            });
        }
        for req in &ts.required {
            if !spec.params.contains_key(req) {
                return Err(ProgramError::MissingParam {
                    program_id: spec.program_id.clone(),
                    param: req.clone(),
                });
            }
        }
        for (name, &value) in &spec.params {
            self.check_param(spec, name, value)?;
        }
        if let Some(g) = &spec.guard {
            if !g.is_finite() {
                return Err(ProgramError::Invalid(format!(
                    "guard of {} has a non-finite threshold",
                    spec.program_id
                )));
            }
        }
        Ok(())
    }

    pub fn check_param(&self, spec: &ProgramSpec, name: &str, value: f64) -> Result<(), ProgramError> {
        let ts = self.template(spec.template);
        let range = ts.params.get(name).ok_or_else(|| ProgramError::UnknownParam {
            program_id: spec.program_id.clone(),
            param: name.to_string(),
        })?;
        let integral_ok = !range.integer || value.fract() == 0.0;
        if !value.is_finite() || value < range.min || value > range.max || !integral_ok {
            return Err(ProgramError::OutOfRange {
                program_id: spec.program_id.clone(),
                param: name.to_string(),
                value,
                min: range.min,
                max: range.max,
            });
        }
        Ok(())
    }
}
