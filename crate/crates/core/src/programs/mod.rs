//! Symbolic program DSL.
//!
//! A [`ProgramSpec`] is a parameterized template bound to a logical primitive.
//! A [`Pipeline`] is an ordered composition of specs for one primitive, and a
//! [`Mapping`] holds the deployed pipeline of every primitive. Pipelines are
//! edited only through [`Edit`] scripts (AND, OR, ADD, DEL, MOD) and are
//! interpreted into [`ControlParams`] (formation control) or
//! [`DefendEffects`] (defense).

mod guard;
mod registry;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::ControlParams;

pub use guard::{CmpOp, Comparison, MetaObservation, Metric, Predicate};
pub use registry::{ParamRange, Registry, TemplateSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("{program_id}.{param} = {value} outside [{min}, {max}]")]
    OutOfRange {
        program_id: String,
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{program_id} has unknown parameter `{param}`")]
    UnknownParam { program_id: String, param: String },
    #[error("{program_id} is missing parameter `{param}`")]
    MissingParam { program_id: String, param: String },
    #[error("{program_id}: template {template:?} does not belong to {primitive:?}")]
    TemplateMismatch {
        program_id: String,
        template: Template,
        primitive: PrimitiveId,
    },
    #[error("program {program_id} targets {found:?} but the pipeline is {expected:?}")]
    PrimitiveMismatch {
        program_id: String,
        expected: PrimitiveId,
        found: PrimitiveId,
    },
    #[error("no stage `{0}` in pipeline")]
    UnknownProgram(String),
    #[error("stage `{0}` already present")]
    DuplicateProgram(String),
    #[error("`{0}` is not in the program pool")]
    NotInPool(String),
    #[error("OR requires a guard on `{0}`")]
    MissingGuard(String),
    #[error("interpreted control parameters invalid: {0}")]
    InvalidControl(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ProgramError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        ProgramError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimitiveId {
    #[serde(rename = "L1")]
    FormationControl,
    #[serde(rename = "L2")]
    Defend,
}

impl PrimitiveId {
    pub const ALL: [PrimitiveId; 2] = [PrimitiveId::FormationControl, PrimitiveId::Defend];

    pub fn code(self) -> &'static str {
        match self {
            PrimitiveId::FormationControl => "L1",
            PrimitiveId::Defend => "L2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveId::FormationControl => "FormationControl",
            PrimitiveId::Defend => "Defend",
        }
    }

    /// `"L1: FormationControl"` style label.
    pub fn label(self) -> String {
        format!("{}: {}", self.code(), self.name())
    }

    pub fn from_code(s: &str) -> Option<PrimitiveId> {
        let head = s.split(':').next().unwrap_or("").trim();
        match head {
            "L1" => Some(PrimitiveId::FormationControl),
            "L2" => Some(PrimitiveId::Defend),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalPrimitive {
    pub id: PrimitiveId,
    pub description: String,
}

impl LogicalPrimitive {
    pub fn all() -> Vec<LogicalPrimitive> {
        vec![
            LogicalPrimitive {
                id: PrimitiveId::FormationControl,
                description: "adjust coordination parameters: behavior weights, distances, speed bounds, slot layout"
                    .into(),
            },
            LogicalPrimitive {
                id: PrimitiveId::Defend,
                description: "filter, down-weight or quarantine inconsistent neighbor reports".into(),
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Template {
    WeightSet,
    DistanceSet,
    SpeedCap,
    SlotReassign,
    OutlierFilter,
    TrustDecay,
    WeightNoise,
    Quarantine,
}

impl Template {
    pub const ALL: [Template; 8] = [
        Template::WeightSet,
        Template::DistanceSet,
        Template::SpeedCap,
        Template::SlotReassign,
        Template::OutlierFilter,
        Template::TrustDecay,
        Template::WeightNoise,
        Template::Quarantine,
    ];

    pub fn primitive(self) -> PrimitiveId {
        match self {
            Template::WeightSet | Template::DistanceSet | Template::SpeedCap | Template::SlotReassign => {
                PrimitiveId::FormationControl
            }
            _ => PrimitiveId::Defend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub program_id: String,
    pub primitive: PrimitiveId,
    pub template: Template,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Predicate>,
}

impl ProgramSpec {
    pub fn new(program_id: &str, template: Template, params: &[(&str, f64)]) -> Self {
        Self {
            program_id: program_id.to_string(),
            primitive: template.primitive(),
            template,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            guard: None,
        }
    }

    pub fn with_guard(mut self, guard: Predicate) -> Self {
        self.guard = Some(guard);
        self
    }

    fn active(&self, obs: &MetaObservation) -> bool {
        self.guard.as_ref().is_none_or(|g| g.eval(obs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub primitive: PrimitiveId,
    pub stages: Vec<ProgramSpec>,
}

/// Pipeline edit operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "arg")]
pub enum Edit {
    /// Append unconditionally.
    #[serde(rename = "AND")]
    And(ProgramSpec),
    /// Append as a guarded alternative.
    #[serde(rename = "OR")]
    Or(ProgramSpec),
    /// Append a program drawn from the pool.
    #[serde(rename = "ADD")]
    Add(ProgramSpec),
    #[serde(rename = "DEL")]
    Del { program_id: String },
    /// Patch named parameters of an existing stage in place.
    #[serde(rename = "MOD")]
    Mod {
        program_id: String,
        patch: BTreeMap<String, f64>,
    },
}

impl Edit {
    pub fn op_name(&self) -> &'static str {
        match self {
            Edit::And(_) => "AND",
            Edit::Or(_) => "OR",
            Edit::Add(_) => "ADD",
            Edit::Del { .. } => "DEL",
            Edit::Mod { .. } => "MOD",
        }
    }
}

/// Output of interpreting one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Effects {
    Control(ControlParams),
    Defend(DefendEffects),
}

/// Defensive effects consumed by the simulator's report handling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DefendEffects {
    /// Reports with a kinematic z-score at or above this are discarded.
    pub outlier_z: Option<f64>,
    /// Multiplicative trust loss applied to a peer on each flagged report.
    pub trust_decay: Option<f64>,
    pub weight_noise_sigma: Option<f64>,
    /// Quarantined aircraft id -> first frame at which the quarantine lapses.
    pub quarantine: BTreeMap<usize, u64>,
}

impl Pipeline {
    pub fn empty(primitive: PrimitiveId) -> Self {
        Self {
            primitive,
            stages: Vec::new(),
        }
    }

    pub fn stage(&self, program_id: &str) -> Option<&ProgramSpec> {
        self.stages.iter().find(|s| s.program_id == program_id)
    }

    pub fn program_ids(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.program_id.clone()).collect()
    }

    /// Structural and registry validation.
    pub fn validate(&self, reg: &Registry) -> Result<(), ProgramError> {
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if s.primitive != self.primitive {
                return Err(ProgramError::PrimitiveMismatch {
                    program_id: s.program_id.clone(),
                    expected: self.primitive,
                    found: s.primitive,
                });
            }
            if !seen.insert(s.program_id.as_str()) {
                return Err(ProgramError::DuplicateProgram(s.program_id.clone()));
            }
            reg.validate_spec(s)?;
        }
        Ok(())
    }

    /// Canonical compact JSON.
    pub fn serialize(&self) -> String {
        serde_json::to_string(self).expect("pipeline serializes")
    }

    pub fn parse(text: &str, reg: &Registry) -> Result<Pipeline, ProgramError> {
        let p: Pipeline = serde_json::from_str(text).map_err(ProgramError::from_json)?;
        p.validate(reg)?;
        Ok(p)
    }

    fn check_new(&self, spec: &ProgramSpec, reg: &Registry) -> Result<(), ProgramError> {
        if spec.primitive != self.primitive {
            return Err(ProgramError::PrimitiveMismatch {
                program_id: spec.program_id.clone(),
                expected: self.primitive,
                found: spec.primitive,
            });
        }
        if self.stage(&spec.program_id).is_some() {
            return Err(ProgramError::DuplicateProgram(spec.program_id.clone()));
        }
        reg.validate_spec(spec)
    }

    /// Applies one edit, returning a new pipeline.
    pub fn compose(&self, edit: &Edit, reg: &Registry) -> Result<Pipeline, ProgramError> {
        let mut out = self.clone();
        match edit {
            Edit::And(spec) => {
                let mut spec = spec.clone();
                spec.guard = None;
                self.check_new(&spec, reg)?;
                out.stages.push(spec);
            }
            Edit::Or(spec) => {
                if spec.guard.is_none() {
                    return Err(ProgramError::MissingGuard(spec.program_id.clone()));
                }
                self.check_new(spec, reg)?;
                out.stages.push(spec.clone());
            }
            Edit::Add(spec) => {
                let pooled = reg
                    .pool_get(&spec.program_id)
                    .ok_or_else(|| ProgramError::NotInPool(spec.program_id.clone()))?;
                if pooled.template != spec.template || pooled.primitive != spec.primitive {
                    return Err(ProgramError::NotInPool(spec.program_id.clone()));
                }
                let mut spec = spec.clone();
                spec.guard = None;
                self.check_new(&spec, reg)?;
                out.stages.push(spec);
            }
            Edit::Del { program_id } => {
                let idx = self
                    .stages
                    .iter()
                    .position(|s| &s.program_id == program_id)
                    .ok_or_else(|| ProgramError::UnknownProgram(program_id.clone()))?;
                out.stages.remove(idx);
            }
            Edit::Mod { program_id, patch } => {
                let stage = out
                    .stages
                    .iter_mut()
                    .find(|s| &s.program_id == program_id)
                    .ok_or_else(|| ProgramError::UnknownProgram(program_id.clone()))?;
                for (k, &v) in patch {
                    reg.check_param(stage, k, v)?;
                    stage.params.insert(k.clone(), v);
                }
            }
        }
        Ok(out)
    }

    /// Applies a whole edit script left to right.
    pub fn apply_edits(&self, edits: &[Edit], reg: &Registry) -> Result<Pipeline, ProgramError> {
        edits.iter().try_fold(self.clone(), |p, e| p.compose(e, reg))
    }

    /// Folds the pipeline into its effects. Guarded stages apply only when
    /// their guard holds on `obs`.
    pub fn interpret(&self, base: &ControlParams, obs: &MetaObservation) -> Result<Effects, ProgramError> {
        match self.primitive {
            PrimitiveId::FormationControl => self.interpret_control(base, obs).map(Effects::Control),
            PrimitiveId::Defend => self.interpret_defend(obs).map(Effects::Defend),
        }
    }

    pub fn interpret_control(
        &self,
        base: &ControlParams,
        obs: &MetaObservation,
    ) -> Result<ControlParams, ProgramError> {
        if self.primitive != PrimitiveId::FormationControl {
            return Err(ProgramError::Invalid("not a formation-control pipeline".into()));
        }
        let reg = Registry::builtin();
        let mut c = base.clone();
        for s in self.stages.iter().filter(|s| s.active(obs)) {
            for (name, &v) in &s.params {
                reg.check_param(s, name, v)?;
                let slot = match (s.template, name.as_str()) {
                    (Template::WeightSet, "w_sep") => &mut c.w_sep,
                    (Template::WeightSet, "w_coh") => &mut c.w_coh,
                    (Template::WeightSet, "w_align") => &mut c.w_align,
                    (Template::WeightSet, "w_goal") => &mut c.w_goal,
                    (Template::DistanceSet, "r_sep") => &mut c.r_sep,
                    (Template::DistanceSet, "r_coh") => &mut c.r_coh,
                    (Template::DistanceSet, "r_comm") => &mut c.r_comm,
                    (Template::SpeedCap, "v_max") => &mut c.v_max,
                    (Template::SpeedCap, "a_max") => &mut c.a_max,
                    (Template::SlotReassign, "phase") => &mut c.slot_phase,
                    _ => {
                        return Err(ProgramError::UnknownParam {
                            program_id: s.program_id.clone(),
                            param: name.clone(),
                        })
                    }
                };
                *slot = v;
            }
        }
        c.validate().map_err(|e| ProgramError::InvalidControl(e.to_string()))?;
        Ok(c)
    }

    pub fn interpret_defend(&self, obs: &MetaObservation) -> Result<DefendEffects, ProgramError> {
        if self.primitive != PrimitiveId::Defend {
            return Err(ProgramError::Invalid("not a defend pipeline".into()));
        }
        let reg = Registry::builtin();
        let mut d = DefendEffects::default();
        for s in self.stages.iter().filter(|s| s.active(obs)) {
            for (name, &v) in &s.params {
                reg.check_param(s, name, v)?;
            }
            let p = |k: &str| s.params.get(k).copied();
            match s.template {
                Template::OutlierFilter => d.outlier_z = p("z"),
                Template::TrustDecay => d.trust_decay = p("decay"),
                Template::WeightNoise => d.weight_noise_sigma = p("sigma"),
                Template::Quarantine => {
                    let id = p("aircraft").unwrap_or(0.0) as usize;
                    let ttl = p("ttl").unwrap_or(0.0) as u64;
                    let start = p("start_frame").unwrap_or(0.0) as u64;
                    let expiry = start + ttl;
                    let e = d.quarantine.entry(id).or_insert(expiry);
                    *e = (*e).max(expiry);
                }
                other => {
                    return Err(ProgramError::TemplateMismatch {
                        program_id: s.program_id.clone(),
                        template: other,
                        primitive: PrimitiveId::Defend,
                    })
                }
            }
        }
        Ok(d)
    }
}

/// The deployed pipeline of every primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub formation: Pipeline,
    pub defend: Pipeline,
    pub version: u64,
}

impl Mapping {
    /// Initial deployment: pool weights and distances for formation control,
    /// no defensive stages.
    pub fn initial(reg: &Registry) -> Mapping {
        let formation = Pipeline {
            primitive: PrimitiveId::FormationControl,
            stages: ["P1.1", "P1.2"]
                .iter()
                .filter_map(|id| reg.pool_get(id).cloned())
                .collect(),
        };
        Mapping {
            formation,
            defend: Pipeline::empty(PrimitiveId::Defend),
            version: 0,
        }
    }

    pub fn pipeline(&self, p: PrimitiveId) -> &Pipeline {
        match p {
            PrimitiveId::FormationControl => &self.formation,
            PrimitiveId::Defend => &self.defend,
        }
    }

    /// Copy with one pipeline replaced; the version is not touched.
    pub fn with_pipeline(&self, pipeline: Pipeline) -> Mapping {
        let mut m = self.clone();
        match pipeline.primitive {
            PrimitiveId::FormationControl => m.formation = pipeline,
            PrimitiveId::Defend => m.defend = pipeline,
        }
        m
    }

    pub fn effects(
        &self,
        base: &ControlParams,
        obs: &MetaObservation,
    ) -> Result<(ControlParams, DefendEffects), ProgramError> {
        Ok((
            self.formation.interpret_control(base, obs)?,
            self.defend.interpret_defend(obs)?,
        ))
    }
}

#[cfg(test)]
mod tests;
