//! Translating between pipeline edits and the record's
//! `original_program` / `selected_program` / `parameter_changes` /
//! `generated_program` fields.

use serde_json::{Map, Value};

use super::{format_assignments, ProvenanceRecord};
use crate::programs::{Edit, Pipeline, ProgramSpec, Registry};

/// Record-shaped description of the change from `before` to `after`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSummary {
    pub programs: Vec<String>,
    pub parameter_changes: Map<String, Value>,
    pub generated_program: Option<Value>,
}

fn from_pool(spec: &ProgramSpec, reg: &Registry) -> bool {
    spec.guard.is_none()
        && reg
            .pool_get(&spec.program_id)
            .is_some_and(|p| p.template == spec.template && p.primitive == spec.primitive)
}

/// Kept stages with changed parameters and new pool stages go to
/// `parameter_changes`; new stages outside the pool (or guarded ones) are
/// listed in full under `generated_program`.
pub fn describe_change(before: &Pipeline, after: &Pipeline, reg: &Registry) -> ChangeSummary {
    let mut parameter_changes = Map::new();
    let mut generated = Vec::new();
    for s in &after.stages {
        match before.stage(&s.program_id) {
            Some(old) => {
                let changed: Vec<_> = s
                    .params
                    .iter()
                    .filter(|(k, v)| old.params.get(*k) != Some(*v))
                    .collect();
                if !changed.is_empty() {
                    parameter_changes.insert(s.program_id.clone(), Value::String(format_assignments(changed)));
                }
            }
            None if from_pool(s, reg) => {
                parameter_changes.insert(s.program_id.clone(), Value::String(format_assignments(&s.params)));
            }
            None => generated.push(serde_json::to_value(s).expect("spec serializes")),
        }
    }
    ChangeSummary {
        programs: after.program_ids(),
        parameter_changes,
        generated_program: if generated.is_empty() {
            None
        } else {
            Some(Value::Array(generated))
        },
    }
}

/// Rebuilds an edit script that turns `before` into the recorded selection.
pub fn edits_from_record(before: &Pipeline, rec: &ProvenanceRecord, reg: &Registry) -> Result<Vec<Edit>, String> {
    let selected = &rec.program_adaptation.selected_program.programs;
    let mut edits: Vec<Edit> = before
        .stages
        .iter()
        .filter(|s| !selected.contains(&s.program_id))
        .map(|s| Edit::Del {
            program_id: s.program_id.clone(),
        })
        .collect();
    edits.extend(case_edits(before, rec, reg)?);
    Ok(edits)
}

/// The additive part of a record's change applied to `current`: MOD for
/// stages already present, ADD from the pool otherwise, and AND/OR for
/// generated programs.
pub fn case_edits(current: &Pipeline, rec: &ProvenanceRecord, reg: &Registry) -> Result<Vec<Edit>, String> {
    let changes = rec.parameter_changes().map_err(|e| e.to_string())?;
    let mut edits = Vec::new();
    for (id, assigns) in changes {
        if current.stage(&id).is_some() {
            edits.push(Edit::Mod {
                program_id: id,
                patch: assigns.into_iter().collect(),
            });
        } else {
            let mut spec = reg
                .pool_get(&id)
                .ok_or_else(|| format!("program `{id}` is not in the registry pool"))?
                .clone();
            for (k, v) in assigns {
                spec.params.insert(k, v);
            }
            edits.push(Edit::Add(spec));
        }
    }
    if let Some(g) = &rec.program_adaptation.generated_program {
        let specs: Vec<ProgramSpec> =
            serde_json::from_value(g.clone()).map_err(|e| format!("generated_program is not a program list: {e}"))?;
        for spec in specs {
            if current.stage(&spec.program_id).is_some() {
                continue;
            }
            edits.push(if spec.guard.is_some() {
                Edit::Or(spec)
            } else {
                Edit::And(spec)
            });
        }
    }
    Ok(edits)
}
