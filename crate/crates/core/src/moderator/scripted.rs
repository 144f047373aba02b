//! Deterministic, offline candidate synthesis.
//!
//! Candidates come in three groups, concatenated and truncated to the
//! budget: replays of retrieved cases (nearest first), expert-grid
//! perturbations (snippet order, then grid order), and seeded random
//! perturbations when the expert grid is disabled. Random perturbations
//! start from the best retrieved case when one is available and keep moving
//! its changed parameters in the same direction.

use std::collections::BTreeMap;

use super::{
    AblationFlags, CandidateOrigin, CandidateProposal, Moderator, ModeratorError, ModeratorRequest, ModeratorResponse,
    SCHEMA_VERSION,
};
use crate::programs::{Edit, Pipeline, PrimitiveId, ProgramSpec, Registry, Template};
use crate::provenance::{case_edits, GridItem};
use crate::rng::{streams, SimRng};

const GRID_CONFIDENCE: f64 = 0.8;
const RANDOM_CONFIDENCE: f64 = 0.3;
/// Draws attempted per missing random candidate.
const RANDOM_ATTEMPTS: usize = 20;
/// Probability of continuing along the best case's changed parameters.
const MOMENTUM: f64 = 0.75;
/// Fraction of the remaining log distance to the parameter bound covered by a
/// step that continues a case's direction.
const MOMENTUM_REACH: (f64, f64) = (0.35, 0.65);
const QUARANTINE_TTL: f64 = 300.0;

/// (stage, parameter) pairs random L1 perturbations may touch.
const L1_PARAMS: [(&str, &str); 7] = [
    ("P1.1", "w_sep"),
    ("P1.1", "w_coh"),
    ("P1.1", "w_align"),
    ("P1.1", "w_goal"),
    ("P1.2", "r_sep"),
    ("P1.2", "r_coh"),
    ("P1.2", "r_comm"),
];

#[derive(Debug, Clone)]
pub struct ScriptedModerator {
    pub flags: AblationFlags,
    pub seed: u64,
}

impl Moderator for ScriptedModerator {
    fn name(&self) -> &str {
        "scripted"
    }

    fn synthesize(&self, req: &ModeratorRequest) -> Result<ModeratorResponse, ModeratorError> {
        scripted_synthesize(req, self.flags, self.seed)
    }
}

struct Builder<'a> {
    reg: &'a Registry,
    current: Pipeline,
    seen: Vec<String>,
    out: Vec<CandidateProposal>,
}

impl Builder<'_> {
    fn push(&mut self, edits: Vec<Edit>, origin: CandidateOrigin, rationale: String, confidence: f64) -> bool {
        if edits.is_empty() {
            return false;
        }
        let Ok(after) = self.current.apply_edits(&edits, self.reg) else {
            return false;
        };
        if after == self.current || !control_valid(&after) {
            return false;
        }
        let key = after.serialize();
        if self.seen.contains(&key) {
            return false;
        }
        self.seen.push(key);
        self.out.push(CandidateProposal {
            edits,
            rationale,
            confidence,
            origin,
        });
        true
    }
}

/// Formation pipelines must fold into valid control parameters.
fn control_valid(p: &Pipeline) -> bool {
    p.primitive != PrimitiveId::FormationControl
        || p.interpret_control(&Default::default(), &Default::default()).is_ok()
}

/// Current value of `param` on stage `program_id`, falling back to the pool.
fn current_value(current: &Pipeline, reg: &Registry, program_id: &str, param: &str) -> Option<f64> {
    current
        .stage(program_id)
        .and_then(|s| s.params.get(param))
        .or_else(|| reg.pool_get(program_id).and_then(|s| s.params.get(param)))
        .copied()
}

fn clamp_to_range(reg: &Registry, template: Template, param: &str, v: f64) -> f64 {
    match reg.template(template).params.get(param) {
        Some(r) => {
            let v = v.clamp(r.min, r.max);
            if r.integer {
                v.round()
            } else {
                v
            }
        }
        None => v,
    }
}

/// Edits setting `params` on a stage, adding it from the pool if absent.
fn set_params(current: &Pipeline, reg: &Registry, program_id: &str, params: &[(&str, f64)]) -> Option<Vec<Edit>> {
    let (template, present) = match current.stage(program_id) {
        Some(s) => (s.template, true),
        None => (reg.pool_get(program_id)?.template, false),
    };
    let patch: BTreeMap<String, f64> = params
        .iter()
        .map(|(k, v)| (k.to_string(), clamp_to_range(reg, template, k, *v)))
        .collect();
    if present {
        Some(vec![Edit::Mod {
            program_id: program_id.to_string(),
            patch,
        }])
    } else {
        let mut spec: ProgramSpec = reg.pool_get(program_id)?.clone();
        spec.params.extend(patch);
        Some(vec![Edit::Add(spec)])
    }
}

fn grid_edits(item: &GridItem, current: &Pipeline, reg: &Registry, req: &ModeratorRequest) -> Vec<(Vec<Edit>, String)> {
    match item {
        GridItem::Scale {
            program_id,
            param,
            factors,
        } => {
            let Some(base) = current_value(current, reg, program_id, param) else {
                return Vec::new();
            };
            factors
                .iter()
                .filter_map(|f| {
                    let e = set_params(current, reg, program_id, &[(param, base * f)])?;
                    Some((e, format!("{param} x{f}")))
                })
                .collect()
        }
        GridItem::Set {
            program_id,
            param,
            values,
        } => values
            .iter()
            .filter_map(|v| {
                let e = set_params(current, reg, program_id, &[(param, *v)])?;
                Some((e, format!("{param} = {v}")))
            })
            .collect(),
        GridItem::QuarantineMostInconsistent { program_id, ttl } => {
            let (Some(id), Some(frame)) = (
                req.telemetry_number("most_inconsistent_reporter"),
                req.telemetry_number("frame"),
            ) else {
                return Vec::new();
            };
            set_params(
                current,
                reg,
                program_id,
                &[("aircraft", id), ("ttl", *ttl as f64), ("start_frame", frame)],
            )
            .map(|e| vec![(e, format!("quarantine aircraft {id} for {ttl} frames"))])
            .unwrap_or_default()
        }
    }
}

/// Log-uniform draw in `[lo, hi]`.
fn log_uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    (rng.uniform_range(lo.ln(), hi.ln())).exp()
}

/// Parameters a case moved, with the direction of the move relative to the
/// current pipeline.
fn case_directions(current: &Pipeline, after: &Pipeline) -> Vec<(String, String, f64)> {
    let mut out = Vec::new();
    for s in &after.stages {
        for (k, &v) in &s.params {
            let old = current.stage(&s.program_id).and_then(|o| o.params.get(k)).copied();
            if let Some(old) = old {
                if v != old {
                    out.push((s.program_id.clone(), k.clone(), (v - old).signum()));
                }
            }
        }
    }
    out
}

fn random_l1(
    rng: &mut SimRng,
    base: &Pipeline,
    base_edits: &[Edit],
    directions: &[(String, String, f64)],
    reg: &Registry,
) -> Option<(Vec<Edit>, String)> {
    let (pid, param, factor) = if !directions.is_empty() && rng.uniform() < MOMENTUM {
        let (pid, param, dir) = &directions[rng.index(directions.len())];
        let v = current_value(base, reg, pid, param)?;
        let template = base.stage(pid)?.template;
        let range = reg.template(template).params.get(param.as_str())?;
        let bound = if *dir > 0.0 { range.max } else { range.min };
        let u = rng.uniform_range(MOMENTUM_REACH.0, MOMENTUM_REACH.1);
        let f = if v > 0.0 && bound > 0.0 {
            (bound / v).powf(u)
        } else {
            (1.0 - u).max(0.1)
        };
        (pid.clone(), param.clone(), f)
    } else {
        let (pid, param) = L1_PARAMS[rng.index(L1_PARAMS.len())];
        (pid.to_string(), param.to_string(), log_uniform(rng, 0.5, 2.0))
    };
    let v = current_value(base, reg, &pid, &param)?;
    let mut edits = base_edits.to_vec();
    edits.extend(set_params(base, reg, &pid, &[(&param, v * factor)])?);
    Some((edits, format!("random perturbation {param} x{factor:.3}")))
}

fn random_l2(
    rng: &mut SimRng,
    current: &Pipeline,
    reg: &Registry,
    req: &ModeratorRequest,
) -> Option<(Vec<Edit>, String)> {
    let frame = req.telemetry_number("frame").unwrap_or(0.0);
    let n = req.telemetry_number("n_aircraft").unwrap_or(1.0).max(1.0);
    match rng.index(4) {
        0 => {
            let z = log_uniform(rng, 1.5, 6.0);
            Some((
                set_params(current, reg, "P2.1", &[("z", z)])?,
                format!("random outlier filter z = {z:.3}"),
            ))
        }
        1 => {
            let d = rng.uniform_range(0.05, 0.5);
            Some((
                set_params(current, reg, "P2.2", &[("decay", d)])?,
                format!("random trust decay {d:.3}"),
            ))
        }
        2 => {
            let s = rng.uniform_range(0.0, 0.5);
            Some((
                set_params(current, reg, "P2.3", &[("sigma", s)])?,
                format!("random weight noise {s:.3}"),
            ))
        }
        _ => {
            let id = req
                .telemetry_number("most_inconsistent_reporter")
                .unwrap_or_else(|| rng.index(n as usize) as f64);
            let e = set_params(
                current,
                reg,
                "P2.4",
                &[("aircraft", id), ("ttl", QUARANTINE_TTL), ("start_frame", frame)],
            )?;
            Some((e, format!("random quarantine of aircraft {id}")))
        }
    }
}

/// Scripted synthesis; pure in `(req, flags, seed)`.
pub fn scripted_synthesize(
    req: &ModeratorRequest,
    flags: AblationFlags,
    seed: u64,
) -> Result<ModeratorResponse, ModeratorError> {
    let reg = Registry::builtin();
    let current =
        Pipeline::parse(&req.current_pipeline, reg).map_err(|e| ModeratorError::InvalidRequest(e.to_string()))?;
    if current.primitive != req.primitive {
        return Err(ModeratorError::InvalidRequest(
            "current_pipeline does not belong to the requested primitive".into(),
        ));
    }
    let mut b = Builder {
        reg,
        current: current.clone(),
        seen: Vec::new(),
        out: Vec::new(),
    };

    let mut best_case: Option<(f64, Vec<Edit>)> = None;
    if flags.use_pc {
        for case in &req.retrieved_cases {
            if PrimitiveId::from_code(&case.record.logical_primitive) != Some(req.primitive) {
                continue;
            }
            let Ok(edits) = case_edits(&current, &case.record, reg) else {
                continue;
            };
            if current.apply_edits(&edits, reg).is_err() {
                continue;
            }
            let rate = case.record.success_rate().unwrap_or(0.0);
            let confidence = (rate / 100.0).clamp(0.0, 1.0);
            if best_case.as_ref().is_none_or(|(r, _)| rate > *r) {
                best_case = Some((rate, edits.clone()));
            }
            b.push(
                edits,
                CandidateOrigin::RetrievedCase,
                format!(
                    "replay of provenance record {} at distance {:.4}",
                    case.record_id, case.distance
                ),
                confidence,
            );
        }
    }

    if flags.use_ek {
        for snippet in &req.expert_snippets {
            if snippet.primitive != req.primitive {
                continue;
            }
            for item in &snippet.grid {
                for (edits, what) in grid_edits(item, &current, reg, req) {
                    b.push(
                        edits,
                        CandidateOrigin::ExpertGrid,
                        format!("{}: {what}", snippet.snippet_id),
                        GRID_CONFIDENCE,
                    );
                }
            }
        }
    } else {
        let frame = req.telemetry_number("frame").unwrap_or(0.0) as u64;
        let mut rng = SimRng::from_seed(seed).split(streams::MODERATOR ^ frame);
        let (base_edits, base) = match &best_case {
            Some((_, e)) => (e.clone(), current.apply_edits(e, reg).unwrap_or(current.clone())),
            None => (Vec::new(), current.clone()),
        };
        let directions = case_directions(&current, &base);
        let mut attempts = 0;
        while b.out.len() < req.budget && attempts < req.budget * RANDOM_ATTEMPTS {
            attempts += 1;
            let draw = match req.primitive {
                PrimitiveId::FormationControl => random_l1(&mut rng, &base, &base_edits, &directions, reg),
                PrimitiveId::Defend => random_l2(&mut rng, &current, reg, req),
            };
            if let Some((edits, what)) = draw {
                b.push(edits, CandidateOrigin::ModeratorNovel, what, RANDOM_CONFIDENCE);
            }
        }
    }

    let mut candidates = b.out;
    candidates.truncate(req.budget);
    Ok(ModeratorResponse {
        schema_version: SCHEMA_VERSION.to_string(),
        candidates,
    })
}
