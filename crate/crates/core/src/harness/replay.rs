//! Replaying provenance records: rebuild the recorded edit, restore the
//! live state at the trigger frame by re-running the scenario with the
//! earlier recorded swaps, and re-validate the edit in a shadow run.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::{drive, Plan, ScenarioConfig, ScheduledSwap, Sinks};
use crate::adaptation::{shadow_validate, AdaptConfig};
use crate::programs::{Edit, Pipeline, PrimitiveId, Registry};
use crate::provenance::{edits_from_record, FeatureRegistry, ProvenanceRecord, ProvenanceStore};

/// Allowed gap between the recorded and the replayed shadow score.
pub const REPLAY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("store has no record {0}")]
    NoSuchRecord(usize),
    #[error("cannot open store: {0}")]
    Store(String),
    #[error("record references programs missing from the registry: {}", .0.join(", "))]
    MissingPrograms(Vec<String>),
    #[error("unknown logical primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("record {0} carries no validated candidate")]
    NoCandidate(usize),
    #[error("record cannot be reconstructed: {0}")]
    Unreconstructable(String),
    #[error("scenario rerun failed: {0}")]
    Rerun(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub record_id: usize,
    pub scenario: String,
    pub primitive: PrimitiveId,
    pub before: Pipeline,
    pub after: Pipeline,
    pub edits: Vec<Edit>,
    /// Whether the re-run reached the recorded pipeline before the edit.
    pub before_matches_rerun: bool,
    pub recorded_score: f64,
    pub replayed_score: f64,
    pub agrees: bool,
}

/// Program ids mentioned by a record that the registry pool does not know.
fn missing_programs(rec: &ProvenanceRecord, reg: &Registry) -> Vec<String> {
    let pa = &rec.program_adaptation;
    let mut ids: Vec<String> = pa.selected_program.programs.clone();
    ids.extend(pa.adaptation_details.parameter_changes.keys().cloned());
    if !pa.original_program.trim_start().starts_with('{') {
        ids.push(pa.original_program.trim().to_string());
    }
    ids.sort();
    ids.dedup();
    ids.retain(|id| reg.pool_get(id).is_none());
    ids
}

/// Rebuilds `(primitive, before, edits, after)` from a record.
pub fn reconstruct(
    rec: &ProvenanceRecord,
    reg: &Registry,
) -> Result<(PrimitiveId, Pipeline, Vec<Edit>, Pipeline), ReplayError> {
    let fail = |msg: String| {
        let missing = missing_programs(rec, reg);
        if missing.is_empty() {
            ReplayError::Unreconstructable(msg)
        } else {
            ReplayError::MissingPrograms(missing)
        }
    };
    let before = Pipeline::parse(&rec.program_adaptation.original_program, reg).map_err(|e| fail(e.to_string()))?;
    let primitive = PrimitiveId::from_code(&rec.logical_primitive)
        .ok_or_else(|| ReplayError::UnknownPrimitive(rec.logical_primitive.clone()))?;
    let edits = edits_from_record(&before, rec, reg).map_err(fail)?;
    let after = before.apply_edits(&edits, reg).map_err(|e| fail(e.to_string()))?;
    if after.program_ids() != rec.program_adaptation.selected_program.programs {
        return Err(ReplayError::Unreconstructable(format!(
            "rebuilt stages {:?} differ from recorded {:?}",
            after.program_ids(),
            rec.program_adaptation.selected_program.programs
        )));
    }
    Ok((primitive, before, edits, after))
}

/// Scenario a record was produced under: the recorded file if it still
/// loads, the named preset, or else the preset nearest to the recorded
/// environment.
fn scenario_for(rec: &ProvenanceRecord) -> ScenarioConfig {
    let seed = rec.context_number("seed").unwrap_or(0.0) as u64;
    if let Some(file) = rec.context_text("scenario_file") {
        if let Ok(cfg) = ScenarioConfig::load(Path::new(file)) {
            return cfg;
        }
    }
    let named = rec
        .context_text("scenario")
        .and_then(|s| ScenarioConfig::preset(s, seed));
    let mut cfg = named.unwrap_or_else(|| {
        let wind = rec.context_number("wind_magnitude").unwrap_or(0.0);
        let rain = rec.context_number("rain_drag").unwrap_or(0.0);
        let infected = rec.context_number("infected_report_rate").unwrap_or(0.0);
        let name = if wind > 0.5 || rain > 0.0 {
            "e2"
        } else if infected > 0.0 {
            "e3"
        } else {
            "e1"
        };
        ScenarioConfig::preset(name, seed).expect("preset")
    });
    cfg.seed = seed;
    cfg
}

fn recorded_adapt(rec: &ProvenanceRecord, base: &AdaptConfig) -> AdaptConfig {
    let mut a = base.clone();
    if let Some(h) = rec.context_number("shadow_horizon") {
        a.horizon = h as usize;
    }
    if let Some(l) = rec.context_number("swap_latency") {
        a.swap_latency = l as u64;
    }
    a
}

/// Swaps deployed by records of `run_id` that precede `before_id`.
fn recorded_swaps(
    store: &ProvenanceStore,
    run_id: &str,
    before_id: usize,
    reg: &Registry,
) -> Result<Vec<(PrimitiveId, ScheduledSwap)>, ReplayError> {
    let mut swaps = Vec::new();
    for (id, r) in store.records().iter().enumerate().take(before_id) {
        if r.context_text("run_id") != Some(run_id) || r.outcome.status != "deployed" {
            continue;
        }
        let (primitive, _, _, after) = reconstruct(r, reg)?;
        let frame =
            r.context_number("frame")
                .ok_or_else(|| ReplayError::Unreconstructable(format!("record {id} has no frame")))? as u64;
        let latency = r
            .context_number("swap_latency")
            .unwrap_or(AdaptConfig::default().swap_latency as f64) as u64;
        swaps.push((
            primitive,
            ScheduledSwap {
                frame: frame + latency,
                pipeline: after,
            },
        ));
    }
    Ok(swaps)
}

/// Replays one record of an open store. `cfg` overrides the scenario
/// inferred from the record.
pub fn replay_record(
    store: &ProvenanceStore,
    record_id: usize,
    cfg: Option<&ScenarioConfig>,
) -> Result<ReplayReport, ReplayError> {
    let reg = Registry::builtin();
    let rec = store
        .get(record_id)
        .ok_or(ReplayError::NoSuchRecord(record_id))?
        .clone();
    let (primitive, before, edits, after) = reconstruct(&rec, reg)?;
    if rec.validation_results.shadow_mode == "error" {
        return Err(ReplayError::NoCandidate(record_id));
    }
    let recorded_score = rec
        .success_rate()
        .ok_or_else(|| ReplayError::Unreconstructable("success_rate is not a percentage".into()))?;
    let frame =
        rec.context_number("frame")
            .ok_or_else(|| ReplayError::Unreconstructable("environmental_context has no frame".into()))? as u64;
    let run_id = rec.context_text("run_id").unwrap_or_default().to_string();

    let mut cfg = cfg.cloned().unwrap_or_else(|| scenario_for(&rec));
    cfg.adapt = recorded_adapt(&rec, &cfg.adapt);
    let swaps = recorded_swaps(store, &run_id, record_id, reg)?;
    let res = drive(
        &cfg,
        Plan::Scripted {
            swaps,
            stop_at: Some(frame),
        },
        &mut Sinks::discard(),
    )
    .map_err(|e| ReplayError::Rerun(e.to_string()))?;
    if res.state.world.frame != frame {
        return Err(ReplayError::Rerun(format!(
            "scenario ended at frame {} before the recorded frame {frame}",
            res.state.world.frame
        )));
    }
    let before_matches_rerun = res.mapping.pipeline(primitive) == &before;
    let candidate = res.mapping.with_pipeline(after.clone());
    let replayed_score = shadow_validate(&res.state, &candidate, cfg.adapt.horizon, &cfg.control, &cfg.scoring);
    Ok(ReplayReport {
        record_id,
        scenario: cfg.scenario_id.clone(),
        primitive,
        before,
        after,
        edits,
        before_matches_rerun,
        recorded_score,
        replayed_score,
        agrees: before_matches_rerun && (replayed_score - recorded_score).abs() <= REPLAY_TOLERANCE,
    })
}

/// Opens a provenance file and replays record `record_id`.
pub fn replay(store_path: &Path, record_id: usize) -> Result<ReplayReport, ReplayError> {
    let store =
        ProvenanceStore::open(store_path, FeatureRegistry::builtin()).map_err(|e| ReplayError::Store(e.to_string()))?;
    replay_record(&store, record_id, None)
}

/// Re-runs a scenario without adaptation, applying the swaps recorded for
/// `run_id`, and returns the frame log. With validation isolated from the
/// live stream this equals the original run's frame log.
pub fn rerun_with_recorded_swaps(
    cfg: &ScenarioConfig,
    store: &ProvenanceStore,
    run_id: &str,
) -> Result<Vec<u8>, ReplayError> {
    let reg = Registry::builtin();
    let swaps = recorded_swaps(store, run_id, store.len(), reg)?;
    let frames = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let mut sinks = Sinks::discard();
    sinks.frames = Box::new(SharedBuf(frames.clone()));
    drive(cfg, Plan::Scripted { swaps, stop_at: None }, &mut sinks).map_err(|e| ReplayError::Rerun(e.to_string()))?;
    drop(sinks);
    let out = frames.borrow().clone();
    Ok(out)
}

pub(crate) struct SharedBuf(pub std::rc::Rc<std::cell::RefCell<Vec<u8>>>);

impl std::io::Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.borrow_mut().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
