//! Provenance record construction for an adaptation episode.

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde_json::{Map, Value};

use super::{AdaptConfig, AdaptationCandidate, EnvContext};
use crate::control::LoopState;
use crate::moderator::CandidateOrigin;
use crate::programs::{Pipeline, PrimitiveId};
use crate::provenance::{
    describe_change, format_percent, AdaptationDetails, Outcome, ProgramAdaptation, ProvenanceRecord, Rationale,
    SelectedProgram, ValidationResults,
};

/// Simulated seconds per frame.
pub const FRAME_SECONDS: f64 = 0.1;

/// Simulated wall clock: frame 0 is 2025-01-01 00:00:00.
pub fn sim_timestamp(frame: u64) -> String {
    let epoch: NaiveDateTime = NaiveDate::from_ymd_opt(2025, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let t = epoch + TimeDelta::milliseconds((frame as f64 * FRAME_SECONDS * 1000.0) as i64);
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

pub(crate) struct RecordInput<'a> {
    pub live: &'a LoopState,
    pub primitive: PrimitiveId,
    pub before: &'a Pipeline,
    pub after: Option<&'a Pipeline>,
    pub candidate: Option<&'a AdaptationCandidate>,
    pub deployed: bool,
    pub baseline_score: f64,
    pub telemetry: Map<String, Value>,
    pub cfg: &'a AdaptConfig,
    pub env: &'a EnvContext<'a>,
    pub store_version: &'a str,
}

fn origin_text(o: CandidateOrigin) -> &'static str {
    match o {
        CandidateOrigin::RetrievedCase => "retrieved case",
        CandidateOrigin::ExpertGrid => "expert grid",
        CandidateOrigin::ModeratorNovel => "moderator proposal",
    }
}

pub(crate) fn build_record(input: &RecordInput) -> ProvenanceRecord {
    let reg = input.env.registry;
    let after = input.after.unwrap_or(input.before);
    let change = describe_change(input.before, after, reg);
    let score = input.candidate.and_then(|c| c.shadow_score);
    let (shadow_mode, status) = match (input.candidate, input.deployed) {
        (_, true) => ("success", "deployed"),
        (Some(_), false) => ("failure", "rejected"),
        (None, _) => ("error", "error"),
    };
    let improvement = score
        .map(|s| format!("{:+}%", s - input.baseline_score))
        .unwrap_or_else(|| "+0%".into());
    let logic = match input.candidate {
        Some(c) => format!("{} ({})", c.rationale, origin_text(c.origin)),
        None => "no candidate could be synthesized".into(),
    };
    ProvenanceRecord {
        timestamp: sim_timestamp(input.live.world.frame),
        logical_primitive: input.primitive.label(),
        environmental_context: input.telemetry.clone(),
        program_adaptation: ProgramAdaptation {
            original_program: input.before.serialize(),
            selected_program: SelectedProgram {
                programs: change.programs,
            },
            generated_program: change.generated_program,
            adaptation_details: AdaptationDetails {
                parameter_changes: change.parameter_changes,
            },
            confidence: format_percent(input.candidate.map_or(0.0, |c| c.confidence * 100.0)),
        },
        validation_results: ValidationResults {
            shadow_mode: shadow_mode.into(),
            success_rate: format_percent(score.unwrap_or(0.0)),
            response_time: format!("{:.1}s", input.cfg.swap_latency as f64 * FRAME_SECONDS),
        },
        outcome: Outcome {
            status: status.into(),
            performance_improvement: improvement,
        },
        interpretable_rationale: Rationale {
            detection_reason: format!(
                "s_overall below {} for {} consecutive frames (now {:.1})",
                input.cfg.theta_deg, input.cfg.window, input.live.last_score.s_overall
            ),
            adaptation_logic: logic,
            rollback_available: input.deployed,
        },
        agent_version: format!("tapa-core v{}", env!("CARGO_PKG_VERSION")),
        program_version: reg.version.clone(),
        rag_version: format!("{}+{}", input.store_version, input.env.snippets.version),
    }
}
