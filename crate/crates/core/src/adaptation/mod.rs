//! Degradation detection and adaptation episodes: retrieve similar cases,
//! ask a moderator for candidate edits, score each candidate on a shadow
//! clone of the live loop, and pick the best accepted one.

mod record;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::control::LoopState;
use crate::moderator::{
    synthesize_with_fallback, AblationFlags, CandidateOrigin, Moderator, ModeratorRequest, RequestContext,
    RetrievedCase, SCHEMA_VERSION,
};
use crate::programs::{Edit, Mapping, PrimitiveId, Registry};
use crate::provenance::{ProvenanceRecord, ProvenanceStore, SnippetRegistry, StoreError};
use crate::rng::streams;
use crate::scoring::{FormationScore, ScoringParams};
use crate::world::ControlParams;

use record::build_record;
pub use record::sim_timestamp;

#[derive(Debug, Error)]
pub enum AdaptationError {
    #[error("invalid adaptation config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub enabled: bool,
    pub theta_deg: f64,
    pub window: u64,
    pub theta_accept: f64,
    pub horizon: usize,
    pub budget: usize,
    pub k_backups: usize,
    pub k_retrieve: usize,
    /// Live frames that elapse between the trigger and the swap.
    pub swap_latency: u64,
    /// Frames before the detector re-arms after a failed episode.
    pub cooldown: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            theta_deg: 60.0,
            window: 150,
            theta_accept: 70.0,
            horizon: 200,
            budget: 6,
            k_backups: 2,
            k_retrieve: 2,
            swap_latency: 10,
            cooldown: 100,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        let bad = |m: &str| Err(AdaptationError::Config(m.to_string()));
        if self.theta_accept.partial_cmp(&self.theta_deg) != Some(std::cmp::Ordering::Greater) {
            return bad("theta_accept must exceed theta_deg");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.budget == 0 {
            return bad("budget must be >= 1");
        }
        if self.swap_latency == 0 {
            return bad("swap_latency must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationDetector {
    pub theta_deg: f64,
    pub window: u64,
    pub armed: bool,
    pub consecutive_below: u64,
}

impl DegradationDetector {
    pub fn new(theta_deg: f64, window: u64) -> Self {
        Self {
            theta_deg,
            window,
            armed: true,
            consecutive_below: 0,
        }
    }

    /// Counts the frame and reports whether an armed detector fires.
    pub fn observe(&mut self, s_overall: f64) -> bool {
        if s_overall < self.theta_deg {
            self.consecutive_below += 1;
        } else {
            self.consecutive_below = 0;
        }
        self.armed && self.consecutive_below >= self.window
    }

    pub fn disarm(&mut self) {
        self.armed = false;
    }

    /// Re-arms with a fresh count.
    pub fn rearm(&mut self) {
        self.armed = true;
        self.consecutive_below = 0;
    }
}

/// Functional form of [`DegradationDetector::observe`].
pub fn detect(d: &DegradationDetector, score: &FormationScore) -> (DegradationDetector, bool) {
    let mut next = d.clone();
    let fired = next.observe(score.s_overall);
    (next, fired)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationCandidate {
    pub candidate_id: String,
    pub target_primitive: PrimitiveId,
    pub edits: Vec<Edit>,
    pub origin: CandidateOrigin,
    pub shadow_score: Option<f64>,
    pub verdict: Verdict,
    pub rationale: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupSummary {
    pub candidate_id: String,
    pub shadow_score: f64,
}

/// A ready-to-swap alternative mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Backup {
    pub candidate_id: String,
    pub mapping: Mapping,
    pub shadow_score: f64,
}

/// One line of the adaptation event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationOutcome {
    pub episode: u64,
    pub trigger_frame: u64,
    pub primitive: PrimitiveId,
    pub moderator: Option<String>,
    pub chosen: Option<AdaptationCandidate>,
    pub new_mapping_version: u64,
    pub validated: Vec<AdaptationCandidate>,
    pub wall_frames_spent: u64,
    /// Shadow score of the unchanged mapping.
    pub baseline_score: f64,
    pub backups: Vec<BackupSummary>,
    pub errors: Vec<String>,
    pub record_id: Option<usize>,
}

pub fn write_event<W: Write>(out: &mut W, o: &AdaptationOutcome) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(o).map_err(io::Error::other)?)
}

/// Run-level facts recorded with every episode.
#[derive(Debug, Clone)]
pub struct EnvContext<'a> {
    pub registry: &'a Registry,
    pub snippets: &'a SnippetRegistry,
    pub flags: AblationFlags,
    pub base_control: &'a ControlParams,
    pub scoring: &'a ScoringParams,
    pub scenario: &'a str,
    pub seed: u64,
    pub run_id: &'a str,
    pub episode: u64,
    /// Additional context entries copied into the record.
    pub extra: Map<String, Value>,
}

/// Result of one episode: the logged outcome plus what the live loop needs
/// to act on it.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: AdaptationOutcome,
    pub new_mapping: Option<Mapping>,
    pub backups: Vec<Backup>,
    pub record: ProvenanceRecord,
}

/// Scores `mapping` on a clone of `live` driven by an independent random
/// stream: mean `s_overall` over the final quarter of `horizon` frames.
/// Returns 0 if the mapping cannot be interpreted.
pub fn shadow_validate(
    live: &LoopState,
    mapping: &Mapping,
    horizon: usize,
    base: &ControlParams,
    p: &ScoringParams,
) -> f64 {
    let horizon = horizon.max(1);
    let mut shadow = live.clone();
    shadow.world.rng = live.world.rng.split(streams::SHADOW);
    let tail = (horizon / 4).max(1);
    let mut sum = 0.0;
    for t in 0..horizon {
        match shadow.step(mapping, base, p) {
            Ok(s) if t >= horizon - tail => sum += s.s_overall,
            Ok(_) => {}
            Err(_) => return 0.0,
        }
    }
    sum / tail as f64
}

/// Shadow scores for several mappings, computed in parallel, in input order.
pub fn shadow_validate_all(
    live: &LoopState,
    mappings: &[Mapping],
    horizon: usize,
    base: &ControlParams,
    p: &ScoringParams,
) -> Vec<f64> {
    std::thread::scope(|s| {
        let handles: Vec<_> = mappings
            .iter()
            .map(|m| s.spawn(move || shadow_validate(live, m, horizon, base, p)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("shadow thread")).collect()
    })
}

/// Index of the accepted candidate with the highest score; ties go to the
/// earlier (lower id) candidate.
pub fn argmax_accepted(candidates: &[AdaptationCandidate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.verdict != Verdict::Accepted {
            continue;
        }
        let s = c.shadow_score.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// The `k` best accepted candidates other than `chosen`, by score then id.
pub fn generate_backups(
    mapping: &Mapping,
    candidates: &[AdaptationCandidate],
    chosen: Option<&str>,
    k: usize,
    reg: &Registry,
) -> Vec<Backup> {
    let mut pool: Vec<&AdaptationCandidate> = candidates
        .iter()
        .filter(|c| c.verdict == Verdict::Accepted && Some(c.candidate_id.as_str()) != chosen)
        .collect();
    pool.sort_by(|a, b| {
        b.shadow_score
            .unwrap_or(0.0)
            .total_cmp(&a.shadow_score.unwrap_or(0.0))
            .then(a.candidate_id.cmp(&b.candidate_id))
    });
    pool.into_iter()
        .filter_map(|c| {
            let pipeline = mapping.pipeline(c.target_primitive).apply_edits(&c.edits, reg).ok()?;
            Some(Backup {
                candidate_id: c.candidate_id.clone(),
                mapping: mapping.with_pipeline(pipeline),
                shadow_score: c.shadow_score.unwrap_or(0.0),
            })
        })
        .take(k)
        .collect()
}

/// Raw values of the registry features, in registry order.
pub fn raw_features(live: &LoopState, primitive: PrimitiveId) -> Vec<f64> {
    let w = &live.world;
    vec![
        live.score_mean(),
        live.score_slope(),
        live.last_score.e_radius,
        live.last_score.sigma_height,
        w.infected_report_rate(),
        w.disturbance.wind_magnitude(),
        w.disturbance.rain_drag,
        (primitive == PrimitiveId::FormationControl) as u8 as f64,
        (primitive == PrimitiveId::Defend) as u8 as f64,
        live.frames_since_adaptation as f64,
    ]
}

/// Snippet tags implied by the current telemetry.
pub fn context_tags(live: &LoopState) -> Vec<String> {
    let w = &live.world;
    let mut tags = vec!["formation".to_string()];
    if w.disturbance.wind_magnitude() > 0.5 || w.disturbance.rain_drag > 0.0 {
        tags.extend(["storm", "wind"].map(String::from));
    }
    if w.infected_report_rate() > 0.05 || live.sustained_rate() > 0.0 {
        tags.extend(["adversarial", "outlier", "spoofing", "quarantine"].map(String::from));
    }
    tags
}

fn telemetry(
    live: &LoopState,
    mapping: &Mapping,
    primitive: PrimitiveId,
    env: &EnvContext,
    store: &ProvenanceStore,
    cfg: &AdaptConfig,
) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("scenario".into(), env.scenario.into());
    m.insert("seed".into(), env.seed.into());
    m.insert("run_id".into(), env.run_id.into());
    m.insert("episode".into(), env.episode.into());
    m.insert("frame".into(), live.world.frame.into());
    m.insert("mapping_version".into(), mapping.version.into());
    m.insert("n_aircraft".into(), live.world.n().into());
    m.insert("shadow_horizon".into(), cfg.horizon.into());
    m.insert("swap_latency".into(), cfg.swap_latency.into());
    m.insert("use_ek".into(), env.flags.use_ek.to_string().into());
    m.insert("use_pc".into(), env.flags.use_pc.to_string().into());
    m.insert("s_overall".into(), live.last_score.s_overall.into());
    if let Some(id) = live.world.last_reports.most_inconsistent() {
        m.insert("most_inconsistent_reporter".into(), id.into());
    }
    for (k, v) in &env.extra {
        m.insert(k.clone(), v.clone());
    }
    let raw = raw_features(live, primitive);
    for (name, v) in store.registry().names().zip(raw) {
        m.insert(name.to_string(), v.into());
    }
    m
}

/// Runs one adaptation episode against a snapshot of the live loop. The
/// snapshot is not modified. Moderators are tried in order.
pub fn run_adaptation(
    live: &LoopState,
    mapping: &Mapping,
    primitive: PrimitiveId,
    env: &EnvContext,
    store: &mut ProvenanceStore,
    moderators: &[&dyn Moderator],
    cfg: &AdaptConfig,
) -> Result<EpisodeResult, AdaptationError> {
    let reg = env.registry;
    let telemetry = telemetry(live, mapping, primitive, env, store, cfg);
    let features = store.registry().normalize(&raw_features(live, primitive));

    let retrieved_cases = if env.flags.use_pc {
        store
            .retrieve_similar(&features, cfg.k_retrieve)
            .into_iter()
            .filter_map(|(id, distance)| {
                Some(RetrievedCase {
                    record_id: id,
                    distance,
                    record: store.get(id)?.clone(),
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let expert_snippets = if env.flags.use_ek {
        env.snippets.snippets_for(primitive, &context_tags(live))
    } else {
        Vec::new()
    };
    let current = mapping.pipeline(primitive).clone();
    let req = ModeratorRequest {
        schema_version: SCHEMA_VERSION.to_string(),
        primitive,
        context: RequestContext {
            features,
            telemetry: telemetry.clone(),
        },
        current_pipeline: current.serialize(),
        retrieved_cases,
        expert_snippets,
        budget: cfg.budget,
    };

    let mut errors = Vec::new();
    let (proposals, moderator) = match synthesize_with_fallback(moderators, &req, reg) {
        Ok((resp, name)) => (resp.candidates, Some(name)),
        Err(errs) => {
            errors.extend(errs.into_iter().map(|(n, e)| format!("{n}: {e}")));
            (Vec::new(), None)
        }
    };

    let mut candidates = Vec::new();
    let mut mappings = vec![mapping.clone()];
    for (i, p) in proposals.into_iter().take(cfg.budget).enumerate() {
        let id = format!("c{i:02}");
        match current.apply_edits(&p.edits, reg) {
            Ok(after) => {
                mappings.push(mapping.with_pipeline(after));
                candidates.push(AdaptationCandidate {
                    candidate_id: id,
                    target_primitive: primitive,
                    edits: p.edits,
                    origin: p.origin,
                    shadow_score: None,
                    verdict: Verdict::Pending,
                    rationale: p.rationale,
                    confidence: p.confidence,
                });
            }
            Err(e) => errors.push(format!("{id}: {e}")),
        }
    }

    let scores = shadow_validate_all(live, &mappings, cfg.horizon, env.base_control, env.scoring);
    let baseline_score = scores[0];
    for (c, &s) in candidates.iter_mut().zip(&scores[1..]) {
        c.shadow_score = Some(s);
        c.verdict = if s >= cfg.theta_accept {
            Verdict::Accepted
        } else {
            Verdict::Rejected
        };
    }

    let chosen_idx = argmax_accepted(&candidates);
    let chosen = chosen_idx.map(|i| candidates[i].clone());
    let new_mapping = chosen_idx.map(|i| {
        let mut m = mappings[i + 1].clone();
        m.version = mapping.version + 1;
        m
    });
    let backups = generate_backups(
        mapping,
        &candidates,
        chosen.as_ref().map(|c| c.candidate_id.as_str()),
        cfg.k_backups,
        reg,
    );

    // The record describes the chosen candidate, or the best rejected one.
    let described = chosen_idx.or_else(|| {
        (0..candidates.len()).fold(None, |best: Option<usize>, i| match best {
            Some(b) if candidates[b].shadow_score >= candidates[i].shadow_score => Some(b),
            _ => Some(i),
        })
    });
    let record = build_record(&record::RecordInput {
        live,
        primitive,
        before: &current,
        after: described.map(|i| mappings[i + 1].pipeline(primitive)),
        candidate: described.map(|i| &candidates[i]),
        deployed: chosen.is_some(),
        baseline_score,
        telemetry,
        cfg,
        env,
        store_version: store.registry().version.as_str(),
    });
    let record_id = store.append(&record)?;

    let outcome = AdaptationOutcome {
        episode: env.episode,
        trigger_frame: live.world.frame,
        primitive,
        moderator,
        new_mapping_version: new_mapping.as_ref().map_or(mapping.version, |m| m.version),
        chosen,
        validated: candidates,
        wall_frames_spent: cfg.swap_latency,
        baseline_score,
        backups: backups
            .iter()
            .map(|b| BackupSummary {
                candidate_id: b.candidate_id.clone(),
                shadow_score: b.shadow_score,
            })
            .collect(),
        errors,
        record_id: Some(record_id),
    };
    Ok(EpisodeResult {
        outcome,
        new_mapping,
        backups,
        record,
    })
}
