//! Scenario runner, ablation driver, offline rescoring and replay.
//!
//! A run writes five files under its output directory:
//!
//! | file | content |
//! |---|---|
//! | `frames.csv` | one row per aircraft per frame, frame 0 included |
//! | `scores.csv` | one score row per simulated frame |
//! | `adaptations.jsonl` | one adaptation outcome per episode |
//! | `provenance.jsonl` | provenance records (shared across rounds in ablations) |
//! | `summary.json` | run summary, recomputable from the files above |

mod ablation;
mod config;
mod replay;
mod summary;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::adaptation::{run_adaptation, write_event, AdaptationOutcome, DegradationDetector, EnvContext};
use crate::control::LoopState;
use crate::metaagent::MetaPolicy;
use crate::moderator::{ExternalModerator, Moderator, ScriptedModerator};
use crate::programs::{Mapping, Pipeline, PrimitiveId, Registry};
use crate::provenance::{FeatureRegistry, ProvenanceStore, SnippetRegistry};
use crate::scoring::{write_score_header, write_score_row, FormationScore};
use crate::world::{init_world, write_frame_header, write_frame_rows};

pub use ablation::{run_ablation, AblationConfig, AblationRow, AblationTable};
pub use config::{ModeratorConfig, ModeratorKind, ScenarioConfig};
pub use replay::{replay, replay_record, rerun_with_recorded_swaps, ReplayError, ReplayReport};
pub use summary::{recompute_summary, rescore_frames, summarize, RunSummary, CONSENSUS_THETA, CONSENSUS_WINDOW};

pub const FRAMES_FILE: &str = "frames.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const ADAPTATIONS_FILE: &str = "adaptations.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{file}: field `{field}`: {message}")]
    Config {
        file: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn config(file: &str, field: &str, message: impl Into<String>) -> Self {
        HarnessError::Config {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for configuration errors, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out_dir: Option<PathBuf>,
    pub frames_csv: Option<PathBuf>,
    pub scores_csv: Option<PathBuf>,
    pub adaptations_jsonl: Option<PathBuf>,
    pub provenance_jsonl: Option<PathBuf>,
    pub summary: RunSummary,
    pub scores: Vec<FormationScore>,
    pub outcomes: Vec<AdaptationOutcome>,
    pub first_trigger_frame: Option<u64>,
    pub final_mapping: Mapping,
}

/// A pipeline swap applied at a frame boundary during replays.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledSwap {
    pub frame: u64,
    pub pipeline: Pipeline,
}

pub(crate) struct Sinks {
    pub frames: Box<dyn Write>,
    pub scores: Box<dyn Write>,
    pub events: Box<dyn Write>,
}

impl Sinks {
    pub fn discard() -> Self {
        Self {
            frames: Box::new(io::sink()),
            scores: Box::new(io::sink()),
            events: Box::new(io::sink()),
        }
    }

    fn to_dir(dir: &Path) -> Result<Self, HarnessError> {
        let open = |name: &str| -> Result<Box<dyn Write>, HarnessError> {
            let p = dir.join(name);
            Ok(Box::new(BufWriter::new(
                File::create(&p).map_err(|e| HarnessError::io(&p, e))?,
            )))
        };
        Ok(Self {
            frames: open(FRAMES_FILE)?,
            scores: open(SCORES_FILE)?,
            events: open(ADAPTATIONS_FILE)?,
        })
    }

    fn flush(&mut self) -> io::Result<()> {
        self.frames.flush()?;
        self.scores.flush()?;
        self.events.flush()
    }
}

pub(crate) enum Plan<'a> {
    /// Adapt when the detector fires.
    Live {
        store: &'a mut ProvenanceStore,
        moderators: Vec<&'a dyn Moderator>,
        snippets: &'a SnippetRegistry,
        run_id: String,
    },
    /// No adaptation; apply recorded swaps and optionally stop early.
    Scripted {
        swaps: Vec<(PrimitiveId, ScheduledSwap)>,
        stop_at: Option<u64>,
    },
}

pub(crate) struct DriveResult {
    pub state: LoopState,
    pub mapping: Mapping,
    pub scores: Vec<FormationScore>,
    pub outcomes: Vec<AdaptationOutcome>,
    pub first_trigger_frame: Option<u64>,
}

fn runtime<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// The live control loop: meta-policy, pipelines, step, score, detector,
/// and adaptation episodes with delayed swaps.
pub(crate) fn drive(cfg: &ScenarioConfig, mut plan: Plan, sinks: &mut Sinks) -> Result<DriveResult, HarnessError> {
    let reg = Registry::builtin();
    let world =
        init_world(&cfg.world, cfg.seed).map_err(|e| HarnessError::config("scenario", "world", e.to_string()))?;
    let mut state = LoopState::new(world, &cfg.scoring).map_err(runtime)?;
    let mut mapping = Mapping::initial(reg);
    let policy = cfg.policy.clone().unwrap_or_else(MetaPolicy::default_policy);
    let adapt = &cfg.adapt;
    let mut detector = DegradationDetector::new(adapt.theta_deg, adapt.window);
    let mut pending: Option<(u64, Mapping)> = None;
    let mut rearm_at: Option<u64> = None;
    let mut episode = 0u64;
    let mut scores = Vec::with_capacity(cfg.eval_window as usize);
    let mut outcomes = Vec::new();
    let mut first_trigger_frame = None;

    let io_err = |e: io::Error| HarnessError::Runtime(format!("log write failed: {e}"));
    write_frame_header(&mut sinks.frames).map_err(io_err)?;
    write_frame_rows(&mut sinks.frames, &state.world).map_err(io_err)?;
    write_score_header(&mut sinks.scores).map_err(io_err)?;

    while state.world.frame < cfg.eval_window {
        let t = state.world.frame;
        if let Plan::Scripted {
            stop_at: Some(stop), ..
        } = &plan
        {
            if t >= *stop {
                break;
            }
        }
        if pending.as_ref().is_some_and(|(at, _)| *at == t) {
            mapping = pending.take().expect("pending swap").1;
            state.frames_since_adaptation = 0;
            detector.rearm();
        }
        if rearm_at == Some(t) {
            rearm_at = None;
            detector.rearm();
        }
        if let Plan::Scripted { swaps, .. } = &plan {
            for (primitive, s) in swaps.iter().filter(|(_, s)| s.frame == t) {
                debug_assert_eq!(*primitive, s.pipeline.primitive);
                mapping = mapping.with_pipeline(s.pipeline.clone());
                mapping.version += 1;
                state.frames_since_adaptation = 0;
            }
        }

        let score = state.step(&mapping, &cfg.control, &cfg.scoring).map_err(runtime)?;
        write_frame_rows(&mut sinks.frames, &state.world).map_err(io_err)?;
        write_score_row(&mut sinks.scores, &score).map_err(io_err)?;
        scores.push(score.clone());

        if !detector.observe(score.s_overall) {
            continue;
        }
        detector.disarm();
        first_trigger_frame.get_or_insert(state.world.frame);
        let Plan::Live {
            store,
            moderators,
            snippets,
            run_id,
        } = &mut plan
        else {
            continue;
        };
        if !adapt.enabled {
            continue;
        }
        episode += 1;
        let primitive = policy.select(&state.observation());
        let mut extra = Map::new();
        if let Some(f) = &cfg.source_file {
            extra.insert("scenario_file".into(), Value::String(f.clone()));
        }
        let env = EnvContext {
            registry: reg,
            snippets,
            flags: cfg.flags,
            base_control: &cfg.control,
            scoring: &cfg.scoring,
            scenario: &cfg.scenario_id,
            seed: cfg.seed,
            run_id,
            episode,
            extra,
        };
        let res = run_adaptation(&state, &mapping, primitive, &env, store, moderators, adapt).map_err(runtime)?;
        write_event(&mut sinks.events, &res.outcome).map_err(io_err)?;
        match res.new_mapping {
            Some(m) => pending = Some((state.world.frame + adapt.swap_latency, m)),
            None => rearm_at = Some(state.world.frame + adapt.cooldown),
        }
        outcomes.push(res.outcome);
    }
    sinks.flush().map_err(io_err)?;
    Ok(DriveResult {
        state,
        mapping,
        scores,
        outcomes,
        first_trigger_frame,
    })
}

/// Identifier tying provenance records to one run.
pub fn run_id(cfg: &ScenarioConfig) -> String {
    format!("{}-seed{}-mod{}", cfg.scenario_id, cfg.seed, cfg.moderator.seed)
}

/// Runs a scenario with an in-memory provenance store, or one at
/// `out/provenance.jsonl` when `out` is given.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RunReport, HarnessError> {
    let features = FeatureRegistry::builtin();
    let mut store = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            let p = dir.join(PROVENANCE_FILE);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
            }
            ProvenanceStore::open(&p, features).map_err(runtime)?
        }
        None => ProvenanceStore::in_memory(features),
    };
    let snippets = SnippetRegistry::builtin();
    run_scenario_with(cfg, out, &mut store, &snippets, &run_id(cfg))
}

/// Runs a scenario against a caller-owned provenance store and snippet
/// registry (ablations share them across rounds).
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    out: Option<&Path>,
    store: &mut ProvenanceStore,
    snippets: &SnippetRegistry,
    run_id: &str,
) -> Result<RunReport, HarnessError> {
    cfg.validate("scenario")?;
    let mut sinks = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            Sinks::to_dir(dir)?
        }
        None => Sinks::discard(),
    };
    let scripted = ScriptedModerator {
        flags: cfg.flags,
        seed: cfg.moderator.seed,
    };
    let external = match cfg.moderator.kind {
        ModeratorKind::External => Some(ExternalModerator::new(cfg.moderator.external_config()?)),
        ModeratorKind::Scripted => None,
    };
    let mut moderators: Vec<&dyn Moderator> = Vec::new();
    if let Some(e) = &external {
        moderators.push(e);
    }
    moderators.push(&scripted);

    let res = drive(
        cfg,
        Plan::Live {
            store,
            moderators,
            snippets,
            run_id: run_id.to_string(),
        },
        &mut sinks,
    )?;
    drop(sinks);

    let positions: Vec<_> = res.state.world.aircraft.iter().map(|a| a.position).collect();
    let n_adaptations = res.outcomes.iter().filter(|o| o.chosen.is_some()).count();
    let summary = summarize(
        &res.scores,
        &positions,
        &res.state.world.target,
        n_adaptations,
        &cfg.adapt,
    );
    if let Some(dir) = out {
        let p = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&summary).map_err(runtime)?;
        fs::write(&p, text + "\n").map_err(|e| HarnessError::io(&p, e))?;
    }
    let file = |name: &str| out.map(|d| d.join(name));
    Ok(RunReport {
        out_dir: out.map(Path::to_path_buf),
        frames_csv: file(FRAMES_FILE),
        scores_csv: file(SCORES_FILE),
        adaptations_jsonl: file(ADAPTATIONS_FILE),
        provenance_jsonl: store.path().map(Path::to_path_buf),
        summary,
        scores: res.scores,
        outcomes: res.outcomes,
        first_trigger_frame: res.first_trigger_frame,
        final_mapping: res.mapping,
    })
}
