//! Run summaries, computed live and recomputed from the written logs.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, ScenarioConfig, ADAPTATIONS_FILE, FRAMES_FILE, SCORES_FILE};
use crate::adaptation::{AdaptConfig, AdaptationOutcome, DegradationDetector};
use crate::geom::Vec3;
use crate::scoring::{consensus_reached, read_score_log, score_positions, FormationScore, ScoringParams};
use crate::world::{read_frame_log, FormationTarget, FrameRow};

/// Consensus: `s_overall >= 80` over the final 50 frames.
pub const CONSENSUS_THETA: f64 = 80.0;
pub const CONSENSUS_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_s_overall: f64,
    pub mean_s_overall_last_quarter: f64,
    pub radius_deviation_pct: f64,
    pub n_adaptations: usize,
    pub consensus_reached: bool,
    /// Frame at which the degradation detector first fired.
    pub first_trigger_frame: Option<u64>,
}

fn deviation_pct(positions: &[Vec3], center: Vec3, radius: f64) -> f64 {
    let n = positions.len().max(1) as f64;
    let mean = positions.iter().map(|p| (*p - center).xy().norm()).sum::<f64>() / n;
    100.0 * (mean - radius).abs() / radius
}

fn first_trigger(scores: &[FormationScore], adapt: &AdaptConfig) -> Option<u64> {
    let mut d = DegradationDetector::new(adapt.theta_deg, adapt.window);
    scores.iter().find(|s| d.observe(s.s_overall)).map(|s| s.frame)
}

pub fn summarize(
    scores: &[FormationScore],
    final_positions: &[Vec3],
    target: &FormationTarget,
    n_adaptations: usize,
    adapt: &AdaptConfig,
) -> RunSummary {
    let tail = (scores.len() / 4).max(1).min(scores.len());
    let last_quarter = &scores[scores.len() - tail..];
    RunSummary {
        final_s_overall: scores.last().map_or(0.0, |s| s.s_overall),
        mean_s_overall_last_quarter: if tail == 0 {
            0.0
        } else {
            last_quarter.iter().map(|s| s.s_overall).sum::<f64>() / tail as f64
        },
        radius_deviation_pct: deviation_pct(final_positions, target.center, target.radius),
        n_adaptations,
        consensus_reached: consensus_reached(scores, CONSENSUS_THETA, CONSENSUS_WINDOW),
        first_trigger_frame: first_trigger(scores, adapt),
    }
}

/// Rebuilds the summary of a finished run from its output directory.
pub fn recompute_summary(dir: &Path, cfg: &ScenarioConfig) -> Result<RunSummary, HarnessError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))
    };
    let scores = read_score_log(&read(SCORES_FILE)?).map_err(HarnessError::Runtime)?;
    let frames_path = dir.join(FRAMES_FILE);
    let file = fs::File::open(&frames_path).map_err(|e| HarnessError::io(&frames_path, e))?;
    let rows = read_frame_log(BufReader::new(file)).map_err(HarnessError::Runtime)?;
    let last = rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let positions: Vec<Vec3> = rows.iter().filter(|r| r.frame == last).map(|r| r.position).collect();
    let mut n_adaptations = 0;
    for line in read(ADAPTATIONS_FILE)?.lines().filter(|l| !l.trim().is_empty()) {
        let o: AdaptationOutcome = serde_json::from_str(line).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        n_adaptations += usize::from(o.chosen.is_some());
    }
    let target = cfg.world.target.to_target(cfg.world.n_aircraft);
    Ok(summarize(&scores, &positions, &target, n_adaptations, &cfg.adapt))
}

/// Scores every frame of a frame log offline.
pub fn rescore_frames(
    rows: &[FrameRow],
    target: &FormationTarget,
    p: &ScoringParams,
) -> Result<Vec<FormationScore>, String> {
    let mut frames: Vec<u64> = rows.iter().map(|r| r.frame).collect();
    frames.dedup();
    frames.sort_unstable();
    frames.dedup();
    frames
        .into_iter()
        .map(|f| {
            let pos: Vec<Vec3> = rows.iter().filter(|r| r.frame == f).map(|r| r.position).collect();
            score_positions(f, &pos, target, p).map_err(|e| format!("frame {f}: {e}"))
        })
        .collect()
}
