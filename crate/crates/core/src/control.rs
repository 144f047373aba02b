//! Live control-loop state: the world plus the short telemetry history the
//! meta-policy, guards and context features read.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::metaagent::DEFEND_HYSTERESIS;
use crate::programs::{Mapping, MetaObservation, ProgramError};
use crate::scoring::{compute_score, FormationScore, ScoreError, ScoringParams};
use crate::world::{ControlParams, WorldState};

/// Frames of score history kept for context features.
pub const SCORE_HISTORY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub world: WorldState,
    pub last_score: FormationScore,
    pub recent_scores: VecDeque<f64>,
    pub recent_rates: VecDeque<f64>,
    pub frames_since_adaptation: u64,
}

impl LoopState {
    pub fn new(world: WorldState, p: &ScoringParams) -> Result<Self, ScoreError> {
        let last_score = compute_score(&world, p)?;
        let mut recent_scores = VecDeque::with_capacity(SCORE_HISTORY);
        recent_scores.push_back(last_score.s_overall);
        Ok(Self {
            world,
            last_score,
            recent_scores,
            recent_rates: VecDeque::with_capacity(DEFEND_HYSTERESIS),
            frames_since_adaptation: 0,
        })
    }

    /// Minimum infected-report rate over the hysteresis window, zero until
    /// the window has filled.
    pub fn sustained_rate(&self) -> f64 {
        if self.recent_rates.len() < DEFEND_HYSTERESIS {
            return 0.0;
        }
        self.recent_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn observation(&self) -> MetaObservation {
        MetaObservation {
            s_overall: self.last_score.s_overall,
            e_radius: self.last_score.e_radius,
            sigma_height: self.last_score.sigma_height,
            infected_report_rate: self.world.infected_report_rate(),
            infected_report_rate_sustained: self.sustained_rate(),
            frames_since_adaptation: self.frames_since_adaptation,
        }
    }

    /// Interprets both pipelines against the current observation, steps the
    /// world and scores the result.
    pub fn step(
        &mut self,
        mapping: &Mapping,
        base: &ControlParams,
        p: &ScoringParams,
    ) -> Result<FormationScore, StepError> {
        let (control, defend) = mapping.effects(base, &self.observation())?;
        self.world.advance(&control, &defend);
        let score = compute_score(&self.world, p)?;
        push_capped(&mut self.recent_scores, score.s_overall, SCORE_HISTORY);
        push_capped(
            &mut self.recent_rates,
            self.world.infected_report_rate(),
            DEFEND_HYSTERESIS,
        );
        self.frames_since_adaptation += 1;
        self.last_score = score.clone();
        Ok(score)
    }

    pub fn score_mean(&self) -> f64 {
        let n = self.recent_scores.len().max(1) as f64;
        self.recent_scores.iter().sum::<f64>() / n
    }

    /// Least-squares slope of the recent scores per frame.
    pub fn score_slope(&self) -> f64 {
        let n = self.recent_scores.len();
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        let mean_x = (nf - 1.0) / 2.0;
        let mean_y = self.score_mean();
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in self.recent_scores.iter().enumerate() {
            let dx = i as f64 - mean_x;
            sxy += dx * (y - mean_y);
            sxx += dx * dx;
        }
        sxy / sxx
    }
}

fn push_capped(q: &mut VecDeque<f64>, v: f64, cap: usize) {
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(v);
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}
