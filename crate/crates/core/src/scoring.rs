//! Composite formation score.
//!
//! `s_radius = max(0, 100 - beta * e_radius)`, `s_height = max(0, 100 - gamma * sigma_height)`
//! and `s_overall` is their mean. `e_radius` is the absolute error between the
//! mean horizontal distance to the formation center and the target radius;
//! `sigma_height` is the population standard deviation of altitudes.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::world::{FormationTarget, WorldState};

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("scoring needs at least 2 aircraft, got {0}")]
    TooFewAircraft(usize),
    #[error("invalid scoring parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self { beta: 0.2, gamma: 1.0 }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ScoreError::InvalidParams("beta must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ScoreError::InvalidParams("gamma must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationScore {
    pub frame: u64,
    pub s_radius: f64,
    pub s_height: f64,
    pub s_overall: f64,
    pub e_radius: f64,
    pub sigma_height: f64,
    /// Mean of per-aircraft absolute radius errors (auxiliary, not scored).
    pub e_radius_mean_abs: f64,
}

/// Scores raw positions against a target.
pub fn score_positions(
    frame: u64,
    positions: &[Vec3],
    target: &FormationTarget,
    p: &ScoringParams,
) -> Result<FormationScore, ScoreError> {
    let n = positions.len();
    if n < 2 {
        return Err(ScoreError::TooFewAircraft(n));
    }
    let nf = n as f64;
    let dists: Vec<f64> = positions.iter().map(|x| (*x - target.center).xy().norm()).collect();
    let mean_dist = dists.iter().sum::<f64>() / nf;
    let e_radius = (mean_dist - target.radius).abs();
    let e_radius_mean_abs = dists.iter().map(|d| (d - target.radius).abs()).sum::<f64>() / nf;

    let mean_z = positions.iter().map(|x| x.z).sum::<f64>() / nf;
    let var_z = positions.iter().map(|x| (x.z - mean_z).powi(2)).sum::<f64>() / nf;
    let sigma_height = var_z.sqrt();

    let s_radius = (100.0 - p.beta * e_radius).max(0.0);
    let s_height = (100.0 - p.gamma * sigma_height).max(0.0);
    Ok(FormationScore {
        frame,
        s_radius,
        s_height,
        s_overall: (s_radius + s_height) / 2.0,
        e_radius,
        sigma_height,
        e_radius_mean_abs,
    })
}

pub fn compute_score(w: &WorldState, p: &ScoringParams) -> Result<FormationScore, ScoreError> {
    let positions: Vec<Vec3> = w.aircraft.iter().map(|a| a.position).collect();
    score_positions(w.frame, &positions, &w.target, p)
}

/// Radius error as a percentage of the target radius.
pub fn radius_deviation_pct(w: &WorldState) -> f64 {
    let n = w.aircraft.len().max(1) as f64;
    let mean = w
        .aircraft
        .iter()
        .map(|a| (a.position - w.target.center).xy().norm())
        .sum::<f64>()
        / n;
    100.0 * (mean - w.target.radius).abs() / w.target.radius
}

/// True iff the last `window_c` scores all reach `theta_c`.
pub fn consensus_reached(history: &[FormationScore], theta_c: f64, window_c: usize) -> bool {
    if window_c == 0 || history.len() < window_c {
        return false;
    }
    history[history.len() - window_c..]
        .iter()
        .all(|s| s.s_overall >= theta_c)
}

pub const SCORE_HEADER: &str = "frame,s_radius,s_height,s_overall,e_radius,sigma_height";

pub fn write_score_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{SCORE_HEADER}")
}

pub fn write_score_row<W: Write>(out: &mut W, s: &FormationScore) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{}",
        s.frame, s.s_radius, s.s_height, s.s_overall, s.e_radius, s.sigma_height
    )
}

/// Parses a score CSV written by [`write_score_row`].
pub fn read_score_log(text: &str) -> Result<Vec<FormationScore>, String> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != SCORE_HEADER {
                return Err("line 1: unexpected score header".into());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(format!("line {}: expected 6 columns", idx + 1));
        }
        let f = |k: usize| -> Result<f64, String> {
            cols[k]
                .parse::<f64>()
                .map_err(|e| format!("line {}, column {}: {e}", idx + 1, k + 1))
        };
        out.push(FormationScore {
            frame: cols[0]
                .parse()
                .map_err(|e| format!("line {}, column 1: {e}", idx + 1))?,
            s_radius: f(1)?,
            s_height: f(2)?,
            s_overall: f(3)?,
            e_radius: f(4)?,
            sigma_height: f(5)?,
            e_radius_mean_abs: f64::NAN,
        });
    }
    Ok(out)
}
