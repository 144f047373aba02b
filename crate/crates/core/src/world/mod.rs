//! Deterministic discrete-time swarm simulator.
//!
//! Aircraft follow a weighted sum of four steering behaviors (separation,
//! cohesion, alignment, goal-seeking toward an assigned slot on a circular
//! formation). Neighbors are only known through broadcast reports, which
//! infected aircraft corrupt. The world optionally carries a storm (base
//! wind, per-aircraft Ornstein-Uhlenbeck gusts, rain drag) or an adversarial
//! infection process.

mod config;
mod framelog;
mod observe;

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::programs::DefendEffects;
use crate::rng::SimRng;

pub use config::{DisturbanceConfig, SpawnConfig, TargetConfig, WorldConfig};
pub use framelog::{read_frame_log, write_frame_header, write_frame_rows, FrameRow};
pub use observe::{observed_neighbors, raw_reports, NeighborReport, FLAG_Z, KINEMATIC_TOLERANCE};

/// Characteristic distance below which goal-seeking slows down proportionally.
pub const GOAL_SLOWING_RADIUS: f64 = 50.0;
/// Spoofed position jitter, as a fraction of the spoof offset scale.
pub const SPOOF_JITTER: f64 = 0.25;
/// Vertical component of the spoof bias direction before normalization.
pub const SPOOF_VERTICAL_BIAS: f64 = 0.5;
/// Spoofed velocity offset per meter of spoof offset scale.
pub const SPOOF_VELOCITY_RATIO: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid world config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aircraft {
    pub id: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    pub slot_angle: f64,
    pub infected: bool,
    pub malicious: bool,
    /// Peer trust; absent entries mean full trust.
    #[serde(default)]
    pub trust_weights: BTreeMap<usize, f64>,
}

impl Aircraft {
    pub fn trust_in(&self, peer: usize) -> f64 {
        self.trust_weights.get(&peer).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationTarget {
    pub center: Vec3,
    pub radius: f64,
    pub height: f64,
    pub n_slots: usize,
}

impl FormationTarget {
    pub fn slot_angle(&self, i: usize) -> f64 {
        TAU * i as f64 / self.n_slots as f64
    }

    /// World position of a slot at `angle` (radians).
    pub fn slot_position(&self, angle: f64) -> Vec3 {
        Vec3::new(
            self.center.x + self.radius * angle.cos(),
            self.center.y + self.radius * angle.sin(),
            self.height,
        )
    }
}

/// Flocking weights, interaction radii and kinematic bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub w_sep: f64,
    pub w_coh: f64,
    pub w_align: f64,
    pub w_goal: f64,
    pub r_sep: f64,
    pub r_coh: f64,
    pub r_comm: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Rotation applied to every slot angle (radians).
    #[serde(default)]
    pub slot_phase: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            w_sep: 1.0,
            w_coh: 1.0,
            w_align: 0.5,
            w_goal: 1.0,
            r_sep: 60.0,
            r_coh: 350.0,
            r_comm: 350.0,
            v_max: 5.0,
            a_max: 1.0,
            slot_phase: 0.0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            ("w_sep", self.w_sep),
            ("w_coh", self.w_coh),
            ("w_align", self.w_align),
            ("w_goal", self.w_goal),
            ("r_sep", self.r_sep),
            ("r_coh", self.r_coh),
            ("r_comm", self.r_comm),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("slot_phase", self.slot_phase),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(ConfigError::invalid(name, "must be finite"));
            }
        }
        for (name, v) in &all[..4] {
            if *v < 0.0 {
                return Err(ConfigError::invalid(name, "weight must be >= 0"));
            }
        }
        if !(self.r_sep > 0.0 && self.r_sep <= self.r_coh && self.r_coh <= self.r_comm) {
            return Err(ConfigError::invalid(
                "r_sep",
                "radii must satisfy 0 < r_sep <= r_coh <= r_comm",
            ));
        }
        if self.v_max <= 0.0 {
            return Err(ConfigError::invalid("v_max", "must be > 0"));
        }
        if self.a_max <= 0.0 {
            return Err(ConfigError::invalid("a_max", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceKind {
    None,
    Storm,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceState {
    pub kind: DisturbanceKind,
    /// Constant wind acceleration, m/frame².
    pub wind_base: Vec3,
    /// One Ornstein-Uhlenbeck gust state per aircraft, m/frame².
    pub gust: Vec<Vec3>,
    pub gust_theta: f64,
    pub gust_sigma: f64,
    pub rain_drag: f64,
    pub p_infect: f64,
    pub spoof_offset_scale: f64,
}

impl DisturbanceState {
    pub fn wind_at(&self, i: usize) -> Vec3 {
        self.wind_base + self.gust.get(i).copied().unwrap_or(Vec3::ZERO)
    }

    /// Magnitude of the mean wind over all aircraft.
    pub fn wind_magnitude(&self) -> f64 {
        if self.gust.is_empty() {
            return self.wind_base.norm();
        }
        let mut acc = Vec3::ZERO;
        for g in &self.gust {
            acc += *g;
        }
        (self.wind_base + acc / self.gust.len() as f64).norm()
    }
}

/// State broadcast by one aircraft in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Report-consistency statistics gathered while stepping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportStats {
    pub total: usize,
    pub flagged: usize,
    /// Largest kinematic z-score seen from each sender.
    pub max_z_by_sender: Vec<f64>,
}

impl ReportStats {
    pub fn flagged_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.flagged as f64 / self.total as f64
        }
    }

    /// Sender with the largest z-score, if any report was inconsistent.
    pub fn most_inconsistent(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (id, &z) in self.max_z_by_sender.iter().enumerate() {
            if z >= FLAG_Z && best.is_none_or(|(_, bz)| z > bz) {
                best = Some((id, z));
            }
        }
        best.map(|(id, _)| id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub frame: u64,
    pub aircraft: Vec<Aircraft>,
    pub target: FormationTarget,
    pub disturbance: DisturbanceState,
    pub rng: SimRng,
    /// Broadcasts describing the current frame.
    pub broadcasts: Vec<Broadcast>,
    /// Broadcasts of the previous frame, used for kinematic consistency.
    pub prev_broadcasts: Option<Vec<Broadcast>>,
    /// Statistics from the most recent step.
    pub last_reports: ReportStats,
}

/// Builds the initial world for a validated configuration.
pub fn init_world(cfg: &WorldConfig, seed: u64) -> Result<WorldState, ConfigError> {
    cfg.validate()?;
    let n = cfg.n_aircraft;
    let target = cfg.target.to_target(n);
    let mut rng = SimRng::from_seed(seed);
    let mut aircraft = Vec::with_capacity(n);
    for id in 0..n {
        let position = match &cfg.spawn.positions {
            Some(list) => list[id],
            None => Vec3::new(
                rng.uniform_range(cfg.spawn.min.x, cfg.spawn.max.x),
                rng.uniform_range(cfg.spawn.min.y, cfg.spawn.max.y),
                rng.uniform_range(cfg.spawn.min.z, cfg.spawn.max.z),
            ),
        };
        let malicious = cfg.malicious_ids.contains(&id);
        aircraft.push(Aircraft {
            id,
            position,
            velocity: Vec3::ZERO,
            slot_angle: target.slot_angle(id),
            infected: malicious,
            malicious,
            trust_weights: BTreeMap::new(),
        });
    }
    let d = &cfg.disturbance;
    let disturbance = DisturbanceState {
        kind: d.kind,
        wind_base: d.wind_base,
        gust: vec![Vec3::ZERO; n],
        gust_theta: d.gust_theta,
        gust_sigma: d.gust_sigma,
        rain_drag: d.rain_drag,
        p_infect: d.p_infect,
        spoof_offset_scale: d.spoof_offset_scale,
    };
    let mut w = WorldState {
        frame: 0,
        aircraft,
        target,
        disturbance,
        rng,
        broadcasts: Vec::new(),
        prev_broadcasts: None,
        last_reports: ReportStats {
            total: 0,
            flagged: 0,
            max_z_by_sender: vec![0.0; n],
        },
    };
    w.broadcasts = w.compute_broadcasts();
    Ok(w)
}

/// Functional step: returns the successor state, leaving `w` untouched.
pub fn step(w: &WorldState, control: &ControlParams, defend: &DefendEffects) -> WorldState {
    let mut next = w.clone();
    next.advance(control, defend);
    next
}

/// Combined steering for one aircraft, before wind and clipping.
pub(crate) fn steering(own: &Aircraft, reports: &[NeighborReport], control: &ControlParams, slot: Vec3) -> Vec3 {
    let x = own.position;
    let v = own.velocity;

    let mut sep = Vec3::ZERO;
    let mut coh_sum = Vec3::ZERO;
    let mut coh_w = 0.0;
    let mut vel_sum = Vec3::ZERO;
    let mut vel_w = 0.0;
    for r in reports {
        if r.weight <= 0.0 {
            continue;
        }
        let delta = x - r.position;
        let d2 = delta.norm_sq();
        let d = d2.sqrt();
        if d < control.r_sep && d2 > 0.0 {
            sep += delta * (r.weight / d2);
        }
        if d <= control.r_coh {
            coh_sum += r.position * r.weight;
            coh_w += r.weight;
        }
        vel_sum += r.velocity * r.weight;
        vel_w += r.weight;
    }

    let sep = (sep * control.r_sep).clamp_norm(1.0);
    let coh = if coh_w > 0.0 {
        ((coh_sum / coh_w - x) / control.r_coh).clamp_norm(1.0)
    } else {
        Vec3::ZERO
    };
    let align = if vel_w > 0.0 {
        ((vel_sum / vel_w - v) / control.v_max).clamp_norm(1.0)
    } else {
        Vec3::ZERO
    };
    let offset = slot - x;
    let desired = offset * (control.v_max / offset.norm().max(GOAL_SLOWING_RADIUS));
    let goal = ((desired - v) / control.v_max).clamp_norm(1.0);

    sep * control.w_sep + coh * control.w_coh + align * control.w_align + goal * control.w_goal
}

impl WorldState {
    pub fn n(&self) -> usize {
        self.aircraft.len()
    }

    pub fn slot_of(&self, i: usize, control: &ControlParams) -> Vec3 {
        self.target
            .slot_position(self.aircraft[i].slot_angle + control.slot_phase)
    }

    pub fn infected_count(&self) -> usize {
        self.aircraft.iter().filter(|a| a.infected).count()
    }

    /// Fraction of neighbor reports flagged inconsistent during the last step.
    pub fn infected_report_rate(&self) -> f64 {
        self.last_reports.flagged_rate()
    }

    /// Bias direction of a spoofing sender: inward and up or down by parity.
    fn spoof_bias(&self, j: usize) -> Vec3 {
        let radial = (self.aircraft[j].position - self.target.center).xy().normalized();
        let vertical = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        let b = -radial + Vec3::Z * (vertical * SPOOF_VERTICAL_BIAS);
        let b = b.normalized();
        if b == Vec3::ZERO {
            Vec3::Z * vertical
        } else {
            b
        }
    }

    /// Broadcasts for the current frame. Draws jitter only for infected senders.
    fn compute_broadcasts(&mut self) -> Vec<Broadcast> {
        let scale = self.disturbance.spoof_offset_scale;
        let mut out = Vec::with_capacity(self.n());
        for j in 0..self.n() {
            let a = &self.aircraft[j];
            let (pos, vel) = (a.position, a.velocity);
            if a.infected && scale > 0.0 {
                let bias = self.spoof_bias(j);
                let jitter = Vec3::new(
                    self.rng.standard_normal(),
                    self.rng.standard_normal(),
                    self.rng.standard_normal(),
                );
                let offset = (bias + jitter * SPOOF_JITTER) * scale;
                let offset = if offset == Vec3::ZERO { bias * scale } else { offset };
                out.push(Broadcast {
                    position: pos + offset,
                    velocity: vel + bias * (scale * SPOOF_VELOCITY_RATIO),
                });
            } else {
                out.push(Broadcast {
                    position: pos,
                    velocity: vel,
                });
            }
        }
        out
    }

    /// Advances one frame in place.
    pub fn advance(&mut self, control: &ControlParams, defend: &DefendEffects) {
        let n = self.n();

        let mut stats = ReportStats {
            total: 0,
            flagged: 0,
            max_z_by_sender: vec![0.0; n],
        };
        let mut per_receiver = Vec::with_capacity(n);
        let mut trust_hits: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            let raw = raw_reports(self, i, control);
            for r in &raw {
                stats.total += 1;
                if r.flagged {
                    stats.flagged += 1;
                    trust_hits.push((i, r.id));
                }
                if r.z > stats.max_z_by_sender[r.id] {
                    stats.max_z_by_sender[r.id] = r.z;
                }
            }
            per_receiver.push(observe::apply_defend(self, i, raw, defend));
        }
        if let Some(sigma) = defend.weight_noise_sigma.filter(|s| *s > 0.0) {
            for reports in per_receiver.iter_mut() {
                for r in reports.iter_mut() {
                    let f = 1.0 + sigma * self.rng.standard_normal();
                    r.weight *= f.max(0.0);
                }
            }
        }

        let rain = self.disturbance.rain_drag;
        let accels: Vec<Vec3> = (0..n)
            .map(|i| {
                let slot = self.slot_of(i, control);
                let a = steering(&self.aircraft[i], &per_receiver[i], control, slot) + self.disturbance.wind_at(i);
                a.clamp_norm(control.a_max)
            })
            .collect();
        for (ac, acc) in self.aircraft.iter_mut().zip(accels) {
            let v = ((ac.velocity + acc) * (1.0 - rain)).clamp_norm(control.v_max);
            ac.velocity = v;
            ac.position += v;
        }

        if self.disturbance.kind == DisturbanceKind::Storm {
            let theta = self.disturbance.gust_theta;
            let sigma = self.disturbance.gust_sigma;
            for i in 0..n {
                let eta = Vec3::new(
                    self.rng.standard_normal(),
                    self.rng.standard_normal(),
                    self.rng.standard_normal(),
                );
                self.disturbance.gust[i] = self.disturbance.gust[i] * (1.0 - theta) + eta * sigma;
            }
        }

        if let Some(decay) = defend.trust_decay {
            for (i, j) in trust_hits {
                let t = self.aircraft[i].trust_in(j) * (1.0 - decay);
                self.aircraft[i].trust_weights.insert(j, t);
            }
        }

        let p = self.disturbance.p_infect;
        if p > 0.0 {
            let infected: Vec<usize> = self.aircraft.iter().filter(|a| a.infected).map(|a| a.id).collect();
            if !infected.is_empty() {
                let mut newly = Vec::new();
                for i in 0..n {
                    if self.aircraft[i].infected {
                        continue;
                    }
                    for &j in &infected {
                        let d = self.aircraft[i].position.distance(self.aircraft[j].position);
                        if d <= control.r_comm && self.rng.bernoulli(p) {
                            newly.push(i);
                            break;
                        }
                    }
                }
                for i in newly {
                    self.aircraft[i].infected = true;
                }
            }
        }

        self.frame += 1;
        let fresh = self.compute_broadcasts();
        self.prev_broadcasts = Some(std::mem::replace(&mut self.broadcasts, fresh));
        self.last_reports = stats;
    }
}
