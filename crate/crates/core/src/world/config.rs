use serde::{Deserialize, Serialize};

use super::{ConfigError, DisturbanceKind, FormationTarget};
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub center: Vec3,
    pub radius: f64,
    pub height: f64,
    /// Defaults to the number of aircraft.
    #[serde(default)]
    pub n_slots: Option<usize>,
}

impl TargetConfig {
    pub fn to_target(&self, n: usize) -> FormationTarget {
        FormationTarget {
            center: self.center,
            radius: self.radius,
            height: self.height,
            n_slots: self.n_slots.unwrap_or(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnConfig {
    pub min: Vec3,
    pub max: Vec3,
    /// Explicit spawn positions; overrides the random box when present.
    #[serde(default)]
    pub positions: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceConfig {
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub wind_base: Vec3,
    #[serde(default = "default_gust_theta")]
    pub gust_theta: f64,
    #[serde(default = "default_gust_sigma")]
    pub gust_sigma: f64,
    #[serde(default)]
    pub rain_drag: f64,
    #[serde(default)]
    pub p_infect: f64,
    #[serde(default)]
    pub spoof_offset_scale: f64,
}

fn default_gust_theta() -> f64 {
    0.1
}

fn default_gust_sigma() -> f64 {
    0.5
}

impl DisturbanceConfig {
    pub fn none() -> Self {
        Self {
            kind: DisturbanceKind::None,
            wind_base: Vec3::ZERO,
            gust_theta: default_gust_theta(),
            gust_sigma: 0.0,
            rain_drag: 0.0,
            p_infect: 0.0,
            spoof_offset_scale: 0.0,
        }
    }

    pub fn storm() -> Self {
        Self {
            kind: DisturbanceKind::Storm,
            wind_base: Vec3::new(1.8, 0.0, 0.0),
            gust_theta: default_gust_theta(),
            gust_sigma: 1.2,
            rain_drag: 0.1,
            p_infect: 0.0,
            spoof_offset_scale: 0.0,
        }
    }

    pub fn adversarial() -> Self {
        Self {
            kind: DisturbanceKind::Adversarial,
            wind_base: Vec3::ZERO,
            gust_theta: default_gust_theta(),
            gust_sigma: 0.0,
            rain_drag: 0.0,
            p_infect: 0.02,
            spoof_offset_scale: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_aircraft: usize,
    pub target: TargetConfig,
    pub spawn: SpawnConfig,
    #[serde(default)]
    pub malicious_ids: Vec<usize>,
    pub disturbance: DisturbanceConfig,
}

impl WorldConfig {
    fn base(disturbance: DisturbanceConfig, malicious_ids: Vec<usize>) -> Self {
        Self {
            n_aircraft: 10,
            target: TargetConfig {
                center: Vec3::ZERO,
                radius: 500.0,
                height: 100.0,
                n_slots: None,
            },
            spawn: SpawnConfig {
                min: Vec3::new(-150.0, -150.0, 80.0),
                max: Vec3::new(150.0, 150.0, 120.0),
                positions: None,
            },
            malicious_ids,
            disturbance,
        }
    }

    /// Stable weather, no disturbance.
    pub fn e1() -> Self {
        Self::base(DisturbanceConfig::none(), Vec::new())
    }

    /// Storm: wind, gusts and rain.
    pub fn e2() -> Self {
        Self::base(DisturbanceConfig::storm(), Vec::new())
    }

    /// One malicious aircraft propagating infection.
    pub fn e3() -> Self {
        Self::base(DisturbanceConfig::adversarial(), vec![0])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_aircraft;
        if n < 2 {
            return Err(ConfigError::invalid("n_aircraft", "need at least 2 aircraft"));
        }
        if let Some(slots) = self.target.n_slots {
            if slots != n {
                return Err(ConfigError::invalid(
                    "target.n_slots",
                    format!("n_slots = {slots} but n_aircraft = {n}"),
                ));
            }
        }
        if !(self.target.radius > 0.0 && self.target.radius.is_finite()) {
            return Err(ConfigError::invalid("target.radius", "must be positive"));
        }
        if !self.target.height.is_finite() || !self.target.center.is_finite() {
            return Err(ConfigError::invalid("target", "must be finite"));
        }
        match &self.spawn.positions {
            Some(list) => {
                if list.len() != n {
                    return Err(ConfigError::invalid(
                        "spawn.positions",
                        format!("{} positions for {n} aircraft", list.len()),
                    ));
                }
                if list.iter().any(|p| !p.is_finite()) {
                    return Err(ConfigError::invalid("spawn.positions", "must be finite"));
                }
            }
            None => {
                let (lo, hi) = (self.spawn.min, self.spawn.max);
                if !(lo.is_finite() && hi.is_finite()) || lo.x > hi.x || lo.y > hi.y || lo.z > hi.z {
                    return Err(ConfigError::invalid("spawn", "min must not exceed max"));
                }
            }
        }
        if let Some(&bad) = self.malicious_ids.iter().find(|&&id| id >= n) {
            return Err(ConfigError::invalid("malicious_ids", format!("id {bad} out of range")));
        }
        let d = &self.disturbance;
        if !(0.0..1.0).contains(&d.rain_drag) {
            return Err(ConfigError::invalid("disturbance.rain_drag", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&d.p_infect) {
            return Err(ConfigError::invalid("disturbance.p_infect", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&d.gust_theta) {
            return Err(ConfigError::invalid("disturbance.gust_theta", "must be in [0, 1]"));
        }
        if !(d.gust_sigma >= 0.0 && d.spoof_offset_scale >= 0.0) || !d.wind_base.is_finite() {
            return Err(ConfigError::invalid(
                "disturbance",
                "magnitudes must be finite and >= 0",
            ));
        }
        if d.kind == DisturbanceKind::None {
            let quiet = d.wind_base == Vec3::ZERO
                && d.gust_sigma == 0.0
                && d.rain_drag == 0.0
                && d.p_infect == 0.0
                && d.spoof_offset_scale == 0.0;
            if !quiet {
                return Err(ConfigError::invalid(
                    "disturbance",
                    "kind None requires all disturbance magnitudes to be zero",
                ));
            }
            if !self.malicious_ids.is_empty() {
                return Err(ConfigError::invalid(
                    "malicious_ids",
                    "kind None admits no malicious aircraft",
                ));
            }
        }
        Ok(())
    }
}
