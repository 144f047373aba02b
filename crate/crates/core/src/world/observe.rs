//! Neighbor reports as seen by one receiver.

use serde::{Deserialize, Serialize};

use super::{ControlParams, WorldState};
use crate::geom::Vec3;
use crate::programs::DefendEffects;

/// Kinematic mismatch (meters) that corresponds to a z-score of 1.
pub const KINEMATIC_TOLERANCE: f64 = 1.0;
/// Reports at or above this z-score count as inconsistent in telemetry.
pub const FLAG_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub id: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Kinematic consistency z-score of this report.
    pub z: f64,
    pub flagged: bool,
    /// Contribution weight (trust, noise).
    pub weight: f64,
}

/// Every report receiver `i` hears this frame, before defensive filtering.
///
/// A report is in range when the true distance is within `r_comm`. Its z-score
/// measures how far the reported position departs from last frame's report
/// advanced by the reported velocity; honest aircraft score zero.
pub fn raw_reports(w: &WorldState, i: usize, control: &ControlParams) -> Vec<NeighborReport> {
    let own = &w.aircraft[i];
    let mut out = Vec::new();
    for (j, other) in w.aircraft.iter().enumerate() {
        if j == i || own.position.distance(other.position) > control.r_comm {
            continue;
        }
        let b = w.broadcasts[j];
        let z = match &w.prev_broadcasts {
            Some(prev) => {
                let predicted = prev[j].position + b.velocity;
                b.position.distance(predicted) / KINEMATIC_TOLERANCE
            }
            None => 0.0,
        };
        out.push(NeighborReport {
            id: j,
            position: b.position,
            velocity: b.velocity,
            z,
            flagged: z >= FLAG_Z,
            weight: own.trust_in(j),
        });
    }
    out
}

pub(crate) fn apply_defend(
    w: &WorldState,
    _i: usize,
    raw: Vec<NeighborReport>,
    defend: &DefendEffects,
) -> Vec<NeighborReport> {
    raw.into_iter()
        .filter(|r| !defend.quarantine.get(&r.id).is_some_and(|&expiry| w.frame < expiry))
        .filter(|r| defend.outlier_z.is_none_or(|z| r.z < z))
        .collect()
}

/// Reports receiver `i` acts on after quarantine and outlier filtering.
///
/// Weight noise is applied by the stepper, which owns the random stream.
pub fn observed_neighbors(
    w: &WorldState,
    i: usize,
    control: &ControlParams,
    defend: &DefendEffects,
) -> Vec<NeighborReport> {
    apply_defend(w, i, raw_reports(w, i, control), defend)
}
