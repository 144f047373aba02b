//! Multi-round ablation over the expert-knowledge and provenance axes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_scenario, run_scenario_with, HarnessError, ScenarioConfig, PROVENANCE_FILE};
use crate::moderator::AblationFlags;
use crate::provenance::{FeatureRegistry, ProvenanceStore, SnippetRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationConfig {
    Full,
    WithoutPc,
    WithoutEk,
    WithoutBoth,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::Full,
        AblationConfig::WithoutPc,
        AblationConfig::WithoutEk,
        AblationConfig::WithoutBoth,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationConfig::Full => "Full",
            AblationConfig::WithoutPc => "w/o PC",
            AblationConfig::WithoutEk => "w/o EK",
            AblationConfig::WithoutBoth => "w/o Both",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AblationConfig::Full => "full",
            AblationConfig::WithoutPc => "wo_pc",
            AblationConfig::WithoutEk => "wo_ek",
            AblationConfig::WithoutBoth => "wo_both",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let (use_ek, use_pc) = match self {
            AblationConfig::Full => (true, true),
            AblationConfig::WithoutPc => (true, false),
            AblationConfig::WithoutEk => (false, true),
            AblationConfig::WithoutBoth => (false, false),
        };
        AblationFlags { use_ek, use_pc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub round: usize,
    /// Mean `s_overall` over the final quarter of the run.
    pub score: f64,
    /// Change from the previous round; round 1 is compared with the
    /// unadapted baseline.
    pub delta: f64,
    /// Store reads and snippet lookups made during the round.
    pub store_reads: usize,
    pub snippet_reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline: f64,
    pub rounds: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn score(&self, config: AblationConfig, round: usize) -> Option<f64> {
        self.row(config, round).map(|r| r.score)
    }

    pub fn row(&self, config: AblationConfig, round: usize) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config && r.round == round)
    }

    /// One row per configuration, one `score (delta)` cell per round.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("configuration");
        for r in 1..=self.rounds {
            let _ = write!(s, ",round_{r}");
        }
        s.push('\n');
        for c in AblationConfig::ALL {
            s.push_str(c.label());
            for r in 1..=self.rounds {
                match self.row(c, r) {
                    Some(row) => {
                        let _ = write!(s, ",{:.1} ({:+.1})", row.score, row.delta);
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every configuration for `rounds` rounds on the same world seed.
/// Each configuration keeps one provenance store across its rounds; the
/// moderator seed changes per round.
pub fn run_ablation(base: &ScenarioConfig, rounds: usize, out: Option<&Path>) -> Result<AblationTable, HarnessError> {
    if rounds == 0 {
        return Err(HarnessError::config("ablation", "rounds", "must be >= 1"));
    }
    base.validate("ablation")?;
    let mut unadapted = base.clone();
    unadapted.adapt.enabled = false;
    let baseline = run_scenario(&unadapted, out.map(|d| d.join("baseline")).as_deref())?
        .summary
        .mean_s_overall_last_quarter;

    let features = FeatureRegistry::builtin();
    let mut rows = Vec::new();
    for config in AblationConfig::ALL {
        let dir = out.map(|d| d.join(config.slug()));
        let mut store = match &dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| HarnessError::io(d, e))?;
                let p = d.join(PROVENANCE_FILE);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
                }
                ProvenanceStore::open(&p, features).map_err(|e| HarnessError::Runtime(e.to_string()))?
            }
            None => ProvenanceStore::in_memory(features),
        };
        let mut prev = baseline;
        for round in 1..=rounds {
            let snippets = SnippetRegistry::builtin();
            let mut cfg = base.clone();
            cfg.flags = config.flags();
            cfg.moderator.seed = base.moderator.seed.wrapping_add(round as u64);
            let run_id = format!("{}-{}-seed{}-round{round}", base.scenario_id, config.slug(), base.seed);
            let reads_before = store.read_count();
            let round_dir = dir.as_ref().map(|d| d.join(format!("round{round}")));
            let report = run_scenario_with(&cfg, round_dir.as_deref(), &mut store, &snippets, &run_id)?;
            let score = report.summary.mean_s_overall_last_quarter;
            rows.push(AblationRow {
                config,
                round,
                score,
                delta: score - prev,
                store_reads: store.read_count() - reads_before,
                snippet_reads: snippets.read_count(),
            });
            prev = score;
        }
    }
    let table = AblationTable { baseline, rounds, rows };
    if let Some(d) = out {
        let p = d.join("ablation.csv");
        fs::write(&p, table.to_csv()).map_err(|e| HarnessError::io(&p, e))?;
        let p = d.join("ablation.json");
        let text = serde_json::to_string_pretty(&table).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        fs::write(&p, text + "\n").map_err(|e| HarnessError::io(&p, e))?;
    }
    Ok(table)
}
