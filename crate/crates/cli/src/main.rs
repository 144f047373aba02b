//! `tapa`: run scenarios, ablations, replays and offline rescoring.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tapa_core::harness::{
    replay, rescore_frames, run_ablation, run_scenario, HarnessError, ModeratorKind, ScenarioConfig,
};
use tapa_core::moderator::ExternalConfig;
use tapa_core::scoring::{write_score_header, write_score_row};
use tapa_core::world::read_frame_log;

#[derive(Parser)]
#[command(
    name = "tapa",
    version,
    about = "Swarm formation runs with runtime program adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeratorArg {
    Scripted,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its logs.
    Run {
        /// e1, e2, e3 or a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "on")]
        adapt: Switch,
        #[arg(long, value_enum, default_value = "scripted")]
        moderator: ModeratorArg,
        /// External moderator base URL (or set TAPA_MODERATOR_URL).
        #[arg(long)]
        moderator_url: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full / w/o PC / w/o EK / w/o Both over several rounds.
    Ablate {
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long, default_value = "e2")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-validate one provenance record.
    Replay {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        id: usize,
    },
    /// Rescore a frame log offline; writes a score CSV to stdout.
    Score {
        #[arg(long)]
        frames: PathBuf,
        /// Scenario whose formation target to score against.
        #[arg(long, default_value = "e1")]
        scenario: String,
    },
}

fn load_scenario(spec: &str, seed: Option<u64>) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match ScenarioConfig::preset(spec, seed.unwrap_or(0)) {
        Some(cfg) => cfg,
        None => {
            let path = PathBuf::from(spec);
            if !path.exists() {
                return Err(HarnessError::config(
                    spec,
                    "scenario",
                    "not a preset (e1, e2, e3) and no such file",
                ));
            }
            ScenarioConfig::load(&path)?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            scenario,
            adapt,
            moderator,
            moderator_url,
            seed,
            out,
        } => {
            let mut cfg = load_scenario(&scenario, seed)?;
            cfg.adapt.enabled = matches!(adapt, Switch::On);
            if let ModeratorArg::External = moderator {
                cfg.moderator.kind = ModeratorKind::External;
                if let Some(url) = moderator_url {
                    cfg.moderator.external = Some(ExternalConfig::new(&url));
                }
                cfg.moderator.external_config()?;
            }
            let report = run_scenario(&cfg, Some(&out))?;
            let text = serde_json::to_string_pretty(&report.summary).expect("summary serializes");
            println!("{text}");
        }
        Command::Ablate {
            rounds,
            scenario,
            seed,
            out,
        } => {
            let cfg = load_scenario(&scenario, Some(seed))?;
            let table = run_ablation(&cfg, rounds, Some(&out))?;
            print!("{}", table.to_csv());
        }
        Command::Replay { store, id } => {
            let report = replay(&store, id).map_err(|e| match e {
                tapa_core::harness::ReplayError::Store(m) => {
                    HarnessError::config(&store.display().to_string(), "store", m)
                }
                other => HarnessError::Runtime(other.to_string()),
            })?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
            if !report.agrees {
                return Err(HarnessError::Runtime(format!(
                    "replayed score {} differs from recorded {}",
                    report.replayed_score, report.recorded_score
                )));
            }
        }
        Command::Score { frames, scenario } => {
            let cfg = load_scenario(&scenario, None)?;
            let file = fs::File::open(&frames).map_err(|e| HarnessError::Io {
                path: frames.display().to_string(),
                source: e,
            })?;
            let rows = read_frame_log(BufReader::new(file))
                .map_err(|m| HarnessError::config(&frames.display().to_string(), "frames", m))?;
            let target = cfg.world.target.to_target(cfg.world.n_aircraft);
            let scores = rescore_frames(&rows, &target, &cfg.scoring).map_err(HarnessError::Runtime)?;
            let mut out = io::stdout().lock();
            let write = |out: &mut io::StdoutLock| -> io::Result<()> {
                write_score_header(out)?;
                for s in &scores {
                    write_score_row(out, s)?;
                }
                out.flush()
            };
            write(&mut out).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
