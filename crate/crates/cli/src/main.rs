//! Command-line front end: run a scenario study, replay a recording,
//! diff a plotted map against ground truth, or validate a config.
//!
//! Exit codes: 0 success, 2 validation error, 3 runtime failure.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use terrafusion::config::{ConfigError, ScenarioConfig};
use terrafusion::fusion::FilterKind;
use terrafusion::gridmap::MultiLayerGridMap;
use terrafusion::metrics::{layer_error, write_summary_csv, TerrainAttribute};
use terrafusion::recording::Recording;
use terrafusion::study::{replay, run_scenario, StudyError, StudyOptions};

#[derive(Parser)]
#[command(name = "terrafusion", version, about = "Sensor-fusion localization and terrain mapping study runner")]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full study described by a scenario config.
    Run {
        /// Scenario config (TOML).
        config: PathBuf,
        /// Parent directory for the run directory (default: ./runs).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Replace the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
    },
    /// Re-run one group's filter against a stored sensor recording.
    Replay {
        /// Recording file (.tfsr).
        recording: PathBuf,
        /// Group id from the recording's group table.
        #[arg(long)]
        group: u32,
        /// Override the group's filter (ekf or ukf).
        #[arg(long)]
        filter: Option<String>,
        /// Output directory (default: ./replay).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare a plotted map file against a config's ground truth.
    MapDiff {
        /// Map file (.bin).
        map: PathBuf,
        /// Scenario config defining the ground truth.
        config: PathBuf,
        /// Layer to compare for single-layer maps: resistance or grade.
        /// Defaults from the file name, or both layers of a 2-layer map.
        #[arg(long)]
        layer: Option<String>,
    },
    /// Validate a scenario config, listing every violation.
    Validate {
        config: PathBuf,
    },
}

fn parse_filter(name: &str) -> Result<FilterKind, String> {
    match name.to_ascii_lowercase().as_str() {
        "ekf" => Ok(FilterKind::Ekf),
        "ukf" => Ok(FilterKind::Ukf),
        other => Err(format!("unknown filter '{other}' (want ekf or ukf)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            config,
            out_dir,
            seed_override,
        } => {
            let config = match ScenarioConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => return validation_failure(e),
            };
            let opts = StudyOptions {
                out_dir,
                write_artifacts: true,
                seed_override,
                quiet: cli.quiet,
            };
            match run_scenario(&config, &opts) {
                Ok(results) => {
                    if let Some(dir) = &results.run_dir {
                        println!("artifacts: {}", dir.display());
                    }
                    let mut stdout = std::io::stdout().lock();
                    write_summary_csv(&results.rows, &mut stdout)?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(StudyError::Config(e)) => validation_failure(e),
                Err(e) => Err(e.into()),
            }
        }
        Command::Replay {
            recording,
            group,
            filter,
            out_dir,
        } => {
            let recording = Recording::read_from(&recording)?;
            let filter = filter.as_deref().map(parse_filter).transpose()?;
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("replay"));
            std::fs::create_dir_all(&out_dir)?;
            let results = replay(&recording, group, filter, &out_dir, cli.quiet)?;
            let mut stdout = std::io::stdout().lock();
            write_summary_csv(&results.rows, &mut stdout)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::MapDiff { map, config, layer } => {
            let bytes = std::fs::read(&map)?;
            let grid = MultiLayerGridMap::from_bytes(&bytes)?;
            let scenario_config = match ScenarioConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => return validation_failure(e),
            };
            let scenario = match scenario_config.validate() {
                Ok(s) => s,
                Err(e) => return validation_failure(e),
            };
            let attr_from_name = |path: &PathBuf| {
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                if name.contains("grade") {
                    Some(TerrainAttribute::Grade)
                } else if name.contains("resistance") {
                    Some(TerrainAttribute::Resistance)
                } else {
                    None
                }
            };
            let layers: Vec<(usize, TerrainAttribute)> = if grid.layer_count() >= 2 {
                vec![
                    (0, TerrainAttribute::Resistance),
                    (1, TerrainAttribute::Grade),
                ]
            } else {
                let attr = match layer.as_deref() {
                    Some("resistance") => TerrainAttribute::Resistance,
                    Some("grade") => TerrainAttribute::Grade,
                    Some(other) => return Err(format!("unknown layer '{other}'").into()),
                    None => attr_from_name(&map).ok_or(
                        "single-layer map: pass --layer resistance|grade or use a \
                         recognizable file name",
                    )?,
                };
                vec![(0, attr)]
            };
            for (idx, attr) in layers {
                let (errors, total, _) = layer_error(&grid, idx, attr, &scenario.world);
                let rate = if total == 0 {
                    0.0
                } else {
                    errors as f64 / total as f64
                };
                println!(
                    "{}: E={errors} T={total} J={:.4}%",
                    match attr {
                        TerrainAttribute::Resistance => "resistance",
                        TerrainAttribute::Grade => "grade",
                    },
                    rate * 100.0
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let config = match ScenarioConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => return validation_failure(e),
            };
            match config.validate() {
                Ok(scenario) => {
                    println!(
                        "ok: {} devices, {} groups, {} seeds",
                        scenario.suite.devices.len(),
                        scenario.groups.len(),
                        scenario.seeds.len()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => validation_failure(e),
            }
        }
    }
}

fn validation_failure(e: ConfigError) -> Result<ExitCode, Box<dyn std::error::Error>> {
    eprintln!("invalid config: {e}");
    Ok(ExitCode::from(2))
}
