//! End-to-end study runner: simulate the truth trajectory once per
//! configuration, record every sensor stream per seed, run each group's
//! filter against the masked recording, plot the terrain map, score
//! localization and map quality, and emit artifacts. Deterministic given
//! (config, seeds); groups within a seed run on a worker pool.

use crate::config::{ConfigError, ScenarioConfig, StudyGroup};
use crate::fusion::{
    initial_vehicle_estimate, run_filter, FilterConfig, FilterKind, FilterReport, FusionError,
    InitCovariance,
};
use crate::gridmap::{MapError, MultiLayerGridMap, GRADE_LAYER, RESISTANCE_LAYER};
use crate::metrics::{
    map_error_rate, mispredict_mask, resample_track, summarize_study, trajectory_error,
    write_summary_csv, GroupSeedOutcome, MetricsError, StudyRow, TerrainAttribute, TrackPoint,
};
use crate::recording::{RecordedFilter, Recording, RecordingError};
use crate::sensors::{SensorError, SensorReading};
use crate::world::{drive_waypoints, VehicleState, WorldError};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("world error: {0}")]
    World(#[from] WorldError),
    #[error("sensor error: {0}")]
    Sensor(#[from] SensorError),
    #[error("filter error in {context}: {source}")]
    Fusion {
        context: String,
        source: FusionError,
    },
    #[error("map error in {context}: {source}")]
    Map { context: String, source: MapError },
    #[error("metrics error in {context}: {source}")]
    Metrics {
        context: String,
        source: MetricsError,
    },
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error("artifact io failure at {path} (completed: {})", completed.join(", "))]
    Artifact {
        path: String,
        completed: Vec<String>,
        #[source]
        source: std::io::Error,
    },
    #[error("recording has no group {0}")]
    GroupNotFound(u32),
}

/// Runner options, typically mapped from CLI flags.
#[derive(Clone, Debug, Default)]
pub struct StudyOptions {
    /// Parent directory for the run directory; `None` with
    /// `write_artifacts` uses `./runs`.
    pub out_dir: Option<PathBuf>,
    /// Write per-group artifact files. Disabled for in-memory evaluation.
    pub write_artifacts: bool,
    pub seed_override: Option<Vec<u64>>,
    pub quiet: bool,
}

/// Everything produced by one study run.
#[derive(Clone, Debug)]
pub struct StudyResults {
    pub outcomes: Vec<GroupSeedOutcome>,
    pub rows: Vec<StudyRow>,
    pub reports: Vec<(u64, u32, FilterReport)>,
    pub run_dir: Option<PathBuf>,
}

impl StudyResults {
    pub fn row(&self, group_id: u32) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.group_id == group_id)
    }

    pub fn outcome(&self, group_id: u32, seed: u64) -> Option<&GroupSeedOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.group_id == group_id && o.seed == seed)
    }
}

/// One group evaluated against one seed's recording.
struct GroupEvaluation {
    outcome: GroupSeedOutcome,
    report: FilterReport,
    artifacts: Option<GroupArtifacts>,
}

/// In-memory artifact bundle, written to disk after evaluation.
struct GroupArtifacts {
    label: String,
    trajectory_csv: Vec<u8>,
    errors_csv: Vec<u8>,
    resistance_bin: Vec<u8>,
    grade_bin: Vec<u8>,
    resistance_csv: Vec<u8>,
    grade_csv: Vec<u8>,
    resistance_pgm: Vec<u8>,
    grade_pgm: Vec<u8>,
    mispredict_r_pgm: Vec<u8>,
    mispredict_s_pgm: Vec<u8>,
}

fn truth_track(truth: &[VehicleState]) -> Vec<TrackPoint> {
    truth.iter().map(|s| (s.t, s.pose.x, s.pose.y)).collect()
}

fn truth_altitude(truth: &[VehicleState]) -> Vec<TrackPoint> {
    truth.iter().map(|s| (s.t, s.pose.z, 0.0)).collect()
}

/// Runs one (group, seed) work item: mask the stream, filter, plot, score.
#[allow(clippy::too_many_arguments)]
fn evaluate_group(
    group: &StudyGroup,
    filter_cfg: &FilterConfig,
    init_cov: &InitCovariance,
    world: &crate::world::GroundTruthMap,
    truth: &[VehicleState],
    readings: &[SensorReading],
    seed: u64,
    t_end: f64,
    filter_override: Option<FilterKind>,
    want_artifacts: bool,
) -> Result<GroupEvaluation, StudyError> {
    let filter_kind = filter_override.unwrap_or(group.filter);
    let label = match filter_override {
        Some(f) => format!("group_{:02}_{}", group.id, f),
        None => group.label(),
    };
    let context = format!("{label} seed {seed}");

    let masked: Vec<SensorReading> = readings
        .iter()
        .filter(|r| group.is_active(r.device))
        .cloned()
        .collect();
    let init = initial_vehicle_estimate(&masked, init_cov, 0.0);
    let run = run_filter(filter_kind, filter_cfg, &masked, init, t_end).map_err(|source| {
        StudyError::Fusion {
            context: context.clone(),
            source,
        }
    })?;

    let grid_times: Vec<f64> = run.grid_states().map(|s| s.t).collect();
    let est_track: Vec<TrackPoint> = run.grid_states().map(|s| (s.t, s.x[0], s.x[1])).collect();
    let truth_aligned = resample_track(&truth_track(truth), &grid_times);
    let traj_err =
        trajectory_error(&est_track, &truth_aligned).map_err(|source| StudyError::Metrics {
            context: context.clone(),
            source,
        })?;

    let mut map = MultiLayerGridMap::covering(&world.extent, 1.0).map_err(|source| {
        StudyError::Map {
            context: context.clone(),
            source,
        }
    })?;
    let truth_xy: Vec<(f64, f64)> = truth_aligned.iter().map(|(_, x, y)| (*x, *y)).collect();
    let est_xy: Vec<(f64, f64)> = est_track.iter().map(|(_, x, y)| (*x, *y)).collect();
    crate::gridmap::run_plotter(&truth_xy, &est_xy, world, &mut map).map_err(|source| {
        StudyError::Map {
            context: context.clone(),
            source,
        }
    })?;
    let map_report = map_error_rate(&map, world).map_err(|source| StudyError::Metrics {
        context: context.clone(),
        source,
    })?;
    let masks = mispredict_mask(&map, world).map_err(|source| StudyError::Metrics {
        context: context.clone(),
        source,
    })?;

    let outcome = GroupSeedOutcome {
        group_id: group.id,
        filter: filter_kind.to_string(),
        gps_count: group.gps_count,
        imu_count: group.imu_count,
        encoder: group.encoder,
        seed,
        rmse_x: traj_err.rmse_x,
        rmse_y: traj_err.rmse_y,
        net_rmse: traj_err.net_rmse,
        max_error: traj_err.max_error,
        j_resistance: map_report.j_resistance,
        j_grade: map_report.j_grade,
    };

    let artifacts = if want_artifacts {
        let alt_aligned = resample_track(&truth_altitude(truth), &grid_times);
        let mut trajectory_csv = Vec::new();
        writeln!(
            trajectory_csv,
            "t,truth_x,truth_y,truth_z,est_x,est_y,est_z,eucl_err"
        )
        .unwrap();
        for (k, s) in run.grid_states().enumerate() {
            writeln!(
                trajectory_csv,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.t,
                truth_aligned[k].1,
                truth_aligned[k].2,
                alt_aligned[k].1,
                s.x[0],
                s.x[1],
                s.x[2],
                traj_err.per_step[k]
            )
            .unwrap();
        }

        let mut errors_csv = Vec::new();
        writeln!(errors_csv, "t,err_x,err_y,eucl_err,cum_net_rmse").unwrap();
        let mut sum2 = 0.0;
        for (k, s) in run.grid_states().enumerate() {
            let dx = s.x[0] - truth_aligned[k].1;
            let dy = s.x[1] - truth_aligned[k].2;
            sum2 += dx * dx + dy * dy;
            let cum = (sum2 / (k + 1) as f64).sqrt();
            writeln!(
                errors_csv,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.t, dx, dy, traj_err.per_step[k], cum
            )
            .unwrap();
        }

        let single = |layer: usize| map.single_layer(layer).expect("layer exists");
        let mut resistance_csv = Vec::new();
        map.write_layer_csv(RESISTANCE_LAYER, &mut resistance_csv)
            .expect("in-memory write");
        let mut grade_csv = Vec::new();
        map.write_layer_csv(GRADE_LAYER, &mut grade_csv)
            .expect("in-memory write");
        let mut resistance_pgm = Vec::new();
        map.write_layer_pgm(RESISTANCE_LAYER, &mut resistance_pgm)
            .expect("in-memory write");
        let mut grade_pgm = Vec::new();
        map.write_layer_pgm(GRADE_LAYER, &mut grade_pgm)
            .expect("in-memory write");
        let mut mispredict_r_pgm = Vec::new();
        masks
            .write_pgm(TerrainAttribute::Resistance, &mut mispredict_r_pgm)
            .expect("in-memory write");
        let mut mispredict_s_pgm = Vec::new();
        masks
            .write_pgm(TerrainAttribute::Grade, &mut mispredict_s_pgm)
            .expect("in-memory write");

        Some(GroupArtifacts {
            label,
            trajectory_csv,
            errors_csv,
            resistance_bin: single(RESISTANCE_LAYER).to_bytes(),
            grade_bin: single(GRADE_LAYER).to_bytes(),
            resistance_csv,
            grade_csv,
            resistance_pgm,
            grade_pgm,
            mispredict_r_pgm,
            mispredict_s_pgm,
        })
    } else {
        None
    };

    Ok(GroupEvaluation {
        outcome,
        report: run.report,
        artifacts,
    })
}

fn write_file(path: &Path, bytes: &[u8], completed: &[String]) -> Result<(), StudyError> {
    std::fs::write(path, bytes).map_err(|source| StudyError::Artifact {
        path: path.display().to_string(),
        completed: completed.to_vec(),
        source,
    })
}

fn write_group_artifacts(
    dir: &Path,
    artifacts: &GroupArtifacts,
    completed: &[String],
) -> Result<(), StudyError> {
    std::fs::create_dir_all(dir).map_err(|source| StudyError::Artifact {
        path: dir.display().to_string(),
        completed: completed.to_vec(),
        source,
    })?;
    let entries: [(&str, &[u8]); 10] = [
        ("trajectory.csv", &artifacts.trajectory_csv),
        ("errors.csv", &artifacts.errors_csv),
        ("resistance.bin", &artifacts.resistance_bin),
        ("grade.bin", &artifacts.grade_bin),
        ("resistance.csv", &artifacts.resistance_csv),
        ("grade.csv", &artifacts.grade_csv),
        ("resistance.pgm", &artifacts.resistance_pgm),
        ("grade.pgm", &artifacts.grade_pgm),
        ("mispredict_r.pgm", &artifacts.mispredict_r_pgm),
        ("mispredict_s.pgm", &artifacts.mispredict_s_pgm),
    ];
    for (name, bytes) in entries {
        write_file(&dir.join(name), bytes, completed)?;
    }
    Ok(())
}

fn config_hash(config: &ScenarioConfig) -> String {
    let canonical = toml::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates `run_<stamp>_<hash>` under the parent, never overwriting an
/// existing directory.
fn create_run_dir(parent: &Path, hash: &str) -> Result<PathBuf, StudyError> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut k = 0u32;
    loop {
        let name = if k == 0 {
            format!("run_{stamp}_{hash}")
        } else {
            format!("run_{stamp}_{hash}_{k}")
        };
        let candidate = parent.join(name);
        match std::fs::create_dir_all(candidate.parent().unwrap_or(parent))
            .and_then(|_| std::fs::create_dir(&candidate))
        {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && k < 1000 => k += 1,
            Err(source) => {
                return Err(StudyError::Artifact {
                    path: candidate.display().to_string(),
                    completed: vec![],
                    source,
                })
            }
        }
    }
}

fn build_thread_pool(workers: Option<usize>) -> Option<rayon::ThreadPool> {
    workers.and_then(|w| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .ok()
    })
}

/// Runs the full study described by `config`.
pub fn run_scenario(
    config: &ScenarioConfig,
    opts: &StudyOptions,
) -> Result<StudyResults, StudyError> {
    let scenario = config.validate()?;
    let seeds = opts
        .seed_override
        .clone()
        .unwrap_or_else(|| scenario.seeds.clone());

    let run_dir = if opts.write_artifacts {
        let parent = opts
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"));
        let dir = create_run_dir(&parent, &config_hash(config))?;
        // canonical config echo for provenance
        let canonical = toml::to_string(config).unwrap_or_default();
        write_file(&dir.join("config.toml"), canonical.as_bytes(), &[])?;
        Some(dir)
    } else {
        None
    };

    let sim_dt = 1.0 / scenario.sim_rate_hz;
    let truth = drive_waypoints(&scenario.world, &scenario.script, sim_dt)?;
    if truth.truncated {
        log::warn!("course truncated by the time cap before the last waypoint");
    }
    let t_end = truth.duration();
    if !opts.quiet {
        eprintln!(
            "course: {:.0} s at {} states, {} groups x {} seeds",
            t_end,
            truth.states.len(),
            scenario.groups.len(),
            seeds.len()
        );
    }

    let pool = build_thread_pool(scenario.outputs.workers);
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    let mut completed: Vec<String> = Vec::new();

    for &seed in &seeds {
        let readings = scenario
            .suite
            .simulate(&truth.states, scenario.sim_rate_hz, seed)?;

        let seed_dir = run_dir.as_ref().map(|d| d.join(format!("seed_{seed:03}")));
        if let Some(dir) = &seed_dir {
            std::fs::create_dir_all(dir).map_err(|source| StudyError::Artifact {
                path: dir.display().to_string(),
                completed: completed.clone(),
                source,
            })?;
            if scenario.outputs.recording {
                let recording = Recording {
                    master_seed: seed,
                    sim_rate_hz: scenario.sim_rate_hz,
                    t_end,
                    suite: scenario.suite.clone(),
                    groups: scenario.groups.clone(),
                    filter: RecordedFilter {
                        q_diag: scenario.filter.noise.diag().iter().copied().collect(),
                        gate_quantile: scenario.filter.gate.quantile(),
                        output_hz: scenario.filter.output_hz,
                        init: scenario.init_cov,
                    },
                    world: scenario.world.clone(),
                    truth: truth.states.clone(),
                    readings: readings.clone(),
                };
                recording.write_to(&dir.join("recording.tfsr"))?;
            }
        }

        let evaluate = |group: &StudyGroup| {
            evaluate_group(
                group,
                &scenario.filter,
                &scenario.init_cov,
                &scenario.world,
                &truth.states,
                &readings,
                seed,
                t_end,
                None,
                opts.write_artifacts,
            )
        };
        let results: Vec<Result<GroupEvaluation, StudyError>> = match &pool {
            Some(pool) => {
                pool.install(|| scenario.groups.par_iter().map(evaluate).collect())
            }
            None => scenario.groups.par_iter().map(evaluate).collect(),
        };

        for result in results {
            let eval = result?;
            if let (Some(dir), Some(artifacts)) = (&seed_dir, &eval.artifacts) {
                write_group_artifacts(&dir.join(&artifacts.label), artifacts, &completed)?;
                completed.push(format!("seed {seed} {}", artifacts.label));
            }
            if !opts.quiet {
                eprintln!(
                    "seed {seed} group {:02} {}: net rmse {:.3} m, J_r {:.3}%, rejected {}",
                    eval.outcome.group_id,
                    eval.outcome.filter,
                    eval.outcome.net_rmse,
                    eval.outcome.j_resistance * 100.0,
                    eval.report.rejected
                );
            }
            reports.push((seed, eval.outcome.group_id, eval.report));
            outcomes.push(eval.outcome);
        }
    }

    let rows = summarize_study(&outcomes);
    if let Some(dir) = &run_dir {
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).expect("in-memory write");
        write_file(&dir.join("summary.csv"), &buf, &completed)?;
    }

    Ok(StudyResults {
        outcomes,
        rows,
        reports,
        run_dir,
    })
}

/// Re-runs one group's filter against a stored recording, writing the
/// same artifact set as the original run.
pub fn replay(
    recording: &Recording,
    group_id: u32,
    filter_override: Option<FilterKind>,
    out_dir: &Path,
    quiet: bool,
) -> Result<StudyResults, StudyError> {
    let group = recording
        .group(group_id)
        .ok_or(StudyError::GroupNotFound(group_id))?;
    let filter_cfg = recording.filter.to_filter_config();
    let eval = evaluate_group(
        group,
        &filter_cfg,
        &recording.filter.init,
        &recording.world,
        &recording.truth,
        &recording.readings,
        recording.master_seed,
        recording.t_end,
        filter_override,
        true,
    )?;
    let artifacts = eval.artifacts.as_ref().expect("artifacts requested");
    write_group_artifacts(&out_dir.join(&artifacts.label), artifacts, &[])?;
    if !quiet {
        eprintln!(
            "replayed group {:02} {}: net rmse {:.3} m",
            eval.outcome.group_id, eval.outcome.filter, eval.outcome.net_rmse
        );
    }
    let rows = summarize_study(std::slice::from_ref(&eval.outcome));
    Ok(StudyResults {
        outcomes: vec![eval.outcome],
        rows,
        reports: vec![(recording.master_seed, group_id, eval.report)],
        run_dir: Some(out_dir.to_path_buf()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two groups, one seed, short course: the smoke configuration used
    /// by unit tests.
    pub(crate) fn tiny_config() -> ScenarioConfig {
        let mut config = ScenarioConfig::default_study();
        config.script.waypoints = vec![[0.0, 0.0], [40.0, 8.0], [60.0, 40.0]];
        config.study.seeds = vec![42];
        config.study.groups.retain(|g| g.id == 2 || g.id == 10);
        config
    }

    #[test]
    fn smoke_run_produces_outcomes() {
        let config = tiny_config();
        let opts = StudyOptions {
            quiet: true,
            ..StudyOptions::default()
        };
        let results = run_scenario(&config, &opts).unwrap();
        assert_eq!(results.outcomes.len(), 2);
        assert!(results.run_dir.is_none());
        for o in &results.outcomes {
            assert!(o.net_rmse.is_finite());
            assert!(o.net_rmse < 20.0, "net rmse {}", o.net_rmse);
            assert!(o.j_resistance <= 1.0);
        }
        assert_eq!(results.rows.len(), 2);
    }

    #[test]
    fn artifact_layout_matches_contract() {
        let config = tiny_config();
        let tmp = tempfile::tempdir().unwrap();
        let opts = StudyOptions {
            out_dir: Some(tmp.path().to_path_buf()),
            write_artifacts: true,
            quiet: true,
            ..StudyOptions::default()
        };
        let results = run_scenario(&config, &opts).unwrap();
        let run_dir = results.run_dir.unwrap();
        assert!(run_dir.join("summary.csv").is_file());
        assert!(run_dir.join("config.toml").is_file());
        let seed_dir = run_dir.join("seed_042");
        assert!(seed_dir.join("recording.tfsr").is_file());
        for group in ["group_02_ekf", "group_10_ukf"] {
            for file in [
                "trajectory.csv",
                "errors.csv",
                "resistance.bin",
                "grade.bin",
                "resistance.csv",
                "grade.csv",
                "resistance.pgm",
                "grade.pgm",
                "mispredict_r.pgm",
                "mispredict_s.pgm",
            ] {
                assert!(
                    seed_dir.join(group).join(file).is_file(),
                    "{group}/{file} missing"
                );
            }
        }
    }

    #[test]
    fn seed_override_replaces_config_seeds() {
        let config = tiny_config();
        let opts = StudyOptions {
            quiet: true,
            seed_override: Some(vec![7, 8]),
            ..StudyOptions::default()
        };
        let results = run_scenario(&config, &opts).unwrap();
        let seeds: std::collections::BTreeSet<u64> =
            results.outcomes.iter().map(|o| o.seed).collect();
        assert_eq!(seeds.into_iter().collect::<Vec<_>>(), vec![7, 8]);
    }
}
