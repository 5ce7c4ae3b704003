//! Scenario configuration: a TOML document describing the world, the
//! drive script, the sensor suite, filter tuning, and the study matrix
//! (sensor-configuration groups x seeds). Validation reports every
//! violation at once rather than stopping at the first.

use crate::fusion::{FilterConfig, FilterKind, GateConfig, InitCovariance, NoiseConfig};
use crate::geo::{latlon_to_utm, UtmPoint};
use crate::sensors::{
    Device, DeviceId, DeviceModel, DropoutSchedule, EncoderModel, GpsModel, ImuModel,
    OutlierModel, SensorSuite,
};
use crate::world::{GroundTruthMap, Polygon, Rect, TerrainZone, WaypointScript};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config ({} violations):\n{}", .0.len(), .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Default per-device GPS dropout phase spacing, seconds. Staggered
/// phases keep simultaneous signal loss from happening by construction.
pub const DEFAULT_PHASE_SPACING: f64 = 3.3;

// ---------------------------------------------------------------------
// Raw TOML schema.
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldSection,
    pub script: ScriptSection,
    pub sensors: SensorsSection,
    #[serde(default)]
    pub filter: FilterSection,
    pub study: StudySection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    /// `[min_x, min_y, max_x, max_y]`, meters.
    pub extent: [f64; 4],
    pub default_resistance: f64,
    #[serde(default)]
    pub default_slope_deg: f64,
    #[serde(default)]
    pub resistance_zones: Vec<ZoneSection>,
    #[serde(default)]
    pub slope_zones: Vec<ZoneSection>,
    /// Optional geodetic anchor of the odom origin.
    #[serde(default)]
    pub origin_latlon: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ZoneSection {
    pub name: String,
    #[serde(default)]
    pub resistance: Option<f64>,
    #[serde(default)]
    pub slope_deg: Option<f64>,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScriptSection {
    pub waypoints: Vec<[f64; 2]>,
    pub cruise_speed: f64,
    pub max_yaw_rate: f64,
    pub max_accel: f64,
    #[serde(default = "default_time_cap")]
    pub time_cap: f64,
    #[serde(default)]
    pub initial_yaw_deg: Option<f64>,
    #[serde(default = "default_sim_rate")]
    pub sim_rate_hz: f64,
}

fn default_time_cap() -> f64 {
    600.0
}

fn default_sim_rate() -> f64 {
    100.0
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SensorsSection {
    #[serde(default)]
    pub gps: Vec<GpsSection>,
    #[serde(default)]
    pub imu: Vec<ImuSection>,
    #[serde(default)]
    pub encoder: Vec<EncoderSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GpsSection {
    pub name: String,
    #[serde(default = "default_gps_sigma_xy")]
    pub sigma_xy: f64,
    #[serde(default = "default_gps_sigma_z")]
    pub sigma_z: f64,
    #[serde(default = "default_gps_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub mount_offset: [f64; 3],
    #[serde(default)]
    pub dropout: DropoutSection,
    #[serde(default)]
    pub outlier: OutlierSection,
}

fn default_gps_sigma_xy() -> f64 {
    2.0
}

fn default_gps_sigma_z() -> f64 {
    4.0
}

fn default_gps_rate() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DropoutSection {
    #[serde(default = "default_dropout_period")]
    pub period: f64,
    #[serde(default = "default_dropout_outage")]
    pub outage: f64,
    /// Per-device offset; `None` assigns `gps_index * 3.3 s`.
    #[serde(default)]
    pub phase: Option<f64>,
}

impl Default for DropoutSection {
    fn default() -> Self {
        DropoutSection {
            period: default_dropout_period(),
            outage: default_dropout_outage(),
            phase: None,
        }
    }
}

fn default_dropout_period() -> f64 {
    10.0
}

fn default_dropout_outage() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutlierSection {
    #[serde(default)]
    pub probability: f64,
    #[serde(default = "default_outlier_offset")]
    pub offset: f64,
}

impl Default for OutlierSection {
    fn default() -> Self {
        OutlierSection {
            probability: 0.0,
            offset: default_outlier_offset(),
        }
    }
}

fn default_outlier_offset() -> f64 {
    50.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ImuSection {
    pub name: String,
    #[serde(default = "default_imu_sigma_orientation")]
    pub sigma_orientation: f64,
    #[serde(default = "default_imu_sigma_gyro")]
    pub sigma_gyro: f64,
    #[serde(default = "default_imu_sigma_accel")]
    pub sigma_accel: f64,
    #[serde(default = "default_imu_gyro_walk")]
    pub gyro_bias_walk: f64,
    #[serde(default = "default_imu_accel_walk")]
    pub accel_bias_walk: f64,
    #[serde(default = "default_imu_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub mount_offset: [f64; 3],
}

fn default_imu_sigma_orientation() -> f64 {
    0.05
}

fn default_imu_sigma_gyro() -> f64 {
    0.01
}

fn default_imu_sigma_accel() -> f64 {
    0.1
}

fn default_imu_gyro_walk() -> f64 {
    1e-4
}

fn default_imu_accel_walk() -> f64 {
    1e-3
}

fn default_imu_rate() -> f64 {
    100.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub name: String,
    #[serde(default = "default_encoder_sigma_rel")]
    pub sigma_speed_rel: f64,
    #[serde(default = "default_encoder_sigma_abs")]
    pub sigma_speed_abs: f64,
    #[serde(default = "default_encoder_rate")]
    pub rate_hz: f64,
}

fn default_encoder_sigma_rel() -> f64 {
    0.02
}

fn default_encoder_sigma_abs() -> f64 {
    0.02
}

fn default_encoder_rate() -> f64 {
    50.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_gate_quantile")]
    pub gate_quantile: f64,
    #[serde(default = "default_output_hz")]
    pub output_hz: f64,
    #[serde(default)]
    pub process_noise: ProcessNoiseSection,
    #[serde(default)]
    pub init: InitSection,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            gate_quantile: default_gate_quantile(),
            output_hz: default_output_hz(),
            process_noise: ProcessNoiseSection::default(),
            init: InitSection::default(),
        }
    }
}

fn default_gate_quantile() -> f64 {
    0.999
}

fn default_output_hz() -> f64 {
    10.0
}

/// Diagonal per-second process noise, one value per state sub-block.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProcessNoiseSection {
    pub position: f64,
    pub angles: f64,
    pub velocity: f64,
    pub angular_rate: f64,
    pub acceleration: f64,
}

impl Default for ProcessNoiseSection {
    fn default() -> Self {
        ProcessNoiseSection {
            position: 0.05,
            angles: 0.03,
            velocity: 0.1,
            angular_rate: 0.05,
            acceleration: 0.5,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub sigma_pos: f64,
    pub sigma_angles: f64,
    pub sigma_rates: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection {
            sigma_pos: 10.0,
            sigma_angles: 0.5,
            sigma_rates: 1.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub id: u32,
    pub filter: String,
    #[serde(default)]
    pub gps: Vec<String>,
    #[serde(default)]
    pub imu: Vec<String>,
    #[serde(default = "default_true")]
    pub encoder: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_true")]
    pub trajectories: bool,
    #[serde(default = "default_true")]
    pub maps: bool,
    #[serde(default = "default_true")]
    pub images: bool,
    #[serde(default = "default_true")]
    pub recording: bool,
    /// Worker threads for the group x seed work set; `None` uses the
    /// available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            trajectories: true,
            maps: true,
            images: true,
            recording: true,
            workers: None,
        }
    }
}

// ---------------------------------------------------------------------
// Validated runtime scenario.
// ---------------------------------------------------------------------

/// One sensor-configuration group resolved against the device table.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyGroup {
    pub id: u32,
    pub filter: FilterKind,
    pub active: Vec<DeviceId>,
    pub gps_count: usize,
    pub imu_count: usize,
    pub encoder: bool,
}

impl StudyGroup {
    pub fn is_active(&self, device: DeviceId) -> bool {
        self.active.contains(&device)
    }

    pub fn label(&self) -> String {
        format!("group_{:02}_{}", self.id, self.filter)
    }
}

/// A fully validated scenario, ready to run.
#[derive(Clone, Debug)]
pub struct ValidatedScenario {
    pub world: GroundTruthMap,
    pub script: WaypointScript,
    pub sim_rate_hz: f64,
    pub suite: SensorSuite,
    pub filter: FilterConfig,
    pub init_cov: InitCovariance,
    pub groups: Vec<StudyGroup>,
    pub seeds: Vec<u64>,
    pub outputs: OutputsSection,
    pub utm_anchor: Option<UtmPoint>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// The shipped default study: the representative five-resistance /
    /// one-slope world, a ~500 m course, three GPS + three IMU + encoder,
    /// and the 16-group EKF/UKF sensor matrix.
    pub fn default_study() -> Self {
        Self::from_toml(DEFAULT_STUDY_TOML).expect("embedded default config parses")
    }

    /// Validates every section, returning either a runnable scenario or
    /// the full list of violations.
    pub fn validate(&self) -> Result<ValidatedScenario, ConfigError> {
        let mut errors: Vec<String> = Vec::new();

        let extent = match Rect::new(
            self.world.extent[0],
            self.world.extent[1],
            self.world.extent[2],
            self.world.extent[3],
        ) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(format!("world.extent: {e}"));
                None
            }
        };

        let mut resistance_zones = Vec::new();
        let mut slope_zones = Vec::new();
        for (which, sections, target) in [
            (
                "resistance_zones",
                &self.world.resistance_zones,
                &mut resistance_zones,
            ),
            ("slope_zones", &self.world.slope_zones, &mut slope_zones),
        ] {
            for (k, z) in sections.iter().enumerate() {
                let poly = match Polygon::new(z.polygon.clone()) {
                    Ok(p) => p,
                    Err(e) => {
                        errors.push(format!("world.{which}[{k}] ({}): {e}", z.name));
                        continue;
                    }
                };
                let resistance = z.resistance.unwrap_or(self.world.default_resistance);
                let slope = z.slope_deg.unwrap_or(self.world.default_slope_deg);
                match TerrainZone::new(poly, resistance, slope) {
                    Ok(zone) => target.push(zone),
                    Err(e) => errors.push(format!("world.{which}[{k}] ({}): {e}", z.name)),
                }
            }
        }

        let world = extent.and_then(|extent| {
            match GroundTruthMap::new(
                resistance_zones,
                slope_zones,
                self.world.default_resistance,
                self.world.default_slope_deg,
                extent,
            ) {
                Ok(w) => Some(w),
                Err(e) => {
                    errors.push(format!("world: {e}"));
                    None
                }
            }
        });

        let utm_anchor = match self.world.origin_latlon {
            Some([lat, lon]) => match latlon_to_utm(lat, lon, 0.0) {
                Ok(p) => Some(p),
                Err(e) => {
                    errors.push(format!("world.origin_latlon: {e}"));
                    None
                }
            },
            None => None,
        };

        let script = match WaypointScript::new(
            self.script.waypoints.clone(),
            self.script.cruise_speed,
            self.script.max_yaw_rate,
            self.script.max_accel,
            self.script.time_cap,
        ) {
            Ok(mut s) => {
                if let Some(yaw_deg) = self.script.initial_yaw_deg {
                    s = s.with_initial_yaw(yaw_deg.to_radians());
                }
                Some(s)
            }
            Err(e) => {
                errors.push(format!("script: {e}"));
                None
            }
        };
        if let Some(w) = &world {
            for (k, [x, y]) in self.script.waypoints.iter().enumerate() {
                if !w.extent.contains(*x, *y) {
                    errors.push(format!(
                        "script.waypoints[{k}] ({x}, {y}) outside the extent"
                    ));
                }
            }
        }
        let sim_rate = self.script.sim_rate_hz;
        if !(sim_rate >= 10.0 && sim_rate <= 1000.0) {
            errors.push(format!("script.sim_rate_hz {sim_rate} outside [10, 1000]"));
        }

        if self.sensors.gps.len() > 3 {
            errors.push(format!(
                "sensors: at most 3 GPS devices supported, got {}",
                self.sensors.gps.len()
            ));
        }
        if self.sensors.imu.len() > 3 {
            errors.push(format!(
                "sensors: at most 3 IMU devices supported, got {}",
                self.sensors.imu.len()
            ));
        }
        if self.sensors.encoder.len() != 1 {
            errors.push(format!(
                "sensors: exactly one encoder required, got {}",
                self.sensors.encoder.len()
            ));
        }

        // device table in declaration order: GPS, IMU, encoder
        let mut suite = SensorSuite::default();
        let mut names: Vec<String> = Vec::new();
        for (k, g) in self.sensors.gps.iter().enumerate() {
            let model = GpsModel {
                sigma_xy: g.sigma_xy,
                sigma_z: g.sigma_z,
                rate_hz: g.rate_hz,
                dropout: DropoutSchedule {
                    period: g.dropout.period,
                    outage: g.dropout.outage,
                    phase: g.dropout.phase.unwrap_or(k as f64 * DEFAULT_PHASE_SPACING),
                },
                mount_offset: Vector3::from_column_slice(&g.mount_offset),
                outlier: OutlierModel {
                    probability: g.outlier.probability,
                    offset: g.outlier.offset,
                },
            };
            if let Err(e) = model.validate() {
                errors.push(format!("sensors.gps[{k}] ({}): {e}", g.name));
            }
            names.push(g.name.clone());
            suite.devices.push(Device {
                id: DeviceId(suite.devices.len() as u16),
                name: g.name.clone(),
                model: DeviceModel::Gps(model),
            });
        }
        for (k, m) in self.sensors.imu.iter().enumerate() {
            let model = ImuModel {
                sigma_orientation: m.sigma_orientation,
                sigma_gyro: m.sigma_gyro,
                sigma_accel: m.sigma_accel,
                gyro_bias_walk: m.gyro_bias_walk,
                accel_bias_walk: m.accel_bias_walk,
                rate_hz: m.rate_hz,
                mount_offset: Vector3::from_column_slice(&m.mount_offset),
            };
            if let Err(e) = model.validate() {
                errors.push(format!("sensors.imu[{k}] ({}): {e}", m.name));
            }
            names.push(m.name.clone());
            suite.devices.push(Device {
                id: DeviceId(suite.devices.len() as u16),
                name: m.name.clone(),
                model: DeviceModel::Imu(model),
            });
        }
        for (k, e) in self.sensors.encoder.iter().enumerate() {
            let model = EncoderModel {
                sigma_speed_rel: e.sigma_speed_rel,
                sigma_speed_abs: e.sigma_speed_abs,
                rate_hz: e.rate_hz,
            };
            if let Err(err) = model.validate() {
                errors.push(format!("sensors.encoder[{k}] ({}): {err}", e.name));
            }
            names.push(e.name.clone());
            suite.devices.push(Device {
                id: DeviceId(suite.devices.len() as u16),
                name: e.name.clone(),
                model: DeviceModel::Encoder(model),
            });
        }
        {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                errors.push("sensors: device names must be unique".into());
            }
        }
        if sim_rate > 0.0 {
            for d in &suite.devices {
                let rate = d.model.rate_hz();
                if rate <= 0.0 {
                    continue; // reported by the model validation above
                }
                let ratio = sim_rate / rate;
                if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
                    errors.push(format!(
                        "sensors: device '{}' rate {rate} Hz does not divide sim rate {sim_rate} Hz",
                        d.name
                    ));
                }
            }
        }

        // filter section
        if !(self.filter.gate_quantile > 0.0 && self.filter.gate_quantile < 1.0) {
            errors.push(format!(
                "filter.gate_quantile {} outside (0, 1)",
                self.filter.gate_quantile
            ));
        }
        if !(self.filter.output_hz > 0.0) {
            errors.push(format!(
                "filter.output_hz {} must be > 0",
                self.filter.output_hz
            ));
        }
        let q = &self.filter.process_noise;
        let noise = {
            let mut diag = DVector::zeros(crate::fusion::STATE_DIM);
            for i in 0..3 {
                diag[i] = q.position;
                diag[3 + i] = q.angles;
                diag[6 + i] = q.velocity;
                diag[9 + i] = q.angular_rate;
                diag[12 + i] = q.acceleration;
            }
            match NoiseConfig::from_diag(diag) {
                Ok(n) => Some(n),
                Err(e) => {
                    errors.push(format!("filter.process_noise: {e}"));
                    None
                }
            }
        };
        let init = &self.filter.init;
        if !(init.sigma_pos > 0.0 && init.sigma_angles > 0.0 && init.sigma_rates > 0.0) {
            errors.push("filter.init sigmas must be > 0".into());
        }

        // study section
        if self.study.seeds.is_empty() {
            errors.push("study.seeds must not be empty".into());
        }
        {
            let mut seeds = self.study.seeds.clone();
            seeds.sort_unstable();
            seeds.dedup();
            if seeds.len() != self.study.seeds.len() {
                errors.push("study.seeds must be unique".into());
            }
        }
        if self.study.groups.is_empty() {
            errors.push("study.groups must not be empty".into());
        }
        let mut groups = Vec::new();
        let mut seen_ids: Vec<u32> = Vec::new();
        for (k, g) in self.study.groups.iter().enumerate() {
            if seen_ids.contains(&g.id) {
                errors.push(format!("study.groups[{k}]: duplicate id {}", g.id));
            }
            seen_ids.push(g.id);
            let filter = match g.filter.to_ascii_lowercase().as_str() {
                "ekf" => Some(FilterKind::Ekf),
                "ukf" => Some(FilterKind::Ukf),
                other => {
                    errors.push(format!(
                        "study.groups[{k}]: unknown filter '{other}' (want ekf or ukf)"
                    ));
                    None
                }
            };
            let mut active = Vec::new();
            for (wanted, kind) in g
                .gps
                .iter()
                .map(|n| (n, "gps"))
                .chain(g.imu.iter().map(|n| (n, "imu")))
            {
                let found = suite.devices.iter().find(|d| {
                    d.name == *wanted
                        && matches!(
                            (kind, &d.model),
                            ("gps", DeviceModel::Gps(_)) | ("imu", DeviceModel::Imu(_))
                        )
                });
                match found {
                    Some(d) => active.push(d.id),
                    None => errors.push(format!(
                        "study.groups[{k}]: unknown {kind} device '{wanted}'"
                    )),
                }
            }
            if g.encoder {
                if let Some(enc) = suite
                    .devices
                    .iter()
                    .find(|d| matches!(d.model, DeviceModel::Encoder(_)))
                {
                    active.push(enc.id);
                }
            }
            if let Some(filter) = filter {
                groups.push(StudyGroup {
                    id: g.id,
                    filter,
                    active,
                    gps_count: g.gps.len(),
                    imu_count: g.imu.len(),
                    encoder: g.encoder,
                });
            }
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }

        let gate = GateConfig::from_quantile(self.filter.gate_quantile, 16)
            .map_err(|e| ConfigError::Invalid(vec![format!("filter.gate_quantile: {e}")]))?;
        Ok(ValidatedScenario {
            world: world.expect("validated"),
            script: script.expect("validated"),
            sim_rate_hz: sim_rate,
            suite,
            filter: FilterConfig {
                noise: noise.expect("validated"),
                gate,
                output_hz: self.filter.output_hz,
            },
            init_cov: InitCovariance {
                sigma_pos: init.sigma_pos,
                sigma_angles: init.sigma_angles,
                sigma_rates: init.sigma_rates,
            },
            groups,
            seeds: self.study.seeds.clone(),
            outputs: self.outputs.clone(),
            utm_anchor,
        })
    }
}

pub const DEFAULT_STUDY_TOML: &str = include_str!("../../../configs/default.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_study_validates() {
        let config = ScenarioConfig::default_study();
        let scenario = config.validate().expect("default config is valid");
        assert_eq!(scenario.groups.len(), 16);
        assert_eq!(scenario.suite.devices.len(), 7);
        assert_eq!(scenario.seeds.len(), 10);
        // groups 1..8 EKF, 9..16 UKF, encoder always on
        for g in &scenario.groups {
            assert!(g.encoder);
            let expected = if g.id <= 8 {
                FilterKind::Ekf
            } else {
                FilterKind::Ukf
            };
            assert_eq!(g.filter, expected, "group {}", g.id);
        }
        // paired groups k and k+8 share the sensor mask
        for k in 0..8 {
            let a = &scenario.groups[k];
            let b = &scenario.groups[k + 8];
            assert_eq!(a.gps_count, b.gps_count);
            assert_eq!(a.imu_count, b.imu_count);
        }
        // staggered default dropout phases
        let phases: Vec<f64> = scenario
            .suite
            .devices
            .iter()
            .filter_map(|d| match &d.model {
                DeviceModel::Gps(m) => Some(m.dropout.phase),
                _ => None,
            })
            .collect();
        assert_eq!(phases, vec![0.0, 3.3, 6.6]);
    }

    #[test]
    fn validation_collects_every_violation() {
        let mut config = ScenarioConfig::default_study();
        config.study.seeds.clear();
        config.study.groups[0].gps = vec!["nonexistent".into()];
        let dup = config.study.groups[2].id;
        config.study.groups[1].id = dup;
        config.filter.gate_quantile = 1.5;
        config.sensors.gps[0].sigma_xy = -1.0;
        let err = config.validate().unwrap_err();
        match err {
            ConfigError::Invalid(violations) => {
                assert!(violations.len() >= 5, "violations: {violations:?}");
                let all = violations.join("\n");
                assert!(all.contains("seeds"));
                assert!(all.contains("nonexistent"));
                assert!(all.contains("duplicate id"));
                assert!(all.contains("gate_quantile"));
                assert!(all.contains("gps[0]"));
            }
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn imu_referenced_as_gps_is_rejected() {
        let mut config = ScenarioConfig::default_study();
        config.study.groups[0].gps = vec!["imu1".into()];
        assert!(config.validate().is_err());
    }

    #[test]
    fn second_encoder_is_rejected() {
        let mut config = ScenarioConfig::default_study();
        config.sensors.encoder.push(EncoderSection {
            name: "encoder2".into(),
            sigma_speed_rel: 0.02,
            sigma_speed_abs: 0.02,
            rate_hz: 50.0,
        });
        assert!(config.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let config = ScenarioConfig::default_study();
        let text = toml::to_string(&config).unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn rate_mismatch_is_reported() {
        let mut config = ScenarioConfig::default_study();
        config.sensors.imu[0].rate_hz = 7.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("does not divide"));
    }
}
