//! Binary sensor recordings ("TFSR"). A recording bundles everything a
//! replay needs to reproduce a study group byte-for-byte without
//! re-simulation: the device table, the group matrix, filter tuning, the
//! world definition, the ground-truth trajectory, and the merged reading
//! stream as length-implicit little-endian frames
//! (`device_id u16, t f64, value f64s, cov_diag f64s`).

use crate::config::StudyGroup;
use crate::fusion::{FilterConfig, FilterKind, GateConfig, InitCovariance, NoiseConfig, STATE_DIM};
use crate::geo::Pose3;
use crate::sensors::{
    Device, DeviceId, DeviceModel, DropoutSchedule, EncoderModel, GpsModel, ImuModel,
    OutlierModel, ReadingKind, SensorReading, SensorSuite,
};
use crate::world::{GroundTruthMap, Polygon, Rect, TerrainZone, VehicleState};
use nalgebra::{DMatrix, DVector, Vector3};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("recording io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("incompatible recording: format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("recording parse error at byte {offset}: {what}")]
    Parse { offset: usize, what: String },
}

const MAGIC: &[u8; 4] = b"TFSR";
const FORMAT_VERSION: u16 = 1;

/// Filter tuning as persisted in a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedFilter {
    pub q_diag: Vec<f64>,
    pub gate_quantile: f64,
    pub output_hz: f64,
    pub init: InitCovariance,
}

impl RecordedFilter {
    pub fn to_filter_config(&self) -> FilterConfig {
        FilterConfig {
            noise: NoiseConfig::from_diag(DVector::from_column_slice(&self.q_diag))
                .expect("validated on write"),
            gate: GateConfig::from_quantile(self.gate_quantile, 16).expect("validated on write"),
            output_hz: self.output_hz,
        }
    }
}

/// One self-contained sensor recording for one seed.
#[derive(Clone, Debug)]
pub struct Recording {
    pub master_seed: u64,
    pub sim_rate_hz: f64,
    pub t_end: f64,
    pub suite: SensorSuite,
    pub groups: Vec<StudyGroup>,
    pub filter: RecordedFilter,
    pub world: GroundTruthMap,
    pub truth: Vec<VehicleState>,
    pub readings: Vec<SensorReading>,
}

fn kind_code(model: &DeviceModel) -> u8 {
    match model {
        DeviceModel::Gps(_) => 0,
        DeviceModel::Imu(_) => 1,
        DeviceModel::Encoder(_) => 2,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn vec3(&mut self, v: &Vector3<f64>) {
        self.f64(v.x);
        self.f64(v.y);
        self.f64(v.z);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn err<T>(&self, what: impl Into<String>) -> Result<T, RecordingError> {
        Err(RecordingError::Parse {
            offset: self.pos,
            what: what.into(),
        })
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], RecordingError> {
        if self.pos + len > self.buf.len() {
            return Err(RecordingError::Parse {
                offset: self.pos,
                what: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, RecordingError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, RecordingError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, RecordingError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, RecordingError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, RecordingError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<String, RecordingError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| RecordingError::Parse {
            offset: self.pos,
            what: format!("{what} is not utf-8"),
        })
    }

    fn vec3(&mut self, what: &str) -> Result<Vector3<f64>, RecordingError> {
        Ok(Vector3::new(
            self.f64(what)?,
            self.f64(what)?,
            self.f64(what)?,
        ))
    }
}

fn write_zones(w: &mut Writer, zones: &[TerrainZone]) {
    w.u16(zones.len() as u16);
    for z in zones {
        w.f64(z.resistance_coeff);
        w.f64(z.slope_deg);
        w.u16(z.boundary.vertices().len() as u16);
        for [x, y] in z.boundary.vertices() {
            w.f64(*x);
            w.f64(*y);
        }
    }
}

fn read_zones(r: &mut Reader) -> Result<Vec<TerrainZone>, RecordingError> {
    let count = r.u16("zone count")? as usize;
    let mut zones = Vec::with_capacity(count);
    for _ in 0..count {
        let resistance = r.f64("zone resistance")?;
        let slope = r.f64("zone slope")?;
        let verts = r.u16("vertex count")? as usize;
        let mut polygon = Vec::with_capacity(verts);
        for _ in 0..verts {
            polygon.push([r.f64("vertex x")?, r.f64("vertex y")?]);
        }
        let poly = Polygon::new(polygon).map_err(|e| RecordingError::Parse {
            offset: r.pos,
            what: format!("bad zone polygon: {e}"),
        })?;
        zones.push(
            TerrainZone::new(poly, resistance, slope).map_err(|e| RecordingError::Parse {
                offset: r.pos,
                what: format!("bad zone: {e}"),
            })?,
        );
    }
    Ok(zones)
}

impl Recording {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u64(self.master_seed);
        w.f64(self.sim_rate_hz);
        w.f64(self.t_end);

        // device table
        w.u16(self.suite.devices.len() as u16);
        for d in &self.suite.devices {
            w.u16(d.id.0);
            w.u8(kind_code(&d.model));
            w.str(&d.name);
            match &d.model {
                DeviceModel::Gps(m) => {
                    w.vec3(&m.mount_offset);
                    w.f64(m.sigma_xy);
                    w.f64(m.sigma_z);
                    w.f64(m.rate_hz);
                    w.f64(m.dropout.period);
                    w.f64(m.dropout.outage);
                    w.f64(m.dropout.phase);
                    w.f64(m.outlier.probability);
                    w.f64(m.outlier.offset);
                }
                DeviceModel::Imu(m) => {
                    w.vec3(&m.mount_offset);
                    w.f64(m.sigma_orientation);
                    w.f64(m.sigma_gyro);
                    w.f64(m.sigma_accel);
                    w.f64(m.gyro_bias_walk);
                    w.f64(m.accel_bias_walk);
                    w.f64(m.rate_hz);
                }
                DeviceModel::Encoder(m) => {
                    w.f64(m.sigma_speed_rel);
                    w.f64(m.sigma_speed_abs);
                    w.f64(m.rate_hz);
                }
            }
        }

        // group table
        w.u16(self.groups.len() as u16);
        for g in &self.groups {
            w.u32(g.id);
            w.u8(match g.filter {
                FilterKind::Ekf => 0,
                FilterKind::Ukf => 1,
            });
            w.u16(g.gps_count as u16);
            w.u16(g.imu_count as u16);
            w.u8(u8::from(g.encoder));
            w.u16(g.active.len() as u16);
            for id in &g.active {
                w.u16(id.0);
            }
        }

        // filter tuning
        w.u16(self.filter.q_diag.len() as u16);
        for q in &self.filter.q_diag {
            w.f64(*q);
        }
        w.f64(self.filter.gate_quantile);
        w.f64(self.filter.output_hz);
        w.f64(self.filter.init.sigma_pos);
        w.f64(self.filter.init.sigma_angles);
        w.f64(self.filter.init.sigma_rates);

        // world
        w.f64(self.world.extent.min_x);
        w.f64(self.world.extent.min_y);
        w.f64(self.world.extent.max_x);
        w.f64(self.world.extent.max_y);
        w.f64(self.world.default_resistance);
        w.f64(self.world.default_slope_deg);
        write_zones(&mut w, self.world.resistance_zones());
        write_zones(&mut w, self.world.slope_zones());

        // ground-truth trajectory
        w.u64(self.truth.len() as u64);
        for s in &self.truth {
            w.f64(s.t);
            w.f64(s.pose.x);
            w.f64(s.pose.y);
            w.f64(s.pose.z);
            w.f64(s.pose.roll);
            w.f64(s.pose.pitch);
            w.f64(s.pose.yaw);
            w.vec3(&s.velocity);
            w.vec3(&s.angular_rate);
            w.vec3(&s.accel);
        }

        // frames
        w.u64(self.readings.len() as u64);
        for r in &self.readings {
            w.u16(r.device.0);
            w.f64(r.t);
            for v in r.value.iter() {
                w.f64(*v);
            }
            for k in 0..r.value.len() {
                w.f64(r.noise_cov[(k, k)]);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RecordingError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(RecordingError::Parse {
                offset: 0,
                what: format!("bad magic {magic:02x?}"),
            });
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(RecordingError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let master_seed = r.u64("master seed")?;
        let sim_rate_hz = r.f64("sim rate")?;
        let t_end = r.f64("t_end")?;

        let device_count = r.u16("device count")? as usize;
        let mut suite = SensorSuite::default();
        for _ in 0..device_count {
            let id = DeviceId(r.u16("device id")?);
            let kind = r.u8("device kind")?;
            let name = r.str("device name")?;
            let model = match kind {
                0 => {
                    let mount_offset = r.vec3("gps mount")?;
                    DeviceModel::Gps(GpsModel {
                        mount_offset,
                        sigma_xy: r.f64("gps sigma xy")?,
                        sigma_z: r.f64("gps sigma z")?,
                        rate_hz: r.f64("gps rate")?,
                        dropout: DropoutSchedule {
                            period: r.f64("dropout period")?,
                            outage: r.f64("dropout outage")?,
                            phase: r.f64("dropout phase")?,
                        },
                        outlier: OutlierModel {
                            probability: r.f64("outlier probability")?,
                            offset: r.f64("outlier offset")?,
                        },
                    })
                }
                1 => {
                    let mount_offset = r.vec3("imu mount")?;
                    DeviceModel::Imu(ImuModel {
                        mount_offset,
                        sigma_orientation: r.f64("imu sigma orientation")?,
                        sigma_gyro: r.f64("imu sigma gyro")?,
                        sigma_accel: r.f64("imu sigma accel")?,
                        gyro_bias_walk: r.f64("imu gyro walk")?,
                        accel_bias_walk: r.f64("imu accel walk")?,
                        rate_hz: r.f64("imu rate")?,
                    })
                }
                2 => DeviceModel::Encoder(EncoderModel {
                    sigma_speed_rel: r.f64("encoder sigma rel")?,
                    sigma_speed_abs: r.f64("encoder sigma abs")?,
                    rate_hz: r.f64("encoder rate")?,
                }),
                other => return r.err(format!("unknown device kind {other}")),
            };
            suite.devices.push(Device { id, name, model });
        }

        let group_count = r.u16("group count")? as usize;
        let mut groups = Vec::with_capacity(group_count);
        for _ in 0..group_count {
            let id = r.u32("group id")?;
            let filter = match r.u8("group filter")? {
                0 => FilterKind::Ekf,
                1 => FilterKind::Ukf,
                other => return r.err(format!("unknown filter code {other}")),
            };
            let gps_count = r.u16("gps count")? as usize;
            let imu_count = r.u16("imu count")? as usize;
            let encoder = r.u8("encoder flag")? != 0;
            let active_count = r.u16("active count")? as usize;
            let mut active = Vec::with_capacity(active_count);
            for _ in 0..active_count {
                active.push(DeviceId(r.u16("active id")?));
            }
            groups.push(StudyGroup {
                id,
                filter,
                active,
                gps_count,
                imu_count,
                encoder,
            });
        }

        let q_len = r.u16("q length")? as usize;
        if q_len != STATE_DIM {
            return r.err(format!(
                "process noise has {q_len} entries, expected {STATE_DIM}"
            ));
        }
        let mut q_diag = Vec::with_capacity(q_len);
        for _ in 0..q_len {
            q_diag.push(r.f64("q entry")?);
        }
        let filter = RecordedFilter {
            q_diag,
            gate_quantile: r.f64("gate quantile")?,
            output_hz: r.f64("output rate")?,
            init: InitCovariance {
                sigma_pos: r.f64("init sigma pos")?,
                sigma_angles: r.f64("init sigma angles")?,
                sigma_rates: r.f64("init sigma rates")?,
            },
        };

        let extent = Rect::new(
            r.f64("extent min x")?,
            r.f64("extent min y")?,
            r.f64("extent max x")?,
            r.f64("extent max y")?,
        )
        .map_err(|e| RecordingError::Parse {
            offset: r.pos,
            what: format!("bad extent: {e}"),
        })?;
        let default_resistance = r.f64("default resistance")?;
        let default_slope = r.f64("default slope")?;
        let resistance_zones = read_zones(&mut r)?;
        let slope_zones = read_zones(&mut r)?;
        let world = GroundTruthMap::new(
            resistance_zones,
            slope_zones,
            default_resistance,
            default_slope,
            extent,
        )
        .map_err(|e| RecordingError::Parse {
            offset: r.pos,
            what: format!("bad world: {e}"),
        })?;

        let state_count = r.u64("state count")? as usize;
        let mut truth = Vec::with_capacity(state_count);
        for _ in 0..state_count {
            let t = r.f64("state t")?;
            let x = r.f64("state x")?;
            let y = r.f64("state y")?;
            let z = r.f64("state z")?;
            let roll = r.f64("state roll")?;
            let pitch = r.f64("state pitch")?;
            let yaw = r.f64("state yaw")?;
            truth.push(VehicleState {
                pose: Pose3 {
                    x,
                    y,
                    z,
                    roll,
                    pitch,
                    yaw,
                },
                velocity: r.vec3("state velocity")?,
                angular_rate: r.vec3("state angular rate")?,
                accel: r.vec3("state accel")?,
                t,
            });
        }

        let frame_count = r.u64("frame count")? as usize;
        let mut readings = Vec::with_capacity(frame_count);
        for _ in 0..frame_count {
            let device = DeviceId(r.u16("frame device")?);
            let t = r.f64("frame t")?;
            let kind = match suite.device(device) {
                Some(d) => match &d.model {
                    DeviceModel::Gps(m) => ReadingKind::GpsPosition {
                        mount_offset: m.mount_offset,
                    },
                    DeviceModel::Imu(_) => ReadingKind::ImuBundle,
                    DeviceModel::Encoder(_) => ReadingKind::EncoderVelocity,
                },
                None => return r.err(format!("frame references unknown device {}", device.0)),
            };
            let dim = kind.dim();
            let mut value = DVector::zeros(dim);
            for k in 0..dim {
                value[k] = r.f64("frame value")?;
            }
            let mut diag = DVector::zeros(dim);
            for k in 0..dim {
                diag[k] = r.f64("frame cov")?;
            }
            readings.push(SensorReading {
                device,
                t,
                kind,
                value,
                noise_cov: DMatrix::from_diagonal(&diag),
            });
        }
        if r.pos != bytes.len() {
            return r.err(format!("{} trailing bytes", bytes.len() - r.pos));
        }

        Ok(Recording {
            master_seed,
            sim_rate_hz,
            t_end,
            suite,
            groups,
            filter,
            world,
            truth,
            readings,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RecordingError> {
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path).map_err(|source| RecordingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&bytes).map_err(|source| RecordingError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self, RecordingError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| RecordingError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Self::from_bytes(&bytes)
    }

    pub fn group(&self, id: u32) -> Option<&StudyGroup> {
        self.groups.iter().find(|g| g.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::world::drive_waypoints;

    fn sample_recording() -> Recording {
        let scenario = ScenarioConfig::default_study().validate().unwrap();
        let mut script = scenario.script.clone();
        script.waypoints = vec![[0.0, 0.0], [30.0, 5.0]];
        let truth = drive_waypoints(&scenario.world, &script, 0.01).unwrap();
        let readings = scenario
            .suite
            .simulate(&truth.states, scenario.sim_rate_hz, 7)
            .unwrap();
        Recording {
            master_seed: 7,
            sim_rate_hz: scenario.sim_rate_hz,
            t_end: truth.states.last().unwrap().t,
            suite: scenario.suite.clone(),
            groups: scenario.groups.clone(),
            filter: RecordedFilter {
                q_diag: scenario.filter.noise.diag().iter().copied().collect(),
                gate_quantile: 0.999,
                output_hz: 10.0,
                init: scenario.init_cov,
            },
            world: scenario.world.clone(),
            truth: truth.states,
            readings,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let rec = sample_recording();
        let bytes = rec.to_bytes();
        let back = Recording::from_bytes(&bytes).unwrap();
        assert_eq!(back.master_seed, rec.master_seed);
        assert_eq!(back.suite.devices, rec.suite.devices);
        assert_eq!(back.groups, rec.groups);
        assert_eq!(back.filter, rec.filter);
        assert_eq!(back.truth, rec.truth);
        assert_eq!(back.readings, rec.readings);
        // serialization of the parsed copy is byte-identical
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn version_mismatch_is_detected() {
        let rec = sample_recording();
        let mut bytes = rec.to_bytes();
        bytes[4] = 99; // bump the version field
        assert!(matches!(
            Recording::from_bytes(&bytes),
            Err(RecordingError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn corrupt_and_truncated_recordings_report_offsets() {
        let rec = sample_recording();
        let bytes = rec.to_bytes();
        match Recording::from_bytes(&bytes[..bytes.len() / 2]) {
            Err(RecordingError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        match Recording::from_bytes(b"NOPE") {
            Err(RecordingError::Parse { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }
    }
}
