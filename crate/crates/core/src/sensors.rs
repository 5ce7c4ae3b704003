//! Synthetic GPS, IMU, and wheel-encoder models with seeded Gaussian
//! noise, per-device mounting, random-walk biases, and the scheduled GPS
//! signal-loss protocol. Every stream is bit-reproducible: each device
//! draws from its own ChaCha substream keyed by `(master_seed, device)`.

use crate::geo::wrap_radians;
use crate::world::VehicleState;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor model: {0}")]
    InvalidModel(String),
    #[error("device rate {device_hz} Hz does not divide the simulation rate {sim_hz} Hz")]
    RateMismatch { device_hz: f64, sim_hz: f64 },
}

/// Compact device handle; the scenario config maps it to a name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u16);

/// What a reading measures. GPS readings carry the antenna's body-frame
/// mount offset so the filter can predict the lever arm.
#[derive(Clone, Debug, PartialEq)]
pub enum ReadingKind {
    GpsPosition { mount_offset: Vector3<f64> },
    ImuBundle,
    EncoderVelocity,
}

impl ReadingKind {
    /// Merge priority: gps < imu < encoder.
    pub fn rank(&self) -> u8 {
        match self {
            ReadingKind::GpsPosition { .. } => 0,
            ReadingKind::ImuBundle => 1,
            ReadingKind::EncoderVelocity => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReadingKind::GpsPosition { .. } => 3,
            ReadingKind::ImuBundle => 9,
            ReadingKind::EncoderVelocity => 1,
        }
    }
}

/// One timestamped measurement with its noise covariance (diagonal for
/// every shipped model, stored dense to keep the filter math uniform).
#[derive(Clone, Debug, PartialEq)]
pub struct SensorReading {
    pub device: DeviceId,
    pub t: f64,
    pub kind: ReadingKind,
    pub value: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl SensorReading {
    fn from_diag(device: DeviceId, t: f64, kind: ReadingKind, value: DVector<f64>, diag: &[f64]) -> Self {
        debug_assert_eq!(kind.dim(), value.len());
        debug_assert_eq!(value.len(), diag.len());
        let noise_cov = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        SensorReading {
            device,
            t,
            kind,
            value,
            noise_cov,
        }
    }
}

/// Periodic GPS outage: the signal is lost for `outage` seconds at the
/// end of every `period`, shifted per device by `phase`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSchedule {
    pub period: f64,
    pub outage: f64,
    pub phase: f64,
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        DropoutSchedule {
            period: 10.0,
            outage: 1.0,
            phase: 0.0,
        }
    }
}

impl DropoutSchedule {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.period > 0.0 && self.outage >= 0.0 && self.outage < self.period) {
            return Err(SensorError::InvalidModel(format!(
                "dropout outage {} must lie in [0, period {})",
                self.outage, self.period
            )));
        }
        Ok(())
    }
}

/// True when the GPS signal is present at time `t`.
pub fn gps_available(d: &DropoutSchedule, t: f64) -> bool {
    let local = (t - d.phase).rem_euclid(d.period);
    local < d.period - d.outage
}

/// Occasional gross position faults layered on top of Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierModel {
    pub probability: f64,
    pub offset: f64,
}

impl Default for OutlierModel {
    fn default() -> Self {
        OutlierModel {
            probability: 0.0,
            offset: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpsModel {
    pub sigma_xy: f64,
    pub sigma_z: f64,
    pub rate_hz: f64,
    pub dropout: DropoutSchedule,
    pub mount_offset: Vector3<f64>,
    pub outlier: OutlierModel,
}

impl Default for GpsModel {
    fn default() -> Self {
        GpsModel {
            sigma_xy: 2.0,
            sigma_z: 4.0,
            rate_hz: 1.0,
            dropout: DropoutSchedule::default(),
            mount_offset: Vector3::zeros(),
            outlier: OutlierModel::default(),
        }
    }
}

impl GpsModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.sigma_xy >= 0.0 && self.sigma_z >= 0.0) {
            return Err(SensorError::InvalidModel("gps sigmas must be >= 0".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(SensorError::InvalidModel("gps rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier.probability) {
            return Err(SensorError::InvalidModel(
                "outlier probability must lie in [0, 1]".into(),
            ));
        }
        self.dropout.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuModel {
    pub sigma_orientation: f64,
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub rate_hz: f64,
    pub mount_offset: Vector3<f64>,
}

impl Default for ImuModel {
    fn default() -> Self {
        ImuModel {
            sigma_orientation: 0.05,
            sigma_gyro: 0.01,
            sigma_accel: 0.1,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
            rate_hz: 100.0,
            mount_offset: Vector3::zeros(),
        }
    }
}

impl ImuModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        let sigmas = [
            self.sigma_orientation,
            self.sigma_gyro,
            self.sigma_accel,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        ];
        if sigmas.iter().any(|s| *s < 0.0) {
            return Err(SensorError::InvalidModel("imu sigmas must be >= 0".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(SensorError::InvalidModel("imu rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub sigma_speed_rel: f64,
    pub sigma_speed_abs: f64,
    pub rate_hz: f64,
}

impl Default for EncoderModel {
    fn default() -> Self {
        EncoderModel {
            sigma_speed_rel: 0.02,
            sigma_speed_abs: 0.02,
            rate_hz: 50.0,
        }
    }
}

impl EncoderModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.sigma_speed_rel < 0.0 || self.sigma_speed_abs < 0.0 {
            return Err(SensorError::InvalidModel(
                "encoder sigmas must be >= 0".into(),
            ));
        }
        if !(self.rate_hz > 0.0) {
            return Err(SensorError::InvalidModel("encoder rate must be > 0".into()));
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Samples the GPS at `t`; absent during a scheduled outage. The value is
/// the antenna's world position (pose composed with the mount offset)
/// plus independent zero-mean noise.
pub fn measure_gps(
    device: DeviceId,
    model: &GpsModel,
    truth: &VehicleState,
    t: f64,
    rng: &mut impl Rng,
) -> Option<SensorReading> {
    if !gps_available(&model.dropout, t) {
        return None;
    }
    let antenna = truth.pose.position() + truth.pose.rotation() * model.mount_offset;
    let mut value = DVector::from_column_slice(&[
        antenna.x + model.sigma_xy * normal(rng),
        antenna.y + model.sigma_xy * normal(rng),
        antenna.z + model.sigma_z * normal(rng),
    ]);
    if model.outlier.probability > 0.0 && rng.gen::<f64>() < model.outlier.probability {
        let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        value[0] += model.outlier.offset * theta.cos();
        value[1] += model.outlier.offset * theta.sin();
    }
    let s2 = model.sigma_xy * model.sigma_xy;
    Some(SensorReading::from_diag(
        device,
        t,
        ReadingKind::GpsPosition {
            mount_offset: model.mount_offset,
        },
        value,
        &[s2, s2, model.sigma_z * model.sigma_z],
    ))
}

/// Random-walk bias state of one IMU. The gyro bias integrates into the
/// reported orientation, which is how heading drift enters an otherwise
/// absolute (magnetometer-style) attitude output.
#[derive(Clone, Debug, Default)]
pub struct ImuBiasState {
    pub orientation: Vector3<f64>,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Samples the IMU at `t`, stepping the bias random walks at the device
/// rate before the measurement is formed.
pub fn measure_imu(
    device: DeviceId,
    model: &ImuModel,
    bias: &mut ImuBiasState,
    truth: &VehicleState,
    t: f64,
    rng: &mut impl Rng,
) -> SensorReading {
    let dt = 1.0 / model.rate_hz;
    let sq = dt.sqrt();
    for k in 0..3 {
        bias.gyro[k] += model.gyro_bias_walk * sq * normal(rng);
    }
    for k in 0..3 {
        bias.accel[k] += model.accel_bias_walk * sq * normal(rng);
    }
    bias.orientation += bias.gyro * dt;

    let angles = [truth.pose.roll, truth.pose.pitch, truth.pose.yaw];
    let mut value = DVector::zeros(9);
    for k in 0..3 {
        value[k] = wrap_radians(angles[k] + bias.orientation[k] + model.sigma_orientation * normal(rng));
    }
    for k in 0..3 {
        value[3 + k] = truth.angular_rate[k] + bias.gyro[k] + model.sigma_gyro * normal(rng);
    }
    for k in 0..3 {
        value[6 + k] = truth.accel[k] + bias.accel[k] + model.sigma_accel * normal(rng);
    }

    let so2 = model.sigma_orientation * model.sigma_orientation;
    let sg2 = model.sigma_gyro * model.sigma_gyro;
    let sa2 = model.sigma_accel * model.sigma_accel;
    SensorReading::from_diag(
        device,
        t,
        ReadingKind::ImuBundle,
        value,
        &[so2, so2, so2, sg2, sg2, sg2, sa2, sa2, sa2],
    )
}

/// Samples the wheel encoder: `|v_fwd| (1 + e_rel) + e_abs`.
pub fn measure_encoder(
    device: DeviceId,
    model: &EncoderModel,
    truth: &VehicleState,
    t: f64,
    rng: &mut impl Rng,
) -> SensorReading {
    let speed = truth.forward_speed().abs();
    let value = speed * (1.0 + model.sigma_speed_rel * normal(rng))
        + model.sigma_speed_abs * normal(rng);
    let var = (model.sigma_speed_rel * speed).powi(2) + model.sigma_speed_abs.powi(2);
    SensorReading::from_diag(
        device,
        t,
        ReadingKind::EncoderVelocity,
        DVector::from_element(1, value),
        &[var],
    )
}

/// Merges per-device streams into one list ordered by time, breaking ties
/// by kind priority (gps < imu < encoder) and then device id. Stable.
pub fn merge_streams(streams: Vec<Vec<SensorReading>>) -> Vec<SensorReading> {
    let mut merged: Vec<SensorReading> = streams.into_iter().flatten().collect();
    merged.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| a.kind.rank().cmp(&b.kind.rank()))
            .then_with(|| a.device.cmp(&b.device))
    });
    merged
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeviceModel {
    Gps(GpsModel),
    Imu(ImuModel),
    Encoder(EncoderModel),
}

impl DeviceModel {
    pub fn rate_hz(&self) -> f64 {
        match self {
            DeviceModel::Gps(m) => m.rate_hz,
            DeviceModel::Imu(m) => m.rate_hz,
            DeviceModel::Encoder(m) => m.rate_hz,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        match self {
            DeviceModel::Gps(m) => m.validate(),
            DeviceModel::Imu(m) => m.validate(),
            DeviceModel::Encoder(m) => m.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Device {
    pub id: DeviceId,
    pub name: String,
    pub model: DeviceModel,
}

/// The full set of mounted sensors for a scenario.
#[derive(Clone, Debug, Default)]
pub struct SensorSuite {
    pub devices: Vec<Device>,
}

impl SensorSuite {
    pub fn device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Simulates every device over a uniformly sampled truth trajectory
    /// (`sim_rate_hz` states per second starting at t = 0) and merges the
    /// streams. Device rates must divide the simulation rate so samples
    /// land exactly on trajectory states.
    pub fn simulate(
        &self,
        trajectory: &[VehicleState],
        sim_rate_hz: f64,
        master_seed: u64,
    ) -> Result<Vec<SensorReading>, SensorError> {
        let mut streams = Vec::with_capacity(self.devices.len());
        for device in &self.devices {
            device.model.validate()?;
            let rate = device.model.rate_hz();
            let ratio = sim_rate_hz / rate;
            let step = ratio.round();
            if step < 1.0 || (ratio - step).abs() > 1e-9 {
                return Err(SensorError::RateMismatch {
                    device_hz: rate,
                    sim_hz: sim_rate_hz,
                });
            }
            let step = step as usize;

            let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
            rng.set_stream(u64::from(device.id.0) + 1);
            let mut stream = Vec::with_capacity(trajectory.len() / step + 1);
            let mut bias = ImuBiasState::default();
            for state in trajectory.iter().step_by(step) {
                let t = state.t;
                match &device.model {
                    DeviceModel::Gps(m) => {
                        if let Some(r) = measure_gps(device.id, m, state, t, &mut rng) {
                            stream.push(r);
                        }
                    }
                    DeviceModel::Imu(m) => {
                        stream.push(measure_imu(device.id, m, &mut bias, state, t, &mut rng));
                    }
                    DeviceModel::Encoder(m) => {
                        stream.push(measure_encoder(device.id, m, state, t, &mut rng));
                    }
                }
            }
            streams.push(stream);
        }
        Ok(merge_streams(streams))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Pose3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn still_truth(t: f64) -> VehicleState {
        VehicleState::at_rest(Pose3::origin(), t)
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn dropout_schedule_examples() {
        let d = DropoutSchedule::default();
        assert!(!gps_available(&d, 9.5));
        assert!(gps_available(&d, 5.0));
        assert!(gps_available(&d, 0.0));
        assert!(!gps_available(&d, 9.0));
        assert!(gps_available(&d, 10.0));
    }

    #[test]
    fn dropout_duty_cycle_is_ten_percent() {
        let d = DropoutSchedule::default();
        let mut lost = 0usize;
        let n = 100_000;
        for k in 0..n {
            if !gps_available(&d, k as f64 * 1e-3) {
                lost += 1;
            }
        }
        let fraction = lost as f64 / n as f64;
        assert!((fraction - 0.10).abs() <= 0.001, "fraction {fraction}");
    }

    #[test]
    fn dropout_phase_shifts_the_window() {
        let d = DropoutSchedule {
            phase: 3.3,
            ..DropoutSchedule::default()
        };
        assert!(!gps_available(&d, 12.5)); // (12.5 - 3.3) mod 10 = 9.2
        assert!(gps_available(&d, 9.5));
    }

    #[test]
    fn gps_exact_when_noiseless() {
        let model = GpsModel {
            sigma_xy: 0.0,
            sigma_z: 0.0,
            ..GpsModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.pose = Pose3::new(3.0, -2.0, 1.5, 0.0, 0.0, 0.4);
        let r = measure_gps(DeviceId(0), &model, &truth, 0.0, &mut rng(1)).unwrap();
        assert_eq!(r.value.as_slice(), &[3.0, -2.0, 1.5]);
        assert_eq!(r.kind.dim(), 3);
    }

    #[test]
    fn gps_mount_offset_rotates_with_yaw() {
        let model = GpsModel {
            sigma_xy: 0.0,
            sigma_z: 0.0,
            mount_offset: Vector3::new(0.0, 1.0, 0.0),
            ..GpsModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.pose = Pose3::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = measure_gps(DeviceId(0), &model, &truth, 0.0, &mut rng(1)).unwrap();
        assert_relative_eq!(r.value[0], -1.0, epsilon = 1e-12);
        assert!(r.value[1].abs() < 1e-12);
    }

    #[test]
    fn gps_absent_inside_outage() {
        let model = GpsModel::default();
        let truth = still_truth(9.0);
        assert!(measure_gps(DeviceId(0), &model, &truth, 9.0, &mut rng(1)).is_none());
    }

    #[test]
    fn gps_noise_std_matches_configuration() {
        let model = GpsModel::default();
        let truth = still_truth(0.0);
        let mut r = rng(42);
        let n = 10_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let reading = measure_gps(DeviceId(0), &model, &truth, 0.0, &mut r).unwrap();
            xs.push(reading.value[0]);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((1.95..=2.05).contains(&std), "sample std {std}");
    }

    #[test]
    fn gps_noise_passes_kolmogorov_smirnov() {
        // standardized x residuals vs the unit normal, alpha = 0.01
        let model = GpsModel::default();
        let truth = still_truth(0.0);
        let mut r = rng(7);
        let n = 10_000;
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            let reading = measure_gps(DeviceId(0), &model, &truth, 0.0, &mut r).unwrap();
            z.push(reading.value[0] / model.sigma_xy);
        }
        z.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut d = 0.0f64;
        for (i, zi) in z.iter().enumerate() {
            let cdf = normal.cdf(*zi);
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        // asymptotic critical value at alpha = 0.01: 1.6276 / sqrt(n)
        let crit = 1.6276 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} >= {crit}");
    }

    #[test]
    fn imu_exact_when_noiseless() {
        let model = ImuModel {
            sigma_orientation: 0.0,
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            ..ImuModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.pose = Pose3::new(0.0, 0.0, 0.0, 0.1, -0.2, 0.3);
        truth.angular_rate = Vector3::new(0.01, 0.02, 0.03);
        truth.accel = Vector3::new(0.5, 0.0, -0.1);
        let mut bias = ImuBiasState::default();
        let r = measure_imu(DeviceId(1), &model, &mut bias, &truth, 0.0, &mut rng(1));
        let expect = [0.1, -0.2, 0.3, 0.01, 0.02, 0.03, 0.5, 0.0, -0.1];
        for (got, want) in r.value.iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn imu_yaw_stays_wrapped_near_pi() {
        let model = ImuModel {
            sigma_orientation: 0.05,
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            ..ImuModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.pose = Pose3::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::PI - 1e-3);
        let mut r = rng(3);
        let mut bias = ImuBiasState::default();
        for _ in 0..500 {
            let reading = measure_imu(DeviceId(1), &model, &mut bias, &truth, 0.0, &mut r);
            let yaw = reading.value[2];
            assert!(yaw > -std::f64::consts::PI && yaw <= std::f64::consts::PI);
        }
    }

    #[test]
    fn gyro_bias_variance_grows_linearly_with_time() {
        // stationary vehicle, only the gyro walk active: the reported rate
        // equals the bias, whose variance follows walk^2 * t
        let model = ImuModel {
            sigma_orientation: 0.0,
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            gyro_bias_walk: 1e-3,
            accel_bias_walk: 0.0,
            rate_hz: 100.0,
            ..ImuModel::default()
        };
        let runs = 200;
        let checkpoints = [50.0f64, 100.0];
        let mut samples = vec![Vec::with_capacity(runs); checkpoints.len()];
        for run in 0..runs {
            let mut r = rng(1000 + run as u64);
            let mut bias = ImuBiasState::default();
            let mut step = 0usize;
            for &t_end in &checkpoints {
                let target = (t_end * model.rate_hz) as usize;
                while step < target {
                    let t = step as f64 / model.rate_hz;
                    let reading =
                        measure_imu(DeviceId(1), &model, &mut bias, &still_truth(t), t, &mut r);
                    step += 1;
                    if step == target {
                        samples[checkpoints.iter().position(|c| *c == t_end).unwrap()]
                            .push(reading.value[5]);
                    }
                }
            }
        }
        for (cp, vals) in checkpoints.iter().zip(&samples) {
            let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
            let expected = model.gyro_bias_walk.powi(2) * cp;
            assert!(
                (var - expected).abs() / expected < 0.2,
                "t={cp}: var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn encoder_exact_and_zero_speed_multiplicative() {
        let model = EncoderModel {
            sigma_speed_rel: 0.0,
            sigma_speed_abs: 0.0,
            ..EncoderModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.velocity = Vector3::new(2.0, 0.0, 0.0);
        let r = measure_encoder(DeviceId(2), &model, &truth, 0.0, &mut rng(1));
        assert_eq!(r.value[0], 2.0);

        let model = EncoderModel {
            sigma_speed_rel: 0.05,
            sigma_speed_abs: 0.0,
            ..EncoderModel::default()
        };
        let truth = still_truth(0.0);
        let r = measure_encoder(DeviceId(2), &model, &truth, 0.0, &mut rng(1));
        assert_eq!(r.value[0], 0.0);
    }

    #[test]
    fn encoder_noise_std_matches_configuration() {
        let model = EncoderModel {
            sigma_speed_rel: 0.05,
            sigma_speed_abs: 0.0,
            ..EncoderModel::default()
        };
        let mut truth = still_truth(0.0);
        truth.velocity = Vector3::new(2.0, 0.0, 0.0);
        let mut r = rng(11);
        let n = 10_000;
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            vs.push(measure_encoder(DeviceId(2), &model, &truth, 0.0, &mut r).value[0]);
        }
        let mean = vs.iter().sum::<f64>() / n as f64;
        let std =
            (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((std - 0.1).abs() / 0.1 < 0.05, "sample std {std}");
    }

    #[test]
    fn merge_keeps_single_stream_unchanged() {
        let model = EncoderModel::default();
        let mut truth = still_truth(0.0);
        truth.velocity = Vector3::new(1.0, 0.0, 0.0);
        let mut r = rng(5);
        let stream: Vec<_> = (0..10)
            .map(|k| measure_encoder(DeviceId(2), &model, &truth, k as f64 * 0.02, &mut r))
            .collect();
        let merged = merge_streams(vec![vec![], stream.clone()]);
        assert_eq!(merged, stream);
    }

    #[test]
    fn merge_breaks_time_ties_by_kind_then_device() {
        let gps = GpsModel {
            sigma_xy: 0.0,
            sigma_z: 0.0,
            ..GpsModel::default()
        };
        let truth = still_truth(0.0);
        let g1 = measure_gps(DeviceId(3), &gps, &truth, 0.0, &mut rng(1)).unwrap();
        let g0 = measure_gps(DeviceId(1), &gps, &truth, 0.0, &mut rng(2)).unwrap();
        let e = measure_encoder(DeviceId(0), &EncoderModel::default(), &truth, 0.0, &mut rng(3));
        let merged = merge_streams(vec![vec![g1], vec![e], vec![g0]]);
        assert_eq!(merged[0].device, DeviceId(1)); // gps before encoder, low id first
        assert_eq!(merged[1].device, DeviceId(3));
        assert_eq!(merged[2].device, DeviceId(0));
    }

    proptest! {
        #[test]
        fn merge_is_a_sorted_permutation(ts1 in proptest::collection::vec(0.0f64..50.0, 0..40),
                                         ts2 in proptest::collection::vec(0.0f64..50.0, 0..40)) {
            let mk = |ts: &[f64], dev: u16| -> Vec<SensorReading> {
                let mut sorted = ts.to_vec();
                sorted.sort_by(f64::total_cmp);
                sorted.iter().map(|t| SensorReading::from_diag(
                    DeviceId(dev), *t, ReadingKind::EncoderVelocity,
                    DVector::from_element(1, *t), &[1.0])).collect()
            };
            let a = mk(&ts1, 0);
            let b = mk(&ts2, 1);
            let merged = merge_streams(vec![a.clone(), b.clone()]);
            prop_assert_eq!(merged.len(), a.len() + b.len());
            for w in merged.windows(2) {
                prop_assert!(w[0].t <= w[1].t);
            }
            // naive oracle: concatenate and stable-sort by time only
            let mut naive: Vec<f64> = ts1.iter().chain(ts2.iter()).copied().collect();
            naive.sort_by(f64::total_cmp);
            let got: Vec<f64> = merged.iter().map(|r| r.t).collect();
            prop_assert_eq!(got, naive);
        }
    }

    #[test]
    fn suite_simulation_is_bit_reproducible() {
        let mut truth = Vec::new();
        for k in 0..500 {
            let t = k as f64 * 0.01;
            let mut s = still_truth(t);
            s.velocity = Vector3::new(1.5, 0.0, 0.0);
            s.pose = Pose3::new(1.5 * t, 0.0, 0.0, 0.0, 0.0, 0.0);
            truth.push(s);
        }
        let suite = SensorSuite {
            devices: vec![
                Device {
                    id: DeviceId(0),
                    name: "gps1".into(),
                    model: DeviceModel::Gps(GpsModel::default()),
                },
                Device {
                    id: DeviceId(1),
                    name: "imu1".into(),
                    model: DeviceModel::Imu(ImuModel::default()),
                },
                Device {
                    id: DeviceId(2),
                    name: "encoder".into(),
                    model: DeviceModel::Encoder(EncoderModel::default()),
                },
            ],
        };
        let a = suite.simulate(&truth, 100.0, 42).unwrap();
        let b = suite.simulate(&truth, 100.0, 42).unwrap();
        assert_eq!(a, b);
        let c = suite.simulate(&truth, 100.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn suite_rejects_rate_mismatch() {
        let truth = vec![still_truth(0.0)];
        let suite = SensorSuite {
            devices: vec![Device {
                id: DeviceId(0),
                name: "imu".into(),
                model: DeviceModel::Imu(ImuModel {
                    rate_hz: 7.0,
                    ..ImuModel::default()
                }),
            }],
        };
        assert!(matches!(
            suite.simulate(&truth, 100.0, 1),
            Err(SensorError::RateMismatch { .. })
        ));
    }
}
