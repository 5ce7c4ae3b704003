//! Estimation core: a shared 15-state kinematic process model, EKF and
//! UKF corrections over it, Mahalanobis outlier gating, and the filter
//! runner that consumes merged sensor streams.
//!
//! State layout (`state_idx`): position x/y/z (odom meters), roll/pitch/
//! yaw (radians, wrapped to `(-pi, pi]`), body-frame velocity, body-frame
//! angular rate, body-frame acceleration.
//!
//! The EKF/UKF algebra is generic over [`TransitionModel`] and
//! [`ObservationModel`], so the same code paths can be exercised against
//! closed-form linear-Gaussian references in tests; the vehicle-flavored
//! entry points below bind them to the 15-state model and sensor
//! readings.

pub mod ekf;
pub mod kinematics;
pub mod observation;
pub mod ukf;

use crate::geo::wrap_radians;
use crate::sensors::SensorReading;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

pub use ekf::{ekf_predict_model, ekf_update_model};
pub use kinematics::{process_jacobian, process_model, VehicleKinematics};
pub use observation::{measurement_model, VehicleObservation};
pub use ukf::{ukf_lambda, ukf_predict_model, ukf_sigma_points, ukf_update_model, ukf_weights, SigmaSet};

pub const STATE_DIM: usize = 15;

/// Indices into the 15-dimensional vehicle state.
pub mod state_idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
    pub const ROLL: usize = 3;
    pub const PITCH: usize = 4;
    pub const YAW: usize = 5;
    pub const VX: usize = 6;
    pub const VY: usize = 7;
    pub const VZ: usize = 8;
    pub const WX: usize = 9;
    pub const WY: usize = 10;
    pub const WZ: usize = 11;
    pub const AX: usize = 12;
    pub const AY: usize = 13;
    pub const AZ: usize = 14;
}

/// Angle-valued components of the vehicle state.
pub const STATE_ANGLE_INDICES: [usize; 3] = [state_idx::ROLL, state_idx::PITCH, state_idx::YAW];

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("pitch {0} rad within 1e-6 of +/- pi/2 (gimbal singularity)")]
    GimbalSingularity(f64),
    #[error("time step {0} outside the supported range")]
    InvalidTimeStep(f64),
    #[error("covariance degenerate: {0}")]
    CovarianceDegenerate(String),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
    #[error("invalid gate configuration: {0}")]
    InvalidGate(String),
    #[error("reading stream not time-ordered: {prev} followed by {next}")]
    StreamOrder { prev: f64, next: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Gaussian belief over a state vector at time `t`. Covariance is kept
/// symmetric; angle components stay wrapped in `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEstimate {
    pub x: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

impl StateEstimate {
    pub fn new(x: DVector<f64>, cov: DMatrix<f64>, t: f64) -> Self {
        debug_assert_eq!(x.len(), cov.nrows());
        debug_assert_eq!(cov.nrows(), cov.ncols());
        StateEstimate { x, cov, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.cov);
    }

    pub fn wrap_angles(&mut self, angle_indices: &[usize]) {
        for &i in angle_indices {
            self.x[i] = wrap_radians(self.x[i]);
        }
    }

    /// Largest symmetry violation, `max |P - P^T|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).abs().max()
    }

    pub fn position(&self) -> (f64, f64, f64) {
        (self.x[0], self.x[1], self.x[2])
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Diagonal per-second process noise; scaled by `dt` at prediction time.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    q_diag: DVector<f64>,
}

impl NoiseConfig {
    pub fn from_diag(q_diag: DVector<f64>) -> Result<Self, FusionError> {
        if q_diag.iter().any(|q| !(*q >= 0.0)) {
            return Err(FusionError::InvalidNoise(
                "process noise entries must be >= 0".into(),
            ));
        }
        Ok(NoiseConfig { q_diag })
    }

    /// Default vehicle process noise: directly measured variables get
    /// relatively small diagonal entries.
    pub fn vehicle_default() -> Self {
        let mut q = DVector::zeros(STATE_DIM);
        for i in 0..3 {
            q[i] = 0.05; // position
            q[3 + i] = 0.03; // angles
            q[6 + i] = 0.1; // velocity
            q[9 + i] = 0.05; // angular rate
            q[12 + i] = 0.5; // acceleration
        }
        NoiseConfig { q_diag: q }
    }

    pub fn with_entry(mut self, idx: usize, value: f64) -> Self {
        self.q_diag[idx] = value;
        self
    }

    pub fn dim(&self) -> usize {
        self.q_diag.len()
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.q_diag
    }

    pub fn q_matrix(&self, dt: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(&self.q_diag * dt))
    }
}

/// Mahalanobis gate thresholds per measurement dimension, derived from a
/// chi-square quantile on the squared distance.
#[derive(Clone, Debug, PartialEq)]
pub struct GateConfig {
    quantile: f64,
    thresholds: Vec<f64>,
}

impl GateConfig {
    pub fn from_quantile(quantile: f64, max_dim: usize) -> Result<Self, FusionError> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(FusionError::InvalidGate(format!(
                "quantile {quantile} outside (0, 1)"
            )));
        }
        let mut thresholds = vec![f64::INFINITY; max_dim + 1];
        for (dim, slot) in thresholds.iter_mut().enumerate().skip(1) {
            *slot = chi_square_quantile(quantile, dim)?.sqrt();
        }
        Ok(GateConfig {
            quantile,
            thresholds,
        })
    }

    /// The shipped default: 99.9 % chi-square quantile per dimension.
    pub fn vehicle_default() -> Self {
        GateConfig::from_quantile(0.999, 16).expect("default gate")
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    /// Distance cutoff for a `dim`-dimensional measurement.
    pub fn threshold(&self, dim: usize) -> f64 {
        match self.thresholds.get(dim) {
            Some(t) => *t,
            None => chi_square_quantile(self.quantile, dim)
                .map(f64::sqrt)
                .unwrap_or(f64::INFINITY),
        }
    }
}

/// Chi-square quantile by bisection on the CDF (the library inverse is
/// only accurate to ~1e-5, too loose for pinned thresholds).
fn chi_square_quantile(quantile: f64, dim: usize) -> Result<f64, FusionError> {
    let chi2 =
        ChiSquared::new(dim as f64).map_err(|e| FusionError::InvalidGate(e.to_string()))?;
    let mut hi = 1.0f64;
    while chi2.cdf(hi) < quantile {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(FusionError::InvalidGate(format!(
                "quantile {quantile} unreachable for dim {dim}"
            )));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2.cdf(mid) < quantile {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of gating one innovation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateDecision {
    Accept { distance: f64 },
    Reject { distance: f64 },
    /// Innovation covariance was singular; the reading is accepted and the
    /// event surfaces as a diagnostic.
    Bypass,
}

impl GateDecision {
    pub fn is_accept(&self) -> bool {
        !matches!(self, GateDecision::Reject { .. })
    }
}

/// Computes `D = sqrt(nu^T S^-1 nu)` and compares against the per-
/// dimension threshold. Angle components of `nu` must be pre-wrapped.
pub fn mahalanobis_gate(
    innovation: &DVector<f64>,
    s: &DMatrix<f64>,
    gate: &GateConfig,
) -> GateDecision {
    match s.clone().cholesky() {
        Some(chol) => {
            let solved = chol.solve(innovation);
            let d2 = innovation.dot(&solved).max(0.0);
            let distance = d2.sqrt();
            if distance <= gate.threshold(innovation.len()) {
                GateDecision::Accept { distance }
            } else {
                GateDecision::Reject { distance }
            }
        }
        None => {
            log::warn!("singular innovation covariance; gate bypassed");
            GateDecision::Bypass
        }
    }
}

/// Dynamics interface for the prediction step.
pub trait TransitionModel {
    fn dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>, FusionError>;
    fn jacobian(&self, x: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>, FusionError>;
    fn angle_indices(&self) -> &[usize] {
        &[]
    }
}

/// Measurement interface for the correction step.
pub trait ObservationModel {
    fn dim(&self) -> usize;
    fn predict(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn angle_indices(&self) -> &[usize] {
        &[]
    }
}

/// What happened to one measurement inside an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateOutcome {
    /// The state absorbed the measurement.
    pub accepted: bool,
    /// Gate distance when the gate could be evaluated.
    pub distance: Option<f64>,
    /// Singular innovation covariance was encountered.
    pub gate_bypassed: bool,
    /// UKF fell back to lambda = 0 for this step.
    pub lambda_fallback: bool,
}

// ---------------------------------------------------------------------
// Vehicle-flavored entry points.
// ---------------------------------------------------------------------

/// EKF prediction over the vehicle kinematics.
pub fn ekf_predict(
    e: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
) -> Result<StateEstimate, FusionError> {
    ekf::ekf_predict_model(&VehicleKinematics, e, noise, dt)
}

/// EKF correction with one sensor reading, gated by Mahalanobis distance.
pub fn ekf_update(
    e: &StateEstimate,
    reading: &SensorReading,
    gate: &GateConfig,
) -> Result<(StateEstimate, UpdateOutcome), FusionError> {
    let obs = VehicleObservation::for_reading(&reading.kind);
    ekf::ekf_update_model(
        &obs,
        e,
        &reading.value,
        &reading.noise_cov,
        gate,
        &STATE_ANGLE_INDICES,
    )
}

/// UKF prediction over the vehicle kinematics.
pub fn ukf_predict(
    e: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
) -> Result<StateEstimate, FusionError> {
    ukf::ukf_predict_model(&VehicleKinematics, e, noise, dt).map(|r| r.estimate)
}

/// UKF correction with one sensor reading.
pub fn ukf_update(
    e: &StateEstimate,
    reading: &SensorReading,
    gate: &GateConfig,
) -> Result<(StateEstimate, UpdateOutcome), FusionError> {
    let obs = VehicleObservation::for_reading(&reading.kind);
    ukf::ukf_update_model(
        &obs,
        e,
        &reading.value,
        &reading.noise_cov,
        gate,
        &STATE_ANGLE_INDICES,
    )
}

// ---------------------------------------------------------------------
// Filter runner.
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Ekf,
    Ukf,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterKind::Ekf => write!(f, "ekf"),
            FilterKind::Ukf => write!(f, "ukf"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    pub gate: GateConfig,
    /// Rate of the predict-only output grid emitted through sensor gaps.
    pub output_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            noise: NoiseConfig::vehicle_default(),
            gate: GateConfig::vehicle_default(),
            output_hz: 10.0,
        }
    }
}

/// Initial covariance scales for the vehicle filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitCovariance {
    pub sigma_pos: f64,
    pub sigma_angles: f64,
    pub sigma_rates: f64,
}

impl Default for InitCovariance {
    fn default() -> Self {
        InitCovariance {
            sigma_pos: 10.0,
            sigma_angles: 0.5,
            sigma_rates: 1.0,
        }
    }
}

/// Builds the starting belief: position from the first GPS fix when GPS
/// is alive at stream start, the odom origin otherwise.
pub fn initial_vehicle_estimate(
    readings: &[SensorReading],
    init: &InitCovariance,
    t0: f64,
) -> StateEstimate {
    let mut x = DVector::zeros(STATE_DIM);
    if let Some(fix) = readings
        .iter()
        .find(|r| matches!(r.kind, crate::sensors::ReadingKind::GpsPosition { .. }))
    {
        if fix.t <= t0 + TIME_EPS {
            x[0] = fix.value[0];
            x[1] = fix.value[1];
            x[2] = fix.value[2];
        }
    }
    let mut diag = DVector::zeros(STATE_DIM);
    for i in 0..3 {
        diag[i] = init.sigma_pos * init.sigma_pos;
        diag[3 + i] = init.sigma_angles * init.sigma_angles;
    }
    for i in 6..STATE_DIM {
        diag[i] = init.sigma_rates * init.sigma_rates;
    }
    StateEstimate::new(x, DMatrix::from_diagonal(&diag), t0)
}

/// Why a state was emitted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Emission {
    /// Posterior after absorbing (or gating) the reading at this index.
    PostUpdate { reading: usize },
    /// Predict-only output-grid sample during a sensor gap.
    GridPredict,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterReport {
    pub readings: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub gate_bypasses: usize,
    pub lambda_fallbacks: usize,
    pub grid_samples: usize,
}

/// Output of one filter run: every emitted state, what each emission was,
/// the indices forming the fixed-rate output grid, and which readings the
/// gate rejected.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub states: Vec<StateEstimate>,
    pub emissions: Vec<Emission>,
    pub grid_indices: Vec<usize>,
    pub rejected: Vec<usize>,
    pub report: FilterReport,
}

impl FilterRun {
    /// The grid-aligned estimate sequence used for evaluation and mapping.
    pub fn grid_states(&self) -> impl Iterator<Item = &StateEstimate> {
        self.grid_indices.iter().map(|&i| &self.states[i])
    }
}

const TIME_EPS: f64 = 1e-9;
const MAX_PREDICT_STEP: f64 = 0.5;

fn predict_dispatch(
    kind: FilterKind,
    e: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
    report: &mut FilterReport,
) -> Result<StateEstimate, FusionError> {
    match kind {
        FilterKind::Ekf => ekf::ekf_predict_model(&VehicleKinematics, e, noise, dt),
        FilterKind::Ukf => {
            let r = ukf::ukf_predict_model(&VehicleKinematics, e, noise, dt)?;
            if r.lambda_fallback {
                report.lambda_fallbacks += 1;
            }
            Ok(r.estimate)
        }
    }
}

fn predict_to(
    kind: FilterKind,
    cfg: &FilterConfig,
    est: &mut StateEstimate,
    target_t: f64,
    report: &mut FilterReport,
) -> Result<(), FusionError> {
    while target_t - est.t > TIME_EPS {
        let dt = (target_t - est.t).min(MAX_PREDICT_STEP);
        *est = predict_dispatch(kind, est, &cfg.noise, dt, report)?;
    }
    est.t = target_t;
    Ok(())
}

/// Runs the filter over a time-ordered reading stream: predict to each
/// reading, update, and emit the posterior; during gaps, emit predict-only
/// samples on the fixed output grid until `t_end`.
pub fn run_filter(
    kind: FilterKind,
    cfg: &FilterConfig,
    readings: &[SensorReading],
    init: StateEstimate,
    t_end: f64,
) -> Result<FilterRun, FusionError> {
    if !(cfg.output_hz > 0.0) {
        return Err(FusionError::InvalidNoise(
            "output rate must be > 0".into(),
        ));
    }
    let t0 = init.t;
    let grid_dt = 1.0 / cfg.output_hz;
    let grid_time = |k: u64| t0 + k as f64 * grid_dt;

    let mut est = init;
    let mut states = Vec::new();
    let mut emissions = Vec::new();
    let mut grid_indices = Vec::new();
    let mut rejected = Vec::new();
    let mut report = FilterReport::default();
    let mut grid_k: u64 = 0;

    let mut i = 0usize;
    let n = readings.len();
    while i < n {
        let group_t = readings[i].t;
        if group_t < est.t - TIME_EPS {
            return Err(FusionError::StreamOrder {
                prev: est.t,
                next: group_t,
            });
        }

        // predict-only grid samples strictly before this reading group
        while grid_time(grid_k) < group_t - TIME_EPS {
            let g = grid_time(grid_k);
            if g - est.t > TIME_EPS {
                predict_to(kind, cfg, &mut est, g, &mut report)?;
            }
            states.push(est.clone());
            emissions.push(Emission::GridPredict);
            grid_indices.push(states.len() - 1);
            report.grid_samples += 1;
            grid_k += 1;
        }

        predict_to(kind, cfg, &mut est, group_t, &mut report)?;
        while i < n && (readings[i].t - group_t).abs() <= TIME_EPS {
            let reading = &readings[i];
            let (next, outcome) = match kind {
                FilterKind::Ekf => ekf_update(&est, reading, &cfg.gate)?,
                FilterKind::Ukf => {
                    let (next, outcome) = ukf_update(&est, reading, &cfg.gate)?;
                    if outcome.lambda_fallback {
                        report.lambda_fallbacks += 1;
                    }
                    (next, outcome)
                }
            };
            est = next;
            report.readings += 1;
            if outcome.gate_bypassed {
                report.gate_bypasses += 1;
            }
            if outcome.accepted {
                report.accepted += 1;
            } else if !outcome.gate_bypassed {
                report.rejected += 1;
                rejected.push(i);
            }
            states.push(est.clone());
            emissions.push(Emission::PostUpdate { reading: i });
            i += 1;
        }

        // a reading group sitting exactly on a grid slot doubles as the
        // grid sample
        if (grid_time(grid_k) - group_t).abs() <= TIME_EPS {
            grid_indices.push(states.len() - 1);
            report.grid_samples += 1;
            grid_k += 1;
        }
    }

    while grid_time(grid_k) <= t_end + TIME_EPS {
        let g = grid_time(grid_k);
        if g - est.t > TIME_EPS {
            predict_to(kind, cfg, &mut est, g, &mut report)?;
        }
        states.push(est.clone());
        emissions.push(Emission::GridPredict);
        grid_indices.push(states.len() - 1);
        report.grid_samples += 1;
        grid_k += 1;
    }

    Ok(FilterRun {
        states,
        emissions,
        grid_indices,
        rejected,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{DeviceId, ReadingKind};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn gps_reading(t: f64, x: f64, y: f64, z: f64, sigma: f64) -> SensorReading {
        let s2 = sigma * sigma;
        SensorReading {
            device: DeviceId(0),
            t,
            kind: ReadingKind::GpsPosition {
                mount_offset: Vector3::zeros(),
            },
            value: DVector::from_column_slice(&[x, y, z]),
            noise_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&[s2, s2, s2])),
        }
    }

    #[test]
    fn gate_examples() {
        let gate = GateConfig::from_quantile(0.999, 9).unwrap();
        // nu = (3, 4), S = I -> D = 5 (euclidean reduction)
        let nu = DVector::from_column_slice(&[3.0, 4.0]);
        let s = DMatrix::identity(2, 2);
        match mahalanobis_gate(&nu, &s, &gate) {
            GateDecision::Reject { distance } => assert_relative_eq!(distance, 5.0, epsilon = 1e-12),
            other => panic!("expected reject, got {other:?}"),
        }
        // nu = (2, 0), S = diag(4, 4) -> D = 1
        let nu = DVector::from_column_slice(&[2.0, 0.0]);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 4.0]));
        match mahalanobis_gate(&nu, &s, &gate) {
            GateDecision::Accept { distance } => assert_relative_eq!(distance, 1.0, epsilon = 1e-12),
            other => panic!("expected accept, got {other:?}"),
        }
        // nu = 0 -> D = 0, accept
        let nu = DVector::zeros(3);
        let s = DMatrix::identity(3, 3);
        assert!(matches!(
            mahalanobis_gate(&nu, &s, &gate),
            GateDecision::Accept { distance } if distance == 0.0
        ));
    }

    #[test]
    fn gate_bypasses_on_singular_covariance() {
        let gate = GateConfig::vehicle_default();
        let nu = DVector::from_column_slice(&[1.0, 1.0]);
        let s = DMatrix::zeros(2, 2);
        let decision = mahalanobis_gate(&nu, &s, &gate);
        assert_eq!(decision, GateDecision::Bypass);
        assert!(decision.is_accept());
    }

    #[test]
    fn gate_thresholds_match_chi_square_quantiles() {
        let gate = GateConfig::from_quantile(0.999, 9).unwrap();
        assert_relative_eq!(gate.threshold(1), 3.290_526_731, epsilon = 1e-6);
        assert_relative_eq!(gate.threshold(3), 4.033_142_224, epsilon = 1e-6);
        assert_relative_eq!(gate.threshold(9), 5.279_883_036, epsilon = 1e-6);
    }

    #[test]
    fn empty_stream_dead_reckons_on_the_grid() {
        let cfg = FilterConfig::default();
        let init = initial_vehicle_estimate(&[], &InitCovariance::default(), 0.0);
        let run = run_filter(FilterKind::Ekf, &cfg, &[], init, 2.0).unwrap();
        assert_eq!(run.states.len(), 21); // t = 0, 0.1, ..., 2.0
        assert!(run
            .emissions
            .iter()
            .all(|e| matches!(e, Emission::GridPredict)));
        for (k, s) in run.grid_states().enumerate() {
            assert_relative_eq!(s.t, k as f64 * 0.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn perfect_fix_snaps_position() {
        let cfg = FilterConfig::default();
        let init = initial_vehicle_estimate(&[], &InitCovariance::default(), 0.0);
        let fix = gps_reading(0.5, 12.0, -7.0, 1.0, 1e-6);
        let run = run_filter(FilterKind::Ekf, &cfg, &[fix], init, 1.0).unwrap();
        let post = run
            .states
            .iter()
            .zip(&run.emissions)
            .find(|(_, e)| matches!(e, Emission::PostUpdate { .. }))
            .map(|(s, _)| s)
            .unwrap();
        assert_relative_eq!(post.x[0], 12.0, epsilon = 1e-5);
        assert_relative_eq!(post.x[1], -7.0, epsilon = 1e-5);
    }

    #[test]
    fn identical_streams_give_bit_identical_runs() {
        let cfg = FilterConfig::default();
        let readings: Vec<_> = (0..20)
            .map(|k| gps_reading(k as f64 * 0.3, k as f64, 0.5 * k as f64, 0.0, 2.0))
            .collect();
        let init = initial_vehicle_estimate(&readings, &InitCovariance::default(), 0.0);
        let a = run_filter(FilterKind::Ukf, &cfg, &readings, init.clone(), 6.0).unwrap();
        let b = run_filter(FilterKind::Ukf, &cfg, &readings, init, 6.0).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.cov, sb.cov);
        }
    }

    #[test]
    fn non_monotonic_stream_is_an_error() {
        let cfg = FilterConfig::default();
        let readings = vec![
            gps_reading(1.0, 0.0, 0.0, 0.0, 2.0),
            gps_reading(0.5, 0.0, 0.0, 0.0, 2.0),
        ];
        let init = initial_vehicle_estimate(&readings, &InitCovariance::default(), 0.0);
        assert!(matches!(
            run_filter(FilterKind::Ekf, &cfg, &readings, init, 2.0),
            Err(FusionError::StreamOrder { .. })
        ));
    }

    #[test]
    fn init_uses_first_fix_only_at_stream_start() {
        let at_start = vec![gps_reading(0.0, 5.0, 6.0, 0.5, 2.0)];
        let est = initial_vehicle_estimate(&at_start, &InitCovariance::default(), 0.0);
        assert_eq!(est.x[0], 5.0);
        assert_eq!(est.x[1], 6.0);

        // GPS starting inside an outage: first fix arrives late, init at origin
        let late = vec![gps_reading(1.0, 5.0, 6.0, 0.5, 2.0)];
        let est = initial_vehicle_estimate(&late, &InitCovariance::default(), 0.0);
        assert_eq!(est.x[0], 0.0);
        assert_eq!(est.cov[(0, 0)], 100.0);
        assert_eq!(est.cov[(3, 3)], 0.25);
        assert_eq!(est.cov[(6, 6)], 1.0);
    }

    #[test]
    fn grid_sample_coincides_with_reading_posterior() {
        let cfg = FilterConfig::default();
        // readings exactly on grid slots
        let readings: Vec<_> = (0..=10)
            .map(|k| gps_reading(k as f64 * 0.1, 1.0, 2.0, 0.0, 2.0))
            .collect();
        let init = initial_vehicle_estimate(&readings, &InitCovariance::default(), 0.0);
        let run = run_filter(FilterKind::Ekf, &cfg, &readings, init, 1.0).unwrap();
        assert_eq!(run.grid_indices.len(), 11);
        for &gi in &run.grid_indices {
            assert!(matches!(run.emissions[gi], Emission::PostUpdate { .. }));
        }
    }
}
