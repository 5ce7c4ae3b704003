//! Unscented Kalman filter steps. Sigma points follow the `2L + 1`
//! construction with `lambda = 3 - L`, which gives a negative center
//! weight for the 15-state vehicle model (`a0 = -4`); a step whose
//! reconstructed covariance turns indefinite retries once with
//! `lambda = 0` before reporting covariance degeneracy.

use super::ekf::wrapped_innovation;
use super::{
    mahalanobis_gate, symmetrize, FusionError, GateConfig, GateDecision, NoiseConfig,
    ObservationModel, StateEstimate, TransitionModel, UpdateOutcome,
};
use crate::geo::wrap_radians;
use nalgebra::{DMatrix, DVector};

const SQRT_JITTER: f64 = 1e-12;
const PSD_PROBE_JITTER: f64 = 1e-9;

/// `lambda = 3 - L`, the Gaussian-tuned scaling for dimension `L`.
pub fn ukf_lambda(l: usize) -> f64 {
    3.0 - l as f64
}

fn weights_for(l: usize, lambda: f64) -> DVector<f64> {
    let denom = l as f64 + lambda;
    let mut w = DVector::from_element(2 * l + 1, 1.0 / (2.0 * denom));
    w[0] = lambda / denom;
    w
}

/// Sigma-point weights for the default `lambda = 3 - L` scaling:
/// `a0 = lambda / (L + lambda)`, `ai = 1 / (2 (L + lambda))`.
pub fn ukf_weights(l: usize) -> DVector<f64> {
    weights_for(l, ukf_lambda(l))
}

/// The `2L + 1` sigma points with their weights. Point 0 is the mean.
#[derive(Clone, Debug)]
pub struct SigmaSet {
    pub points: Vec<DVector<f64>>,
    pub weights: DVector<f64>,
}

/// Draws sigma points around `mean`: `X0 = mean`, `Xi = mean +/-
/// column_i(sqrt((L + lambda) P))`, with the square root taken as the
/// Cholesky factor of `P + eps I` (`eps = 1e-12`).
pub fn ukf_sigma_points(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    lambda: f64,
) -> Result<SigmaSet, FusionError> {
    let l = mean.len();
    let scale = l as f64 + lambda;
    if !(scale > 0.0) {
        return Err(FusionError::InvalidNoise(format!(
            "L + lambda = {scale} must be positive"
        )));
    }
    let jittered = cov + DMatrix::identity(l, l) * SQRT_JITTER;
    let chol = jittered
        .cholesky()
        .ok_or_else(|| FusionError::CovarianceDegenerate("sigma-point square root failed".into()))?;
    let root = chol.l() * scale.sqrt();

    let mut points = Vec::with_capacity(2 * l + 1);
    points.push(mean.clone());
    for i in 0..l {
        points.push(mean + root.column(i));
    }
    for i in 0..l {
        points.push(mean - root.column(i));
    }
    Ok(SigmaSet {
        points,
        weights: weights_for(l, lambda),
    })
}

/// Weighted mean of sigma points; angle components average through
/// `atan2` of weighted sines and cosines.
pub(super) fn weighted_mean(
    points: &[DVector<f64>],
    weights: &DVector<f64>,
    angle_indices: &[usize],
) -> DVector<f64> {
    let dim = points[0].len();
    let mut mean = DVector::zeros(dim);
    for (p, w) in points.iter().zip(weights.iter()) {
        mean.axpy(*w, p, 1.0);
    }
    for &i in angle_indices {
        let mut s = 0.0;
        let mut c = 0.0;
        for (p, w) in points.iter().zip(weights.iter()) {
            s += w * p[i].sin();
            c += w * p[i].cos();
        }
        mean[i] = s.atan2(c);
    }
    mean
}

fn residual(p: &DVector<f64>, mean: &DVector<f64>, angle_indices: &[usize]) -> DVector<f64> {
    let mut d = p - mean;
    for &i in angle_indices {
        d[i] = wrap_radians(d[i]);
    }
    d
}

fn weighted_cov(
    points: &[DVector<f64>],
    mean: &DVector<f64>,
    weights: &DVector<f64>,
    angle_indices: &[usize],
) -> DMatrix<f64> {
    let dim = mean.len();
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, w) in points.iter().zip(weights.iter()) {
        let d = residual(p, mean, angle_indices);
        cov.ger(*w, &d, &d, 1.0);
    }
    symmetrize(&mut cov);
    cov
}

fn psd_probe(cov: &DMatrix<f64>) -> bool {
    let l = cov.nrows();
    (cov + DMatrix::identity(l, l) * PSD_PROBE_JITTER)
        .cholesky()
        .is_some()
}

/// Prediction result; `lambda_fallback` marks steps that retried with
/// `lambda = 0`.
pub struct UkfPrediction {
    pub estimate: StateEstimate,
    pub lambda_fallback: bool,
}

/// UKF prediction: propagate sigma points through the process model and
/// reconstruct the weighted mean and covariance, plus `Q dt`.
pub fn ukf_predict_model(
    model: &dyn TransitionModel,
    e: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
) -> Result<UkfPrediction, FusionError> {
    if !(dt > 0.0) {
        return Err(FusionError::InvalidTimeStep(dt));
    }
    if noise.dim() != e.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: e.dim(),
            got: noise.dim(),
        });
    }
    let angles = model.angle_indices();
    let primary = ukf_lambda(e.dim());
    for (attempt, lambda) in [primary, 0.0].into_iter().enumerate() {
        let sigma = ukf_sigma_points(&e.x, &e.cov, lambda)?;
        let mut propagated = Vec::with_capacity(sigma.points.len());
        for p in &sigma.points {
            propagated.push(model.step(p, dt)?);
        }
        let mean = weighted_mean(&propagated, &sigma.weights, angles);
        let mut cov = weighted_cov(&propagated, &mean, &sigma.weights, angles) + noise.q_matrix(dt);
        symmetrize(&mut cov);
        if psd_probe(&cov) {
            let mut est = StateEstimate::new(mean, cov, e.t + dt);
            est.wrap_angles(angles);
            return Ok(UkfPrediction {
                estimate: est,
                lambda_fallback: attempt > 0,
            });
        }
        log::debug!("ukf predict covariance indefinite at lambda {lambda}, retrying");
    }
    Err(FusionError::CovarianceDegenerate(
        "ukf prediction covariance indefinite even at lambda 0".into(),
    ))
}

/// UKF correction: sigma points drawn from the predicted belief are pushed
/// through the measurement model; gate, gain, and the `P - K P_y K^T`
/// covariance correction follow.
pub fn ukf_update_model(
    obs: &dyn ObservationModel,
    e: &StateEstimate,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    gate: &GateConfig,
    state_angles: &[usize],
) -> Result<(StateEstimate, UpdateOutcome), FusionError> {
    if z.len() != obs.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: obs.dim(),
            got: z.len(),
        });
    }
    let primary = ukf_lambda(e.dim());
    let mut outcome = UpdateOutcome::default();
    for (attempt, lambda) in [primary, 0.0].into_iter().enumerate() {
        outcome.lambda_fallback = attempt > 0;
        let sigma = ukf_sigma_points(&e.x, &e.cov, lambda)?;
        let predicted: Vec<DVector<f64>> = sigma.points.iter().map(|p| obs.predict(p)).collect();
        let y_mean = weighted_mean(&predicted, &sigma.weights, obs.angle_indices());
        let mut p_y = weighted_cov(&predicted, &y_mean, &sigma.weights, obs.angle_indices()) + r;
        symmetrize(&mut p_y);

        let mut p_xy = DMatrix::zeros(e.dim(), obs.dim());
        for ((p, y), w) in sigma.points.iter().zip(&predicted).zip(sigma.weights.iter()) {
            let dx = residual(p, &e.x, state_angles);
            let dy = residual(y, &y_mean, obs.angle_indices());
            p_xy.ger(*w, &dx, &dy, 1.0);
        }

        let nu = wrapped_innovation(z, &y_mean, obs.angle_indices());
        match mahalanobis_gate(&nu, &p_y, gate) {
            GateDecision::Reject { distance } => {
                outcome.accepted = false;
                outcome.distance = Some(distance);
                return Ok((e.clone(), outcome));
            }
            GateDecision::Accept { distance } => outcome.distance = Some(distance),
            GateDecision::Bypass => outcome.gate_bypassed = true,
        }

        let chol = match p_y.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = DMatrix::identity(p_y.nrows(), p_y.ncols()) * PSD_PROBE_JITTER;
                match (p_y.clone() + jitter).cholesky() {
                    Some(c) => c,
                    None => {
                        log::warn!("ukf update skipped: measurement covariance not invertible");
                        outcome.gate_bypassed = true;
                        return Ok((e.clone(), outcome));
                    }
                }
            }
        };
        let k = &p_xy * chol.inverse();
        let mut x = &e.x + &k * &nu;
        for &i in state_angles {
            x[i] = wrap_radians(x[i]);
        }
        let mut cov = &e.cov - &k * &p_y * k.transpose();
        symmetrize(&mut cov);
        if psd_probe(&cov) {
            outcome.accepted = true;
            return Ok((StateEstimate::new(x, cov, e.t), outcome));
        }
        log::debug!("ukf update covariance indefinite at lambda {lambda}, retrying");
    }
    Err(FusionError::CovarianceDegenerate(
        "ukf update covariance indefinite even at lambda 0".into(),
    ))
}
