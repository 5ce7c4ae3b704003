//! Extended Kalman filter steps over a [`TransitionModel`] /
//! [`ObservationModel`] pair. Covariance corrections use the Joseph form
//! and are re-symmetrized; angle components are wrapped throughout.

use super::{
    mahalanobis_gate, symmetrize, FusionError, GateConfig, GateDecision, NoiseConfig,
    ObservationModel, StateEstimate, TransitionModel, UpdateOutcome,
};
use crate::geo::wrap_radians;
use nalgebra::{DMatrix, DVector};

/// Prediction: `x <- f(x, dt)`, `P <- A P A^T + Q dt`.
pub fn ekf_predict_model(
    model: &dyn TransitionModel,
    e: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
) -> Result<StateEstimate, FusionError> {
    if !(dt > 0.0) {
        return Err(FusionError::InvalidTimeStep(dt));
    }
    if noise.dim() != e.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: e.dim(),
            got: noise.dim(),
        });
    }
    let x = model.step(&e.x, dt)?;
    let a = model.jacobian(&e.x, dt)?;
    let mut cov = &a * &e.cov * a.transpose() + noise.q_matrix(dt);
    symmetrize(&mut cov);
    let mut out = StateEstimate::new(x, cov, e.t + dt);
    out.wrap_angles(model.angle_indices());
    Ok(out)
}

pub(super) fn wrapped_innovation(
    z: &DVector<f64>,
    predicted: &DVector<f64>,
    angle_indices: &[usize],
) -> DVector<f64> {
    let mut nu = z - predicted;
    for &i in angle_indices {
        nu[i] = wrap_radians(nu[i]);
    }
    nu
}

/// Correction with exact measurement jacobians and Mahalanobis gating.
/// Rejected readings leave the estimate unchanged; a singular innovation
/// covariance bypasses the gate and, if still unusable for the gain,
/// skips the correction with a diagnostic.
pub fn ekf_update_model(
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
    let predicted = obs.predict(&e.x);
    let nu = wrapped_innovation(z, &predicted, obs.angle_indices());
    let h = obs.jacobian(&e.x);
    let mut s = &h * &e.cov * h.transpose() + r;
    symmetrize(&mut s);

    let decision = mahalanobis_gate(&nu, &s, gate);
    let mut outcome = UpdateOutcome::default();
    match decision {
        GateDecision::Reject { distance } => {
            outcome.distance = Some(distance);
            return Ok((e.clone(), outcome));
        }
        GateDecision::Accept { distance } => outcome.distance = Some(distance),
        GateDecision::Bypass => outcome.gate_bypassed = true,
    }

    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            // jitter once; a second failure skips the correction
            let jitter = DMatrix::identity(s.nrows(), s.ncols()) * 1e-9;
            match (s + jitter).cholesky() {
                Some(c) => c,
                None => {
                    log::warn!("ekf update skipped: innovation covariance not invertible");
                    outcome.gate_bypassed = true;
                    return Ok((e.clone(), outcome));
                }
            }
        }
    };

    let k = &e.cov * h.transpose() * chol.inverse();
    let mut x = &e.x + &k * &nu;
    for &i in state_angles {
        x[i] = wrap_radians(x[i]);
    }
    // Joseph form keeps the covariance PSD under roundoff
    let ikh = DMatrix::identity(e.dim(), e.dim()) - &k * &h;
    let mut cov = &ikh * &e.cov * ikh.transpose() + &k * r * k.transpose();
    symmetrize(&mut cov);

    outcome.accepted = true;
    Ok((StateEstimate::new(x, cov, e.t), outcome))
}
