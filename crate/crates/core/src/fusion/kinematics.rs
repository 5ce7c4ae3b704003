//! The shared 15-state kinematic process model and its analytic Jacobian.
//!
//! Constant-rate / constant-acceleration assumption: position integrates
//! the rotated body displacement, Euler angles integrate the mapped body
//! rates, velocity integrates acceleration, and angular rate and
//! acceleration persist.

use super::{state_idx, FusionError, TransitionModel, STATE_ANGLE_INDICES, STATE_DIM};
use crate::geo::{rotation_matrix, wrap_radians};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::f64::consts::FRAC_PI_2;

const GIMBAL_EPS: f64 = 1e-6;

fn check_inputs(x: &DVector<f64>, dt: f64) -> Result<(), FusionError> {
    if x.len() != STATE_DIM {
        return Err(FusionError::DimensionMismatch {
            expected: STATE_DIM,
            got: x.len(),
        });
    }
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(FusionError::InvalidTimeStep(dt));
    }
    let pitch = x[state_idx::PITCH];
    if (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_EPS {
        return Err(FusionError::GimbalSingularity(pitch));
    }
    Ok(())
}

/// Maps body angular rates to Euler angle rates.
pub fn euler_rate_matrix(roll: f64, pitch: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let tp = sp / cp;
    Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    )
}

/// Advances the state by `dt` seconds.
pub fn process_model(x: &DVector<f64>, dt: f64) -> Result<DVector<f64>, FusionError> {
    check_inputs(x, dt)?;
    let roll = x[state_idx::ROLL];
    let pitch = x[state_idx::PITCH];
    let yaw = x[state_idx::YAW];
    let v = Vector3::new(x[state_idx::VX], x[state_idx::VY], x[state_idx::VZ]);
    let w = Vector3::new(x[state_idx::WX], x[state_idx::WY], x[state_idx::WZ]);
    let a = Vector3::new(x[state_idx::AX], x[state_idx::AY], x[state_idx::AZ]);

    let r = rotation_matrix(roll, pitch, yaw);
    let disp = r * (v * dt + a * (0.5 * dt * dt));
    let euler_dot = euler_rate_matrix(roll, pitch) * w;

    let mut out = x.clone();
    out[state_idx::X] += disp.x;
    out[state_idx::Y] += disp.y;
    out[state_idx::Z] += disp.z;
    out[state_idx::ROLL] = wrap_radians(roll + euler_dot.x * dt);
    out[state_idx::PITCH] = wrap_radians(pitch + euler_dot.y * dt);
    out[state_idx::YAW] = wrap_radians(yaw + euler_dot.z * dt);
    out[state_idx::VX] += a.x * dt;
    out[state_idx::VY] += a.y * dt;
    out[state_idx::VZ] += a.z * dt;
    Ok(out)
}

// Single-axis rotations and their angle derivatives; the full rotation is
// Rz(yaw) Ry(pitch) Rx(roll).
fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Partial derivatives of the rotation matrix with respect to each Euler
/// angle, as `(dR/droll, dR/dpitch, dR/dyaw)`.
pub(crate) fn rotation_partials(roll: f64, pitch: f64, yaw: f64) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let rx = rot_x(roll);
    let ry = rot_y(pitch);
    let rz = rot_z(yaw);
    (rz * ry * drot_x(roll), rz * drot_y(pitch) * rx, drot_z(yaw) * ry * rx)
}

fn euler_rate_partials(roll: f64, pitch: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let tp = sp / cp;
    let sec2 = 1.0 / (cp * cp);
    let de_droll = Matrix3::new(
        0.0,
        cr * tp,
        -sr * tp,
        0.0,
        -sr,
        -cr,
        0.0,
        cr / cp,
        -sr / cp,
    );
    let de_dpitch = Matrix3::new(
        0.0,
        sr * sec2,
        cr * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        sr * sp * sec2,
        cr * sp * sec2,
    );
    (de_droll, de_dpitch)
}

/// Analytic Jacobian `df/dx` of [`process_model`] at `x`.
pub fn process_jacobian(x: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>, FusionError> {
    check_inputs(x, dt)?;
    let roll = x[state_idx::ROLL];
    let pitch = x[state_idx::PITCH];
    let yaw = x[state_idx::YAW];
    let v = Vector3::new(x[state_idx::VX], x[state_idx::VY], x[state_idx::VZ]);
    let w = Vector3::new(x[state_idx::WX], x[state_idx::WY], x[state_idx::WZ]);
    let a = Vector3::new(x[state_idx::AX], x[state_idx::AY], x[state_idx::AZ]);

    let r = rotation_matrix(roll, pitch, yaw);
    let u = v * dt + a * (0.5 * dt * dt);
    let (dr_droll, dr_dpitch, dr_dyaw) = rotation_partials(roll, pitch, yaw);
    let e = euler_rate_matrix(roll, pitch);
    let (de_droll, de_dpitch) = euler_rate_partials(roll, pitch);

    let mut jac = DMatrix::identity(STATE_DIM, STATE_DIM);

    // position wrt angles: (dR/dangle) u
    let cols = [dr_droll * u, dr_dpitch * u, dr_dyaw * u];
    for (k, col) in cols.iter().enumerate() {
        for row in 0..3 {
            jac[(row, 3 + k)] = col[row];
        }
    }
    // position wrt velocity and acceleration: R dt, R dt^2/2
    for row in 0..3 {
        for col in 0..3 {
            jac[(row, 6 + col)] = r[(row, col)] * dt;
            jac[(row, 12 + col)] = r[(row, col)] * (0.5 * dt * dt);
        }
    }
    // angles wrt roll/pitch: dt (dE/dangle) w
    let dcols = [de_droll * w, de_dpitch * w];
    for (k, col) in dcols.iter().enumerate() {
        for row in 0..3 {
            jac[(3 + row, 3 + k)] += col[row] * dt;
        }
    }
    // angles wrt body rates: E dt
    for row in 0..3 {
        for col in 0..3 {
            jac[(3 + row, 9 + col)] = e[(row, col)] * dt;
        }
    }
    // velocity wrt acceleration
    for k in 0..3 {
        jac[(6 + k, 12 + k)] = dt;
    }
    Ok(jac)
}

/// The 15-state vehicle kinematics as a [`TransitionModel`].
#[derive(Clone, Copy, Debug, Default)]
pub struct VehicleKinematics;

impl TransitionModel for VehicleKinematics {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn step(&self, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>, FusionError> {
        process_model(x, dt)
    }

    fn jacobian(&self, x: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>, FusionError> {
        process_jacobian(x, dt)
    }

    fn angle_indices(&self) -> &[usize] {
        &STATE_ANGLE_INDICES
    }
}
