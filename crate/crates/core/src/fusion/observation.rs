//! Measurement models: GPS position (with lever arm), the 9-component IMU
//! bundle, and forward-speed wheel encoders. All are linear in the state
//! apart from the rotated GPS mount offset, so the jacobians are exact.

use super::kinematics::rotation_partials;
use super::{state_idx, ObservationModel, STATE_DIM};
use crate::geo::rotation_matrix;
use crate::sensors::ReadingKind;
use nalgebra::{DMatrix, DVector, Vector3};

const IMU_ANGLE_COMPONENTS: [usize; 3] = [0, 1, 2];

/// Vehicle measurement model for one reading kind.
#[derive(Clone, Debug, PartialEq)]
pub enum VehicleObservation {
    Gps { mount_offset: Vector3<f64> },
    Imu,
    Encoder,
}

impl VehicleObservation {
    pub fn for_reading(kind: &ReadingKind) -> Self {
        match kind {
            ReadingKind::GpsPosition { mount_offset } => VehicleObservation::Gps {
                mount_offset: *mount_offset,
            },
            ReadingKind::ImuBundle => VehicleObservation::Imu,
            ReadingKind::EncoderVelocity => VehicleObservation::Encoder,
        }
    }
}

impl ObservationModel for VehicleObservation {
    fn dim(&self) -> usize {
        match self {
            VehicleObservation::Gps { .. } => 3,
            VehicleObservation::Imu => 9,
            VehicleObservation::Encoder => 1,
        }
    }

    fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            VehicleObservation::Gps { mount_offset } => {
                let r = rotation_matrix(x[state_idx::ROLL], x[state_idx::PITCH], x[state_idx::YAW]);
                let antenna = Vector3::new(x[0], x[1], x[2]) + r * mount_offset;
                DVector::from_column_slice(&[antenna.x, antenna.y, antenna.z])
            }
            VehicleObservation::Imu => {
                // orientation, body angular rate, body acceleration
                let mut z = DVector::zeros(9);
                for k in 0..3 {
                    z[k] = x[state_idx::ROLL + k];
                    z[3 + k] = x[state_idx::WX + k];
                    z[6 + k] = x[state_idx::AX + k];
                }
                z
            }
            VehicleObservation::Encoder => DVector::from_element(1, x[state_idx::VX]),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            VehicleObservation::Gps { mount_offset } => {
                let mut h = DMatrix::zeros(3, STATE_DIM);
                for k in 0..3 {
                    h[(k, k)] = 1.0;
                }
                let (dr_droll, dr_dpitch, dr_dyaw) = rotation_partials(
                    x[state_idx::ROLL],
                    x[state_idx::PITCH],
                    x[state_idx::YAW],
                );
                let cols = [
                    dr_droll * mount_offset,
                    dr_dpitch * mount_offset,
                    dr_dyaw * mount_offset,
                ];
                for (k, col) in cols.iter().enumerate() {
                    for row in 0..3 {
                        h[(row, 3 + k)] = col[row];
                    }
                }
                h
            }
            VehicleObservation::Imu => {
                let mut h = DMatrix::zeros(9, STATE_DIM);
                for k in 0..3 {
                    h[(k, state_idx::ROLL + k)] = 1.0;
                    h[(3 + k, state_idx::WX + k)] = 1.0;
                    h[(6 + k, state_idx::AX + k)] = 1.0;
                }
                h
            }
            VehicleObservation::Encoder => {
                let mut h = DMatrix::zeros(1, STATE_DIM);
                h[(0, state_idx::VX)] = 1.0;
                h
            }
        }
    }

    fn angle_indices(&self) -> &[usize] {
        match self {
            VehicleObservation::Imu => &IMU_ANGLE_COMPONENTS,
            _ => &[],
        }
    }
}

/// Predicted measurement for a reading kind at state `x`.
pub fn measurement_model(kind: &ReadingKind, x: &DVector<f64>) -> DVector<f64> {
    VehicleObservation::for_reading(kind).predict(x)
}
