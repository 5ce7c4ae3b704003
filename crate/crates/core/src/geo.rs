//! Coordinate frames: angle wrapping, the WGS-84 UTM projection, and the
//! rigid transform between the UTM frame and the vehicle's world frame
//! (`odom`, origin at the first reported position).

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("latitude {0} deg outside supported UTM band [-84, 84]")]
    UnsupportedRegion(f64),
    #[error("UTM zone {0} outside [1, 60]")]
    InvalidZone(u8),
    #[error("point in zone {point} but frame anchored in zone {frame}")]
    FrameMismatch { point: String, frame: String },
}

/// Wraps into `(-pi, pi]`. Total over finite inputs; NaN propagates.
pub(crate) fn wrap_radians(a: f64) -> f64 {
    let mut r = a % TAU;
    if r <= -PI {
        r += TAU;
    } else if r > PI {
        r -= TAU;
    }
    r
}

/// Wraps an angle into the half-open interval `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> Result<f64, GeoError> {
    if !a.is_finite() {
        return Err(GeoError::NonFiniteAngle(a));
    }
    Ok(wrap_radians(a))
}

/// Position plus extrinsic roll-pitch-yaw attitude (rotation about fixed
/// axes, composed as `Rz(yaw) * Ry(pitch) * Rx(roll)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose3 {
    /// Builds a pose, wrapping each angle into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Pose3 {
            x,
            y,
            z,
            roll: wrap_radians(roll),
            pitch: wrap_radians(pitch),
            yaw: wrap_radians(yaw),
        }
    }

    pub fn origin() -> Self {
        Pose3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.roll, self.pitch, self.yaw)
    }
}

/// Fixed-axis roll-pitch-yaw rotation, `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cp * cy,
        cy * sr * sp - cr * sy,
        cr * cy * sp + sr * sy,
        cp * sy,
        cr * cy + sr * sp * sy,
        -cy * sr + cr * sp * sy,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// 4x4 rigid-body transform. Bottom row is exactly `[0, 0, 0, 1]` and the
/// rotation block stays orthonormal with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousTransform(Matrix4<f64>);

impl HomogeneousTransform {
    pub fn identity() -> Self {
        HomogeneousTransform(Matrix4::identity())
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        HomogeneousTransform(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Exact rigid inverse: `[R', -R' t]` with `R' = R^T`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        HomogeneousTransform::from_parts(rt, -(rt * self.translation()))
    }

    /// Applies the transform to a point.
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        let q = self.0 * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(q.x, q.y, q.z)
    }

    /// True when the rotation block is orthonormal with det +1 within `tol`
    /// and the bottom row is exactly `[0, 0, 0, 1]`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let bottom_ok = self.0[(3, 0)] == 0.0
            && self.0[(3, 1)] == 0.0
            && self.0[(3, 2)] == 0.0
            && self.0[(3, 3)] == 1.0;
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        bottom_ok && ortho <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

/// UTM grid zone: longitudinal zone number plus hemisphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UtmZone {
    pub number: u8,
    pub south: bool,
}

impl UtmZone {
    pub fn new(number: u8, south: bool) -> Result<Self, GeoError> {
        if !(1..=60).contains(&number) {
            return Err(GeoError::InvalidZone(number));
        }
        Ok(UtmZone { number, south })
    }

    /// Central meridian of the zone, degrees.
    pub fn central_meridian_deg(&self) -> f64 {
        f64::from(self.number) * 6.0 - 183.0
    }
}

impl std::fmt::Display for UtmZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.number, if self.south { 'S' } else { 'N' })
    }
}

/// A point in UTM coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtmPoint {
    pub easting: f64,
    pub northing: f64,
    pub altitude: f64,
    pub zone: UtmZone,
}

// WGS-84 ellipsoid and Transverse Mercator constants.
const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const TM_SCALE: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

fn ecc2() -> f64 {
    2.0 * WGS84_F - WGS84_F * WGS84_F
}

/// Zone number from the plain 6-degree rule (no Norway/Svalbard grid
/// exceptions; desk-scale sites never straddle them).
pub fn utm_zone_for(lon_deg: f64) -> u8 {
    let lon = normalize_lon(lon_deg);
    (((lon + 180.0) / 6.0).floor() as i32 + 1).clamp(1, 60) as u8
}

fn normalize_lon(lon_deg: f64) -> f64 {
    let mut l = (lon_deg + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l -= 360.0;
    }
    l
}

/// Projects geodetic coordinates to UTM with the standard truncated
/// Transverse Mercator series (0.9996 scale, 500 km false easting).
pub fn latlon_to_utm(lat_deg: f64, lon_deg: f64, alt: f64) -> Result<UtmPoint, GeoError> {
    if !lat_deg.is_finite() || !(-84.0..=84.0).contains(&lat_deg) {
        return Err(GeoError::UnsupportedRegion(lat_deg));
    }
    let lon_deg = normalize_lon(lon_deg);
    let zone = UtmZone::new(utm_zone_for(lon_deg), lat_deg < 0.0)?;

    let e2 = ecc2();
    let ep2 = e2 / (1.0 - e2);
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    let lon0 = zone.central_meridian_deg().to_radians();

    let (slat, clat) = lat.sin_cos();
    let n = WGS84_A / (1.0 - e2 * slat * slat).sqrt();
    let t = lat.tan() * lat.tan();
    let c = ep2 * clat * clat;
    let a = clat * (lon - lon0);

    let m = WGS84_A
        * ((1.0 - e2 / 4.0 - 3.0 * e2 * e2 / 64.0 - 5.0 * e2 * e2 * e2 / 256.0) * lat
            - (3.0 * e2 / 8.0 + 3.0 * e2 * e2 / 32.0 + 45.0 * e2 * e2 * e2 / 1024.0)
                * (2.0 * lat).sin()
            + (15.0 * e2 * e2 / 256.0 + 45.0 * e2 * e2 * e2 / 1024.0) * (4.0 * lat).sin()
            - (35.0 * e2 * e2 * e2 / 3072.0) * (6.0 * lat).sin());

    let easting = TM_SCALE
        * n
        * (a + (1.0 - t + c) * a.powi(3) / 6.0
            + (5.0 - 18.0 * t + t * t + 72.0 * c - 58.0 * ep2) * a.powi(5) / 120.0)
        + FALSE_EASTING;
    let mut northing = TM_SCALE
        * (m + n
            * lat.tan()
            * (a * a / 2.0
                + (5.0 - t + 9.0 * c + 4.0 * c * c) * a.powi(4) / 24.0
                + (61.0 - 58.0 * t + t * t + 600.0 * c - 330.0 * ep2) * a.powi(6) / 720.0));
    if zone.south {
        northing += FALSE_NORTHING_SOUTH;
    }

    Ok(UtmPoint {
        easting,
        northing,
        altitude: alt,
        zone,
    })
}

/// Inverse projection; returns `(lat_deg, lon_deg, alt)`.
pub fn utm_to_latlon(p: &UtmPoint) -> (f64, f64, f64) {
    let e2 = ecc2();
    let ep2 = e2 / (1.0 - e2);
    let x = p.easting - FALSE_EASTING;
    let y = if p.zone.south {
        p.northing - FALSE_NORTHING_SOUTH
    } else {
        p.northing
    };

    let e1 = (1.0 - (1.0 - e2).sqrt()) / (1.0 + (1.0 - e2).sqrt());
    let m = y / TM_SCALE;
    let mu = m / (WGS84_A * (1.0 - e2 / 4.0 - 3.0 * e2 * e2 / 64.0 - 5.0 * e2 * e2 * e2 / 256.0));

    let phi1 = mu
        + (3.0 * e1 / 2.0 - 27.0 * e1.powi(3) / 32.0) * (2.0 * mu).sin()
        + (21.0 * e1 * e1 / 16.0 - 55.0 * e1.powi(4) / 32.0) * (4.0 * mu).sin()
        + (151.0 * e1.powi(3) / 96.0) * (6.0 * mu).sin()
        + (1097.0 * e1.powi(4) / 512.0) * (8.0 * mu).sin();

    let (sphi, cphi) = phi1.sin_cos();
    let n1 = WGS84_A / (1.0 - e2 * sphi * sphi).sqrt();
    let r1 = WGS84_A * (1.0 - e2) / (1.0 - e2 * sphi * sphi).powf(1.5);
    let t1 = phi1.tan() * phi1.tan();
    let c1 = ep2 * cphi * cphi;
    let d = x / (n1 * TM_SCALE);

    let lat = phi1
        - (n1 * phi1.tan() / r1)
            * (d * d / 2.0
                - (5.0 + 3.0 * t1 + 10.0 * c1 - 4.0 * c1 * c1 - 9.0 * ep2) * d.powi(4) / 24.0
                + (61.0 + 90.0 * t1 + 298.0 * c1 + 45.0 * t1 * t1 - 252.0 * ep2 - 3.0 * c1 * c1)
                    * d.powi(6)
                    / 720.0);
    let lon = (d - (1.0 + 2.0 * t1 + c1) * d.powi(3) / 6.0
        + (5.0 - 2.0 * c1 + 28.0 * t1 - 3.0 * c1 * c1 + 8.0 * ep2 + 24.0 * t1 * t1) * d.powi(5)
            / 120.0)
        / cphi;

    (
        lat.to_degrees(),
        lon.to_degrees() + p.zone.central_meridian_deg(),
        p.altitude,
    )
}

/// Builds the odom->UTM transform from the vehicle's initial UTM-frame
/// pose: rotation from the initial roll/pitch/yaw, translation at the
/// first reported UTM position.
pub fn build_utm_transform(initial_utm_pose: &Pose3) -> HomogeneousTransform {
    HomogeneousTransform::from_parts(initial_utm_pose.rotation(), initial_utm_pose.position())
}

/// The vehicle's world frame, anchored at the first reported GPS position.
/// Converts between UTM points (single zone only) and odom coordinates.
///
/// The inverse map is evaluated as `R^T (p - t)`: subtracting the anchor
/// before rotating keeps round-trips at the sub-nanometer level despite
/// megameter UTM coordinates.
#[derive(Clone, Copy, Debug)]
pub struct OdomFrame {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    zone: UtmZone,
}

impl OdomFrame {
    pub fn new(initial_utm_pose: &Pose3, zone: UtmZone) -> Self {
        OdomFrame {
            rotation: initial_utm_pose.rotation(),
            translation: initial_utm_pose.position(),
            zone,
        }
    }

    pub fn zone(&self) -> UtmZone {
        self.zone
    }

    /// The odom -> UTM homogeneous transform.
    pub fn transform(&self) -> HomogeneousTransform {
        HomogeneousTransform::from_parts(self.rotation, self.translation)
    }

    /// Maps a UTM point into odom coordinates. Crossing a zone boundary is
    /// an error; construction sites are far smaller than a UTM zone.
    pub fn utm_to_odom(&self, p: &UtmPoint) -> Result<Vector3<f64>, GeoError> {
        if p.zone != self.zone {
            return Err(GeoError::FrameMismatch {
                point: p.zone.to_string(),
                frame: self.zone.to_string(),
            });
        }
        let rel = Vector3::new(p.easting, p.northing, p.altitude) - self.translation;
        Ok(self.rotation.transpose() * rel)
    }

    pub fn odom_to_utm(&self, q: Vector3<f64>) -> UtmPoint {
        let p = self.rotation * q + self.translation;
        UtmPoint {
            easting: p.x,
            northing: p.y,
            altitude: p.z,
            zone: self.zone,
        }
    }
}
