//! Ground-truth terrain (rolling-resistance and slope zones) and the
//! kinematic vehicle simulator that turns waypoint scripts into
//! ground-truth trajectories.

use crate::geo::{wrap_radians, Pose3};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("invalid terrain zone: {0}")]
    InvalidZone(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid waypoint script: {0}")]
    InvalidScript(String),
    #[error("dt {0} outside (0, 0.1] s")]
    InvalidTimeStep(f64),
}

/// Axis-aligned rectangle, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, WorldError> {
        if !(min_x < max_x && min_y < max_y) {
            return Err(WorldError::InvalidMap(format!(
                "degenerate extent [{min_x}, {min_y}] x [{max_x}, {max_y}]"
            )));
        }
        Ok(Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// Simple closed polygon in the odom x-y plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, WorldError> {
        if vertices.len() < 3 {
            return Err(WorldError::InvalidZone(format!(
                "polygon needs >= 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WorldError::InvalidZone("non-finite vertex".into()));
        }
        let poly = Polygon { vertices };
        if poly.area().abs() < 1e-12 {
            return Err(WorldError::InvalidZone("polygon has zero area".into()));
        }
        if !poly.is_simple() {
            return Err(WorldError::InvalidZone("polygon self-intersects".into()));
        }
        Ok(poly)
    }

    pub fn rectangle(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, WorldError> {
        Polygon::new(vec![
            [min_x, min_y],
            [max_x, min_y],
            [max_x, max_y],
            [min_x, max_y],
        ])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let [x1, y1] = self.vertices[i];
            let [x2, y2] = self.vertices[(i + 1) % n];
            acc += x1 * y2 - x2 * y1;
        }
        acc / 2.0
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // skip adjacent edges (they share an endpoint)
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let a = (self.vertices[i], self.vertices[(i + 1) % n]);
                let b = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a.0, a.1, b.0, b.1) {
                    return false;
                }
            }
        }
        true
    }

    /// Even-odd crossing test with half-open edge comparisons, so a point
    /// on an edge shared by two abutting polygons lies in exactly one.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for [x, y] in &self.vertices {
            min_x = min_x.min(*x);
            min_y = min_y.min(*y);
            max_x = max_x.max(*x);
            max_y = max_y.max(*y);
        }
        (min_x, min_y, max_x, max_y)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// One terrain region. Each layer of the ground-truth map reads only its
/// own attribute (resistance zones the coefficient, slope zones the grade).
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainZone {
    pub boundary: Polygon,
    pub resistance_coeff: f64,
    pub slope_deg: f64,
}

impl TerrainZone {
    pub fn new(boundary: Polygon, resistance_coeff: f64, slope_deg: f64) -> Result<Self, WorldError> {
        if !(resistance_coeff > 0.0 && resistance_coeff < 1.0) {
            return Err(WorldError::InvalidZone(format!(
                "resistance coefficient {resistance_coeff} outside (0, 1)"
            )));
        }
        if !(0.0..90.0).contains(&slope_deg) {
            return Err(WorldError::InvalidZone(format!(
                "slope {slope_deg} deg outside [0, 90)"
            )));
        }
        Ok(TerrainZone {
            boundary,
            resistance_coeff,
            slope_deg,
        })
    }
}

/// Ground-truth terrain: ordered zone lists per layer (first match wins)
/// over a bounded extent with per-layer defaults.
#[derive(Clone, Debug)]
pub struct GroundTruthMap {
    resistance_zones: Vec<TerrainZone>,
    slope_zones: Vec<TerrainZone>,
    pub default_resistance: f64,
    pub default_slope_deg: f64,
    pub extent: Rect,
}

impl GroundTruthMap {
    pub fn new(
        resistance_zones: Vec<TerrainZone>,
        slope_zones: Vec<TerrainZone>,
        default_resistance: f64,
        default_slope_deg: f64,
        extent: Rect,
    ) -> Result<Self, WorldError> {
        if !(default_resistance > 0.0 && default_resistance < 1.0) {
            return Err(WorldError::InvalidMap(format!(
                "default resistance {default_resistance} outside (0, 1)"
            )));
        }
        if !(0.0..90.0).contains(&default_slope_deg) {
            return Err(WorldError::InvalidMap(format!(
                "default slope {default_slope_deg} deg outside [0, 90)"
            )));
        }
        for (label, zones) in [("resistance", &resistance_zones), ("slope", &slope_zones)] {
            for (k, z) in zones.iter().enumerate() {
                let (min_x, min_y, max_x, max_y) = z.boundary.bounding_box();
                if !(extent.contains(min_x, min_y) && extent.contains(max_x, max_y)) {
                    return Err(WorldError::InvalidMap(format!(
                        "{label} zone {k} leaves the map extent"
                    )));
                }
            }
        }
        Ok(GroundTruthMap {
            resistance_zones,
            slope_zones,
            default_resistance,
            default_slope_deg,
            extent,
        })
    }

    pub fn resistance_zones(&self) -> &[TerrainZone] {
        &self.resistance_zones
    }

    pub fn slope_zones(&self) -> &[TerrainZone] {
        &self.slope_zones
    }

    /// Terrain attributes under `(x, y)`: first containing zone per layer
    /// in list order, defaults when no zone (or outside the extent).
    pub fn sample_ground(&self, x: f64, y: f64) -> (f64, f64) {
        let resistance = self
            .resistance_zones
            .iter()
            .find(|z| z.boundary.contains(x, y))
            .map_or(self.default_resistance, |z| z.resistance_coeff);
        let slope = self
            .slope_zones
            .iter()
            .find(|z| z.boundary.contains(x, y))
            .map_or(self.default_slope_deg, |z| z.slope_deg);
        (resistance, slope)
    }
}

/// Full kinematic vehicle state along a ground-truth trajectory.
/// Velocities, angular rates, and accelerations are body-frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub pose: Pose3,
    pub velocity: Vector3<f64>,
    pub angular_rate: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub t: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose3, t: f64) -> Self {
        VehicleState {
            pose,
            velocity: Vector3::zeros(),
            angular_rate: Vector3::zeros(),
            accel: Vector3::zeros(),
            t,
        }
    }

    /// Forward (body-x) speed, m/s.
    pub fn forward_speed(&self) -> f64 {
        self.velocity.x
    }
}

/// Waypoint-following script: the replacement for hand-driving the
/// machine around the site. `initial_yaw` of `None` aims the vehicle at
/// the first target waypoint.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointScript {
    pub waypoints: Vec<[f64; 2]>,
    pub cruise_speed: f64,
    pub max_yaw_rate: f64,
    pub max_accel: f64,
    pub time_cap: f64,
    pub initial_yaw: Option<f64>,
}

impl WaypointScript {
    pub fn new(
        waypoints: Vec<[f64; 2]>,
        cruise_speed: f64,
        max_yaw_rate: f64,
        max_accel: f64,
        time_cap: f64,
    ) -> Result<Self, WorldError> {
        if waypoints.len() < 2 {
            return Err(WorldError::InvalidScript(format!(
                "need >= 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        if !(cruise_speed > 0.0) {
            return Err(WorldError::InvalidScript(format!(
                "cruise speed {cruise_speed} must be > 0"
            )));
        }
        if !(max_yaw_rate >= 0.0 && max_accel > 0.0 && time_cap > 0.0) {
            return Err(WorldError::InvalidScript(
                "limits must be positive (max_yaw_rate may be 0)".into(),
            ));
        }
        Ok(WaypointScript {
            waypoints,
            cruise_speed,
            max_yaw_rate,
            max_accel,
            time_cap,
            initial_yaw: None,
        })
    }

    pub fn with_initial_yaw(mut self, yaw: f64) -> Self {
        self.initial_yaw = Some(yaw);
        self
    }
}

/// Speed/steering setpoints for one integration step. `target_yaw_rate`
/// commands the heading rate about world z.
#[derive(Clone, Copy, Debug)]
pub struct DriveCommand {
    pub target_speed: f64,
    pub target_yaw_rate: f64,
}

/// Slew limits applied by [`step_vehicle`].
#[derive(Clone, Copy, Debug)]
pub struct MotionLimits {
    pub max_yaw_rate: f64,
    pub max_accel: f64,
}

/// Advances the vehicle one step of `dt` seconds over the terrain.
///
/// Forward acceleration slews the speed toward `target_speed` bounded by
/// `max_accel`; the commanded heading rate is clamped to `max_yaw_rate`.
/// Horizontal position integrates the rotated body displacement
/// `R * (v dt + a dt^2 / 2)`, altitude climbs by `v_fwd dt sin(pitch)`,
/// and the new pitch is set from the slope layer under the vehicle
/// (positive pitch on sloped ground).
pub fn step_vehicle(
    map: &GroundTruthMap,
    s: &VehicleState,
    cmd: DriveCommand,
    limits: &MotionLimits,
    dt: f64,
) -> Result<VehicleState, WorldError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(WorldError::InvalidTimeStep(dt));
    }

    let ax = ((cmd.target_speed - s.velocity.x) / dt).clamp(-limits.max_accel, limits.max_accel);
    let accel = Vector3::new(ax, 0.0, 0.0);
    let yaw_rate = cmd
        .target_yaw_rate
        .clamp(-limits.max_yaw_rate, limits.max_yaw_rate);
    // body rates for a vehicle yawing about world z while pitched
    let (sp, cp) = s.pose.pitch.sin_cos();
    let angular_rate = Vector3::new(-sp * yaw_rate, 0.0, cp * yaw_rate);

    let r = s.pose.rotation();
    let disp = r * (s.velocity * dt + accel * (0.5 * dt * dt));
    let x = s.pose.x + disp.x;
    let y = s.pose.y + disp.y;
    let z = s.pose.z + s.velocity.x * dt * sp;

    // integrating the euler rates E(roll, pitch) * w with the body rates
    // above reduces to a pure yaw advance; roll stays level
    let yaw = wrap_radians(s.pose.yaw + yaw_rate * dt);
    let (_, slope_deg) = map.sample_ground(x, y);
    let pitch = slope_deg.to_radians();

    let velocity = Vector3::new(s.velocity.x + ax * dt, 0.0, 0.0);
    Ok(VehicleState {
        pose: Pose3::new(x, y, z, 0.0, pitch, yaw),
        velocity,
        angular_rate,
        accel,
        t: s.t + dt,
    })
}

/// A simulated trajectory. `truncated` marks scripts that hit the time
/// cap before reaching the final waypoint.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<VehicleState>,
    pub truncated: bool,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }
}

const WAYPOINT_REACHED_M: f64 = 1.0;
const HEADING_GAIN: f64 = 1.5;

/// Drives the waypoint script over the map with pure-pursuit style
/// steering. Deterministic: identical inputs give bit-identical output.
pub fn drive_waypoints(
    map: &GroundTruthMap,
    script: &WaypointScript,
    dt: f64,
) -> Result<Trajectory, WorldError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(WorldError::InvalidTimeStep(dt));
    }
    for (k, [x, y]) in script.waypoints.iter().enumerate() {
        if !map.extent.contains(*x, *y) {
            return Err(WorldError::InvalidScript(format!(
                "waypoint {k} ({x}, {y}) outside the map extent"
            )));
        }
    }

    let limits = MotionLimits {
        max_yaw_rate: script.max_yaw_rate,
        max_accel: script.max_accel,
    };
    let [x0, y0] = script.waypoints[0];
    let [x1, y1] = script.waypoints[1];
    let yaw0 = script
        .initial_yaw
        .map(wrap_radians)
        .unwrap_or_else(|| (y1 - y0).atan2(x1 - x0));
    let (_, slope0) = map.sample_ground(x0, y0);
    let mut state = VehicleState::at_rest(
        Pose3::new(x0, y0, 0.0, 0.0, slope0.to_radians(), yaw0),
        0.0,
    );

    let mut states = vec![state];
    let mut target_idx = 1usize;
    let mut truncated = false;
    let max_steps = (script.time_cap / dt).ceil() as usize;

    for _ in 0..max_steps {
        let [wx, wy] = script.waypoints[target_idx];
        let bearing = (wy - state.pose.y).atan2(wx - state.pose.x);
        let heading_err = wrap_radians(bearing - state.pose.yaw);
        let cmd = DriveCommand {
            target_speed: script.cruise_speed,
            target_yaw_rate: HEADING_GAIN * heading_err,
        };
        state = step_vehicle(map, &state, cmd, &limits, dt)?;
        states.push(state);

        while target_idx < script.waypoints.len() {
            let [wx, wy] = script.waypoints[target_idx];
            let dist = (wx - state.pose.x).hypot(wy - state.pose.y);
            if dist <= WAYPOINT_REACHED_M {
                target_idx += 1;
            } else {
                break;
            }
        }
        if target_idx == script.waypoints.len() {
            break;
        }
    }
    if target_idx < script.waypoints.len() {
        truncated = true;
    }

    Ok(Trajectory { states, truncated })
}
