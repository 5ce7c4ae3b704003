//! Deterministic sensor-fusion localization and terrain-mapping toolkit.
//!
//! The crate simulates a ground vehicle driving over a construction-site
//! style terrain map, generates noisy GPS/IMU/wheel-encoder readings with
//! scheduled GPS dropouts, fuses them with an EKF or UKF over a shared
//! 15-dimensional kinematic state, and plots the terrain attributes seen
//! at the true position into a multi-layer grid map addressed by the
//! *estimated* position. Localization quality is scored as per-axis RMSE
//! and the map as a mispredicted-cell rate.
//!
//! Modules mirror the pipeline:
//! - [`geo`]: angles, UTM projection, and the UTM <-> odom rigid transform
//! - [`world`]: ground-truth terrain map and waypoint-following simulator
//! - [`sensors`]: seeded synthetic sensor models and stream merging
//! - [`fusion`]: EKF/UKF estimation core with Mahalanobis gating
//! - [`gridmap`]: two-layer 1 m grid map, realtime plotter, serialization
//! - [`metrics`]: trajectory RMSE and grid-map error rates
//! - [`config`], [`recording`], [`study`]: scenario files, binary sensor
//!   recordings for bit-exact replay, and the end-to-end study runner

pub mod config;
pub mod fusion;
pub mod geo;
pub mod gridmap;
pub mod metrics;
pub mod recording;
pub mod sensors;
pub mod study;
pub mod world;
