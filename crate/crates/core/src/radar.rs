// SPDX-License-Identifier: Apache-2.0

//! 4D radar returns.
//!
//! Radial velocity is positive when range is increasing. For a static target
//! seen from a sensor moving with velocity `v` (sensor frame), the measured
//! radial velocity is `-d · v` with `d` the unit direction to the target.
//!
//! The radar sensor frame is the ego frame: camera extrinsics are expressed
//! relative to it and `sensor_from_world` doubles as `ego_from_world`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};

/// Returns closer than this to the sensor origin are rejected.
pub const MIN_RADAR_RANGE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadarError {
    #[error("radar point at range {0} m is within {MIN_RADAR_RANGE} m of the sensor")]
    TooClose(f64),
    #[error("radar point has non-finite fields")]
    NonFinite,
    #[error("timestamps must strictly increase ({prev} then {next})")]
    NonMonotonicTimestamps { prev: f64, next: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Vec3,
    pub radial_velocity: f64,
}

impl RadarPoint {
    pub fn new(position: Vec3, radial_velocity: f64) -> Result<Self, RadarError> {
        if !position.iter().all(|v| v.is_finite()) || !radial_velocity.is_finite() {
            return Err(RadarError::NonFinite);
        }
        let range = position.norm();
        if range <= MIN_RADAR_RANGE {
            return Err(RadarError::TooClose(range));
        }
        Ok(Self {
            position,
            radial_velocity,
        })
    }

    pub fn direction(&self) -> Vec3 {
        self.position / self.position.norm()
    }

    /// Residual of the static-world model `v_r + d · v_ego`.
    pub fn static_residual(&self, ego_velocity: &Vec3) -> f64 {
        self.radial_velocity + self.direction().dot(ego_velocity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarFrame {
    pub timestamp: f64,
    pub sensor_from_world: RigidTransform,
    pub points: Vec<RadarPoint>,
}

impl RadarFrame {
    pub fn new(timestamp: f64, sensor_from_world: RigidTransform, points: Vec<RadarPoint>) -> Self {
        Self {
            timestamp,
            sensor_from_world,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `world_from_ego` at this frame's timestamp.
    pub fn ego_pose(&self) -> RigidTransform {
        self.sensor_from_world.inverse()
    }
}

/// Checks the strictly-increasing timestamp invariant of a sequence.
pub fn check_monotonic(frames: &[RadarFrame]) -> Result<(), RadarError> {
    for w in frames.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(RadarError::NonMonotonicTimestamps {
                prev: w[0].timestamp,
                next: w[1].timestamp,
            });
        }
    }
    Ok(())
}
