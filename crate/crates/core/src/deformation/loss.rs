// SPDX-License-Identifier: Apache-2.0

//! Scene-flow consistency and radial-displacement losses.

use serde::{Deserialize, Serialize};

use super::{DeformError, DeformationField};
use crate::flow_lift::SceneFlowSample;
use crate::geometry::Vec3;

/// Samples closer than this to the radar centre have no usable line of sight.
pub const MIN_RADAR_SEPARATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub flow: f64,
    pub rad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            flow: 1.0,
            rad: 0.5,
        }
    }
}

/// Predicted `x̂_tj` for every sample: `warp(x_ti, t_i → t_j)`.
pub fn warp_samples<F: DeformationField + ?Sized>(
    field: &F,
    samples: &[SceneFlowSample],
) -> Vec<Vec3> {
    let tr = field.time_range();
    let xs: Vec<Vec3> = samples.iter().map(|s| s.x_ti).collect();
    let ti: Vec<f64> = samples.iter().map(|s| tr.normalize(s.t_i)).collect();
    let tj: Vec<f64> = samples.iter().map(|s| tr.normalize(s.t_j)).collect();
    field.warp_batch(&xs, &ti, &tj)
}

/// `Σ ‖warp(x_ti) − x_tj‖²`, compared in frame-`t_j` coordinates.
pub fn loss_flow<F: DeformationField + ?Sized>(field: &F, samples: &[SceneFlowSample]) -> f64 {
    warp_samples(field, samples)
        .iter()
        .zip(samples)
        .map(|(y, s)| (y - s.x_tj).norm_squared())
        .sum()
}

/// Signed radial residual `F · u − v_r Δt` and the line-of-sight unit vector
/// `u`, for a predicted frame-`t_j` position `y`.
/// `F = T_j_to_i · y − x_ti` is the predicted flow in frame-`t_i` coordinates.
pub fn radial_residual(sample: &SceneFlowSample, y: &Vec3, radial_velocity: f64) -> (f64, Vec3) {
    let u = (sample.x_ti - sample.radar_origin).normalize();
    let f = sample.t_j_to_i.apply(y) - sample.x_ti;
    (f.dot(&u) - radial_velocity * sample.dt(), u)
}

/// `Σ |F · u − v_r Δt|` over samples that all carry a radial velocity.
pub fn loss_rad<F: DeformationField + ?Sized>(
    field: &F,
    samples: &[SceneFlowSample],
) -> Result<f64, DeformError> {
    for (k, s) in samples.iter().enumerate() {
        if s.radial_velocity.is_none() {
            return Err(DeformError::MissingRadialVelocity(k));
        }
        if (s.x_ti - s.radar_origin).norm() <= MIN_RADAR_SEPARATION {
            return Err(DeformError::SampleAtRadarOrigin(k));
        }
    }
    Ok(warp_samples(field, samples)
        .iter()
        .zip(samples)
        .map(|(y, s)| radial_residual(s, y, s.radial_velocity.unwrap()).0.abs())
        .sum())
}
