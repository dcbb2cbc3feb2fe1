// SPDX-License-Identifier: Apache-2.0

//! Invertible time-conditioned deformation fields.
//!
//! A field `D_t` maps canonical points to their positions at normalised time
//! `t ∈ [0, 1]`; `D_t⁻¹` maps back. Moving a point observed at `t_i` to `t_j`
//! is `warp = D_{t_j} ∘ D_{t_i}⁻¹`.
//!
//! Two fields are provided: [`CouplingField`], a stack of affine coupling
//! layers with MLP conditioners and analytic inverse, and
//! [`RigidTrajectoryField`], a closed-form per-keyframe rigid baseline.

mod coupling;
mod loss;
mod rigid;
mod train;

pub use coupling::{CouplingField, CouplingLayer, FieldArchitecture, Normalization};
pub use loss::{
    loss_flow, loss_rad, radial_residual, warp_samples, LossWeights, MIN_RADAR_SEPARATION,
};
pub use rigid::{fit_rigid, fit_rigid_pair, RigidTrajectoryField};
pub use train::{fit, AdamConfig, AdamState, FitResult, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformError {
    #[error("sample {0} has no radial velocity")]
    MissingRadialVelocity(usize),
    #[error("sample {0} is within 0.1 m of the radar origin")]
    SampleAtRadarOrigin(usize),
    #[error("non-finite loss at iteration {iteration}: {loss}")]
    NonFiniteLoss { iteration: u32, loss: f64 },
    #[error("need at least one sample")]
    NoSamples,
    #[error("degenerate correspondences between t={t_i} and t={t_j}")]
    DegenerateCorrespondences { t_i: f64, t_j: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has {got} entries, field has {expected}")]
    ParameterCount { expected: usize, got: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
}

/// Maps seconds onto the normalised `[0, 1]` time axis of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
}

impl TimeRange {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn normalize(&self, seconds: f64) -> f64 {
        let span = self.end - self.start;
        if span > 0.0 {
            (seconds - self.start) / span
        } else {
            0.0
        }
    }

    pub fn seconds(&self, t: f64) -> f64 {
        self.start + t * (self.end - self.start)
    }
}

pub trait DeformationField {
    /// Canonical → time `t` (normalised).
    fn forward(&self, x: &Vec3, t: f64) -> Vec3;

    /// Time `t` → canonical.
    fn inverse(&self, y: &Vec3, t: f64) -> Vec3;

    fn time_range(&self) -> TimeRange;

    /// `forward(inverse(x, t_i), t_j)`.
    fn warp(&self, x: &Vec3, t_i: f64, t_j: f64) -> Vec3 {
        self.forward(&self.inverse(x, t_i), t_j)
    }

    /// Warp many points; times are normalised.
    fn warp_batch(&self, xs: &[Vec3], t_is: &[f64], t_js: &[f64]) -> Vec<Vec3> {
        xs.iter()
            .zip(t_is.iter().zip(t_js))
            .map(|(x, (a, b))| self.warp(x, *a, *b))
            .collect()
    }

    /// Warp in seconds.
    fn warp_seconds(&self, x: &Vec3, t_i: f64, t_j: f64) -> Vec3 {
        let tr = self.time_range();
        self.warp(x, tr.normalize(t_i), tr.normalize(t_j))
    }
}
